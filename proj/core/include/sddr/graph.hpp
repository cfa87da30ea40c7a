#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace sddr {

class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Activation { Linear, Relu, Tanh };

Activation parse_activation(std::string_view name);
std::string_view activation_name(Activation a);

struct LayerSpec {
  enum class Kind { Dense, Dropout };
  Kind kind = Kind::Dense;
  int units = 0;
  Activation activation = Activation::Linear;
  bool use_bias = true;
  double rate = 0.0;

  static LayerSpec dense(int units, Activation act = Activation::Linear, bool use_bias = true) {
    return {Kind::Dense, units, act, use_bias, 0.0};
  }
  static LayerSpec dropout(double rate) { return {Kind::Dropout, 0, Activation::Linear, false, rate}; }
  bool operator==(const LayerSpec&) const = default;
};

struct NetworkSpec {
  std::string name;
  std::vector<std::string> inputs;
  std::vector<LayerSpec> layers;

  int input_width() const { return static_cast<int>(inputs.size()); }
  // Units of the final Dense layer.
  int output_width() const;
  // Width of the features entering the final layer.
  int penultimate_width() const;
  // Throws GraphError unless the final layer is Dense(linear) and widths are valid.
  void validate() const;
};

struct Parameter {
  std::string name;
  Eigen::MatrixXd value;
  Eigen::MatrixXd grad;
};

// All trainable tensors of a model: network weights and structured
// coefficients (stored as column vectors). Shapes are fixed once added.
class ParamStore {
 public:
  std::size_t add(std::string name, Eigen::MatrixXd init);
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  std::optional<std::size_t> find(std::string_view name) const;
  std::size_t size() const { return params_.size(); }
  void zero_grad();
  std::vector<Eigen::MatrixXd> snapshot() const;
  void restore(const std::vector<Eigen::MatrixXd>& values);

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Constant self-adjoint linear map applied to the features entering the final
// layer (the orthogonalization cell plugs in here).
using FeatureMap = std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>;

// Intermediates recorded by Network::forward for one backward pass.
struct Tape {
  struct Record {
    Eigen::MatrixXd input;
    Eigen::MatrixXd output;  // activation output (Dense) or the dropout mask (Dropout)
  };
  std::vector<Record> records;
  const FeatureMap* penultimate_map = nullptr;
  bool consumed = false;
};

class Network {
 public:
  // Registers Glorot-uniform kernels and zero biases under "<prefix>/dense_<i>/...".
  Network(NetworkSpec spec, ParamStore& store, const std::string& prefix, std::uint64_t seed);
  // Rebinds to parameters that already exist in the store (bundle loading).
  Network(NetworkSpec spec, const ParamStore& store, const std::string& prefix);

  const NetworkSpec& spec() const { return spec_; }

  // Evaluates the network on a batch (rows = observations). Dropout is active
  // only when training, with masks derived from seed. The tape is filled when given.
  Eigen::MatrixXd forward(const ParamStore& params, const Eigen::MatrixXd& batch, bool training, std::uint64_t seed,
                          Tape* tape = nullptr, const FeatureMap* penultimate_map = nullptr) const;

  // Accumulates d(sum(output .* output_grad))/dW into params[...].grad.
  void backward(Tape& tape, const Eigen::MatrixXd& output_grad, ParamStore& params) const;

  // Inference-mode features entering the final layer (after the map, if any).
  Eigen::MatrixXd penultimate(const ParamStore& params, const Eigen::MatrixXd& batch,
                              const FeatureMap* penultimate_map = nullptr) const;

  struct DenseSlots {
    std::size_t kernel;
    std::optional<std::size_t> bias;
  };
  const std::vector<std::optional<DenseSlots>>& slots() const { return slots_; }

 private:
  Eigen::MatrixXd run(const ParamStore& params, const Eigen::MatrixXd& batch, bool training, std::uint64_t seed,
                      Tape* tape, const FeatureMap* map, bool stop_before_last) const;

  NetworkSpec spec_;
  std::vector<std::optional<DenseSlots>> slots_;
};

}  // namespace sddr
