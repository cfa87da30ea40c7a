#include "sddr/graph.hpp"

#include <cmath>
#include <random>

#include "sddr/random.hpp"

namespace sddr {

Activation parse_activation(std::string_view name) {
  if (name == "linear") return Activation::Linear;
  if (name == "relu") return Activation::Relu;
  if (name == "tanh") return Activation::Tanh;
  throw GraphError("unknown activation '" + std::string(name) + "'");
}

std::string_view activation_name(Activation a) {
  switch (a) {
    case Activation::Linear: return "linear";
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
  }
  return "linear";
}

int NetworkSpec::output_width() const {
  return layers.empty() ? 0 : layers.back().units;
}

int NetworkSpec::penultimate_width() const {
  int width = input_width();
  for (std::size_t i = 0; i + 1 < layers.size(); ++i)
    if (layers[i].kind == LayerSpec::Kind::Dense) width = layers[i].units;
  return width;
}

void NetworkSpec::validate() const {
  if (inputs.empty()) throw GraphError("network '" + name + "' has no inputs");
  if (layers.empty()) throw GraphError("network '" + name + "' has no layers");
  for (const auto& l : layers) {
    if (l.kind == LayerSpec::Kind::Dense && l.units < 1) throw GraphError("network '" + name + "': units must be >= 1");
    if (l.kind == LayerSpec::Kind::Dropout && !(l.rate >= 0.0 && l.rate < 1.0))
      throw GraphError("network '" + name + "': dropout rate must lie in [0, 1)");
  }
  const auto& last = layers.back();
  if (last.kind != LayerSpec::Kind::Dense || last.activation != Activation::Linear)
    throw GraphError("network '" + name + "': final layer must be Dense with linear activation");
}

std::size_t ParamStore::add(std::string name, Eigen::MatrixXd init) {
  if (index_.count(name)) throw GraphError("duplicate parameter '" + name + "'");
  const std::size_t i = params_.size();
  index_.emplace(name, i);
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(init.rows(), init.cols());
  params_.push_back({std::move(name), std::move(init), std::move(grad)});
  return i;
}

std::optional<std::size_t> ParamStore::find(std::string_view name) const {
  const auto it = index_.find(std::string(name));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.grad.setZero();
}

std::vector<Eigen::MatrixXd> ParamStore::snapshot() const {
  std::vector<Eigen::MatrixXd> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.value);
  return out;
}

void ParamStore::restore(const std::vector<Eigen::MatrixXd>& values) {
  if (values.size() != params_.size()) throw GraphError("snapshot does not match parameter store");
  for (std::size_t i = 0; i < values.size(); ++i) params_[i].value = values[i];
}

Network::Network(NetworkSpec spec, ParamStore& store, const std::string& prefix, std::uint64_t seed)
    : spec_(std::move(spec)) {
  spec_.validate();
  std::mt19937_64 rng(seed);
  int width = spec_.input_width();
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const auto& l = spec_.layers[i];
    if (l.kind != LayerSpec::Kind::Dense) {
      slots_.emplace_back(std::nullopt);
      continue;
    }
    const double limit = std::sqrt(6.0 / static_cast<double>(width + l.units));
    Eigen::MatrixXd W(width, l.units);
    for (Eigen::Index c = 0; c < W.cols(); ++c)
      for (Eigen::Index r = 0; r < W.rows(); ++r) W(r, c) = (2.0 * uniform01(rng) - 1.0) * limit;
    const std::string base = prefix + "/dense_" + std::to_string(i);
    DenseSlots s{store.add(base + "/kernel", std::move(W)), std::nullopt};
    if (l.use_bias) s.bias = store.add(base + "/bias", Eigen::MatrixXd::Zero(1, l.units));
    slots_.emplace_back(s);
    width = l.units;
  }
}

Network::Network(NetworkSpec spec, const ParamStore& store, const std::string& prefix) : spec_(std::move(spec)) {
  spec_.validate();
  int width = spec_.input_width();
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const auto& l = spec_.layers[i];
    if (l.kind != LayerSpec::Kind::Dense) {
      slots_.emplace_back(std::nullopt);
      continue;
    }
    const std::string base = prefix + "/dense_" + std::to_string(i);
    const auto kernel = store.find(base + "/kernel");
    if (!kernel || store[*kernel].value.rows() != width || store[*kernel].value.cols() != l.units)
      throw GraphError("missing or misshapen parameter '" + base + "/kernel'");
    DenseSlots s{*kernel, std::nullopt};
    if (l.use_bias) {
      s.bias = store.find(base + "/bias");
      if (!s.bias) throw GraphError("missing parameter '" + base + "/bias'");
    }
    slots_.emplace_back(s);
    width = l.units;
  }
}

Eigen::MatrixXd Network::run(const ParamStore& params, const Eigen::MatrixXd& batch, bool training,
                             std::uint64_t seed, Tape* tape, const FeatureMap* map, bool stop_before_last) const {
  if (batch.cols() != spec_.input_width())
    throw GraphError("network '" + spec_.name + "' expects " + std::to_string(spec_.input_width()) +
                     " input columns, got " + std::to_string(batch.cols()));
  if (!batch.allFinite()) throw GraphError("network '" + spec_.name + "' received non-finite input");
  if (tape) {
    tape->records.clear();
    tape->penultimate_map = map;
    tape->consumed = false;
  }
  Eigen::MatrixXd a = batch;
  const std::size_t last = spec_.layers.size() - 1;
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const auto& l = spec_.layers[i];
    if (i == last) {
      if (map) a = (*map)(a);
      if (stop_before_last) return a;
    }
    if (l.kind == LayerSpec::Kind::Dropout) {
      Eigen::MatrixXd mask = Eigen::MatrixXd::Ones(a.rows(), a.cols());
      if (training && l.rate > 0.0) {
        std::mt19937_64 rng(mix_seed(seed, i));
        const double keep = 1.0 - l.rate;
        for (Eigen::Index c = 0; c < mask.cols(); ++c)
          for (Eigen::Index r = 0; r < mask.rows(); ++r) mask(r, c) = uniform01(rng) < keep ? 1.0 / keep : 0.0;
      }
      Eigen::MatrixXd out = a.cwiseProduct(mask);
      if (tape) tape->records.push_back({std::move(a), std::move(mask)});
      a = std::move(out);
      continue;
    }
    const auto& s = *slots_[i];
    Eigen::MatrixXd z = a * params[s.kernel].value;
    if (s.bias) z.rowwise() += params[*s.bias].value.row(0);
    switch (l.activation) {
      case Activation::Linear: break;
      case Activation::Relu: z = z.cwiseMax(0.0); break;
      case Activation::Tanh: z = z.array().tanh(); break;
    }
    if (tape) tape->records.push_back({std::move(a), z});
    a = std::move(z);
  }
  return a;
}

Eigen::MatrixXd Network::forward(const ParamStore& params, const Eigen::MatrixXd& batch, bool training,
                                 std::uint64_t seed, Tape* tape, const FeatureMap* penultimate_map) const {
  return run(params, batch, training, seed, tape, penultimate_map, false);
}

Eigen::MatrixXd Network::penultimate(const ParamStore& params, const Eigen::MatrixXd& batch,
                                     const FeatureMap* penultimate_map) const {
  return run(params, batch, false, 0, nullptr, penultimate_map, true);
}

void Network::backward(Tape& tape, const Eigen::MatrixXd& output_grad, ParamStore& params) const {
  if (tape.consumed) throw GraphError("tape for network '" + spec_.name + "' was already consumed");
  if (tape.records.size() != spec_.layers.size()) throw GraphError("tape does not match network '" + spec_.name + "'");
  tape.consumed = true;
  Eigen::MatrixXd g = output_grad;
  const std::size_t last = spec_.layers.size() - 1;
  for (std::size_t k = spec_.layers.size(); k-- > 0;) {
    const auto& l = spec_.layers[k];
    auto& rec = tape.records[k];
    if (l.kind == LayerSpec::Kind::Dropout) {
      g = g.cwiseProduct(rec.output);
    } else {
      switch (l.activation) {
        case Activation::Linear: break;
        case Activation::Relu: g = g.cwiseProduct((rec.output.array() > 0.0).cast<double>().matrix()); break;
        case Activation::Tanh: g = g.cwiseProduct((1.0 - rec.output.array().square()).matrix()); break;
      }
      const auto& s = *slots_[k];
      params[s.kernel].grad.noalias() += rec.input.transpose() * g;
      if (s.bias) params[*s.bias].grad += g.colwise().sum();
      if (k > 0 || tape.penultimate_map) g = (g * params[s.kernel].value.transpose()).eval();
    }
    if (k == last && tape.penultimate_map) g = (*tape.penultimate_map)(g);
  }
}

}  // namespace sddr
