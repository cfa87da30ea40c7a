#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sddr/data_frame.hpp"
#include "sddr/model.hpp"
#include "sddr/trainer.hpp"

namespace sddr::cli {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RunConfig {
  std::filesystem::path csv_path;  // resolved against the config file's directory
  std::string response;
  std::string response_transform = "none";
  std::string family = "normal";
  std::vector<std::pair<std::string, std::string>> formulas;
  std::vector<std::vector<int>> mapping;
  std::map<std::string, NetworkSpec> networks;
  TrainConfig train;
  int cv_folds = 5;
  int n_ensemble = 5;
  bool mixture_predictions = false;
  PenaltyOptions penalty;
  OrthogOptions orthog;
  std::filesystem::path output_dir = "sddr_out";
  std::uint64_t seed = 0;
};

RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);

ModelSpec make_spec(const RunConfig& cfg);

// Every data column the formulas reference.
std::vector<std::string> referenced_columns(const ModelSpec& spec);

struct LoadedData {
  DataFrame frame;
  Eigen::VectorXd y;
  std::size_t dropped = 0;
};

// Reads the CSV, drops rows with missing values in used columns and applies
// the response transform.
LoadedData load_data(const RunConfig& cfg, const ModelSpec& spec);

}  // namespace sddr::cli
