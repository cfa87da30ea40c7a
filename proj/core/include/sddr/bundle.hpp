#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "sddr/model.hpp"

namespace sddr {

// Malformed, truncated or incompatible model bundle.
class BundleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kBundleSchemaVersion = 1;

// A fitted model as one JSON document: formulas, family, layer stacks, the
// design recipes (knots, constraint transforms, penalties, smoothing weights,
// factor levels, ranges) and every weight as base64 little-endian f64.
// Training data is not stored.
std::string save_bundle_string(const Model& model);
Model load_bundle_string(std::string_view text);

void save_bundle(const Model& model, const std::filesystem::path& path);
Model load_bundle(const std::filesystem::path& path);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

}  // namespace sddr
