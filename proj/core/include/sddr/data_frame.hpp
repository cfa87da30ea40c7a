#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sddr {

// Missing columns, unparseable files, unseen factor levels.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Column {
  std::string name;
  bool is_factor = false;
  std::vector<double> numeric;       // NaN marks a missing value
  std::vector<std::string> labels;   // factor labels; empty string marks a missing value
};

class DataFrame {
 public:
  void add_numeric(std::string name, std::vector<double> values);
  void add_factor(std::string name, std::vector<std::string> labels);

  bool has(std::string_view name) const;
  const Column& column(std::string_view name) const;
  std::span<const double> numeric(std::string_view name) const;
  std::size_t rows() const { return rows_; }
  const std::vector<Column>& columns() const { return columns_; }

  DataFrame subset(std::span<const std::size_t> rows) const;
  // Drops rows with a missing value in any of the named columns.
  DataFrame drop_missing(const std::vector<std::string>& names, std::size_t* dropped = nullptr) const;

 private:
  void check_length(std::size_t n, const std::string& name);
  std::vector<Column> columns_;
  std::size_t rows_ = 0;
};

// Header row, comma separated, '.' decimal point, "NA" or empty for missing.
// Columns whose non-missing values all parse as numbers become numeric;
// everything else is a factor.
DataFrame read_csv(const std::filesystem::path& path);
DataFrame parse_csv(std::string_view text);

// Sorted distinct non-missing labels of a factor column.
std::vector<std::string> factor_levels(const Column& column);

}  // namespace sddr
