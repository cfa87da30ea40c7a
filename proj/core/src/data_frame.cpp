#include "sddr/data_frame.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace sddr {
namespace {

std::vector<std::string> split_record(std::string_view line, std::size_t line_no) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(field));
      field.clear();
    } else {
      field += c;
    }
  }
  if (quoted) throw DataError("unterminated quote on line " + std::to_string(line_no));
  out.push_back(std::move(field));
  return out;
}

bool is_missing(std::string_view s) { return s.empty() || s == "NA"; }

bool parse_double(std::string_view s, double& out) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

}  // namespace

void DataFrame::check_length(std::size_t n, const std::string& name) {
  if (has(name)) throw DataError("duplicate column '" + name + "'");
  if (!columns_.empty() && n != rows_)
    throw DataError("column '" + name + "' has " + std::to_string(n) + " rows, expected " + std::to_string(rows_));
  rows_ = n;
}

void DataFrame::add_numeric(std::string name, std::vector<double> values) {
  check_length(values.size(), name);
  columns_.push_back(Column{std::move(name), false, std::move(values), {}});
}

void DataFrame::add_factor(std::string name, std::vector<std::string> labels) {
  check_length(labels.size(), name);
  columns_.push_back(Column{std::move(name), true, {}, std::move(labels)});
}

bool DataFrame::has(std::string_view name) const {
  return std::any_of(columns_.begin(), columns_.end(), [&](const Column& c) { return c.name == name; });
}

const Column& DataFrame::column(std::string_view name) const {
  for (const auto& c : columns_)
    if (c.name == name) return c;
  throw DataError("missing column '" + std::string(name) + "'");
}

std::span<const double> DataFrame::numeric(std::string_view name) const {
  const Column& c = column(name);
  if (c.is_factor) throw DataError("column '" + std::string(name) + "' is categorical, expected numeric");
  return c.numeric;
}

DataFrame DataFrame::subset(std::span<const std::size_t> rows) const {
  DataFrame out;
  for (const auto& c : columns_) {
    Column s{c.name, c.is_factor, {}, {}};
    for (std::size_t r : rows) {
      if (r >= rows_) throw DataError("row index out of range");
      if (c.is_factor)
        s.labels.push_back(c.labels[r]);
      else
        s.numeric.push_back(c.numeric[r]);
    }
    out.columns_.push_back(std::move(s));
  }
  out.rows_ = rows.size();
  return out;
}

DataFrame DataFrame::drop_missing(const std::vector<std::string>& names, std::size_t* dropped) const {
  std::vector<const Column*> used;
  for (const auto& n : names) used.push_back(&column(n));
  std::vector<std::size_t> keep;
  for (std::size_t r = 0; r < rows_; ++r) {
    const bool missing = std::any_of(used.begin(), used.end(), [&](const Column* c) {
      return c->is_factor ? c->labels[r].empty() : std::isnan(c->numeric[r]);
    });
    if (!missing) keep.push_back(r);
  }
  if (dropped) *dropped = rows_ - keep.size();
  return subset(keep);
}

DataFrame parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> records;
  std::size_t line_no = 0, pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    ++line_no;
    pos = end + 1;
    if (line.empty()) continue;
    records.push_back(split_record(line, line_no));
  }
  if (records.empty()) throw DataError("CSV has no header row");
  const auto& header = records.front();
  const std::size_t ncol = header.size();
  for (std::size_t r = 1; r < records.size(); ++r)
    if (records[r].size() != ncol)
      throw DataError("CSV record " + std::to_string(r) + " has " + std::to_string(records[r].size()) +
                      " fields, expected " + std::to_string(ncol));

  DataFrame df;
  const std::size_t n = records.size() - 1;
  for (std::size_t c = 0; c < ncol; ++c) {
    std::vector<double> values(n);
    bool numeric = true;
    for (std::size_t r = 0; r < n && numeric; ++r) {
      const std::string& s = records[r + 1][c];
      if (is_missing(s))
        values[r] = std::numeric_limits<double>::quiet_NaN();
      else
        numeric = parse_double(s, values[r]);
    }
    if (numeric) {
      df.add_numeric(header[c], std::move(values));
    } else {
      std::vector<std::string> labels(n);
      for (std::size_t r = 0; r < n; ++r) labels[r] = is_missing(records[r + 1][c]) ? "" : records[r + 1][c];
      df.add_factor(header[c], std::move(labels));
    }
  }
  return df;
}

DataFrame read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str());
}

std::vector<std::string> factor_levels(const Column& column) {
  std::set<std::string> levels;
  for (const auto& l : column.labels)
    if (!l.empty()) levels.insert(l);
  return {levels.begin(), levels.end()};
}

}  // namespace sddr
