#pragma once

// Delimited numeric text tables: comma- or whitespace-separated, optional
// header line, '#' comments.

#include "prenet/model.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace prenet {

struct Table {
  std::vector<std::string> header;  // empty when the input had none
  Matrix values;                    // rows = observations
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_cells(std::string_view line) {
  std::vector<std::string> cells;
  if (line.find(',') != std::string_view::npos) {
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      cells.emplace_back(trim(line.substr(start, comma == std::string_view::npos ? comma : comma - start)));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
  } else {
    std::istringstream is{std::string(line)};
    std::string cell;
    while (is >> cell) cells.push_back(cell);
  }
  return cells;
}

inline bool parse_number(std::string_view cell, double& out) {
  if (cell.empty()) return false;
  if (cell.front() == '+') cell.remove_prefix(1);
  const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), out);
  return res.ec == std::errc() && res.ptr == cell.data() + cell.size() && std::isfinite(out);
}

}  // namespace detail

// The first content line is a header when any of its cells is not a number.
inline Table read_table(std::istream& in, const std::string& source = "<input>") {
  Table t;
  std::vector<std::vector<double>> rows;
  std::string line;
  int line_no = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view body = detail::trim(line);
    if (body.empty() || body.front() == '#') continue;
    const auto cells = detail::split_cells(body);
    std::vector<double> row(cells.size());
    bool numeric = true;
    std::size_t bad = 0;
    for (std::size_t c = 0; c < cells.size() && numeric; ++c)
      if (!detail::parse_number(cells[c], row[c])) {
        numeric = false;
        bad = c;
      }
    if (!numeric) {
      if (first) {
        t.header = cells;
        first = false;
        continue;
      }
      throw std::runtime_error(source + ":" + std::to_string(line_no) + ": non-numeric cell '" + cells[bad] +
                               "' in column " + std::to_string(bad + 1));
    }
    first = false;
    const std::size_t width = !rows.empty() ? rows.front().size() : !t.header.empty() ? t.header.size() : row.size();
    if (row.size() != width)
      throw std::runtime_error(source + ":" + std::to_string(line_no) + ": expected " + std::to_string(width) +
                               " columns, found " + std::to_string(row.size()));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error(source + ": no numeric rows");
  t.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) t.values(r, c) = rows[r][c];
  return t;
}

inline Table read_table_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return read_table(in, path);
}

// A labeling is any whitespace/comma separated list of integers, one per
// variable. Labels are renumbered 1..k in order of first appearance.
inline std::vector<int> read_labels_file(const std::string& path) {
  const Table t = read_table_file(path);
  std::vector<int> labels;
  std::map<long long, int> ids;
  for (Eigen::Index r = 0; r < t.values.rows(); ++r)
    for (Eigen::Index c = 0; c < t.values.cols(); ++c) {
      const double v = t.values(r, c);
      if (v != std::floor(v)) throw std::runtime_error(path + ": labels must be integers");
      const auto key = static_cast<long long>(v);
      auto [it, inserted] = ids.try_emplace(key, static_cast<int>(ids.size()) + 1);
      labels.push_back(it->second);
    }
  return labels;
}

}  // namespace prenet
