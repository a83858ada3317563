#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace csn {

/// Numeric table with named columns, stored row-major.
struct CsvTable {
  std::vector<std::string> columns;
  std::vector<double> values;
  std::size_t rows = 0;

  std::size_t cols() const { return columns.size(); }
  double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }
  std::size_t column_index(const std::string& name) const;
};

/// Shortest-exact decimal form ("%.17g"), so text round trips are bit-exact.
std::string format_double(double v);

CsvTable read_csv(const std::string& path);
void write_csv(const std::string& path, const CsvTable& table);

/// 8-bit binary PGM (P5). `values` is row-major height x width; each value is
/// scaled so the maximum maps to 255.
void write_pgm(const std::string& path, const std::vector<double>& values, std::size_t height, std::size_t width);

/// Writes `text` to `path`, creating parent directories.
void write_text(const std::string& path, const std::string& text);
std::string read_text(const std::string& path);

}  // namespace csn
