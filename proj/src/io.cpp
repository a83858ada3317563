#include "csn/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace csn {

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    if (!cell.empty() && cell.back() == '\r') cell.pop_back();
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

void ensure_parent(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
}

}  // namespace

std::size_t CsvTable::column_index(const std::string& name) const {
  auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) throw std::invalid_argument("no column named '" + name + "'");
  return static_cast<std::size_t>(it - columns.begin());
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  if (ec != std::errc()) throw std::runtime_error("cannot format value");
  return std::string(buf, end);
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open CSV: " + path);
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty CSV: " + path);
  table.columns = split_line(line);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_line(line);
    if (cells.size() != table.cols()) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(table.cols()) +
                               " cells, got " + std::to_string(cells.size()));
    }
    for (const auto& cell : cells) {
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || ptr != cell.data() + cell.size()) {
        throw std::runtime_error(path + ":" + std::to_string(line_no) + ": not a number: '" + cell + "'");
      }
      table.values.push_back(v);
    }
    ++table.rows;
  }
  return table;
}

void write_csv(const std::string& path, const CsvTable& table) {
  std::ostringstream out;
  for (std::size_t c = 0; c < table.cols(); ++c) out << (c ? "," : "") << table.columns[c];
  out << '\n';
  for (std::size_t r = 0; r < table.rows; ++r) {
    for (std::size_t c = 0; c < table.cols(); ++c) out << (c ? "," : "") << format_double(table.at(r, c));
    out << '\n';
  }
  write_text(path, out.str());
}

void write_pgm(const std::string& path, const std::vector<double>& values, std::size_t height, std::size_t width) {
  if (values.size() != height * width) throw std::invalid_argument("write_pgm: size mismatch");
  double peak = 0.0;
  for (double v : values) peak = std::max(peak, v);
  std::string bytes;
  bytes.reserve(values.size());
  for (double v : values) {
    const double level = peak > 0.0 ? std::clamp(v / peak, 0.0, 1.0) * 255.0 : 0.0;
    bytes.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(level))));
  }
  std::ostringstream out;
  out << "P5\n" << width << ' ' << height << "\n255\n" << bytes;
  write_text(path, out.str());
}

void write_text(const std::string& path, const std::string& text) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path);
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace csn
