#pragma once

// CSV output with shortest round-trip number formatting and LF line endings.

#include "selforder/errors.hpp"

#include <charconv>
#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace selforder::io {

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

using Cell = std::variant<double, long long, std::string>;

inline std::string format_cell(const Cell& c) {
  if (const auto* d = std::get_if<double>(&c)) return format_double(*d);
  if (const auto* i = std::get_if<long long>(&c)) return std::to_string(*i);
  const auto& s = std::get<std::string>(c);
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char ch : s) {
    if (ch == '"') q += '"';
    q += ch;
  }
  return q + "\"";
}

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header)
      : out_(path, std::ios::binary | std::ios::trunc), width_(header.size()) {
    if (!out_) throw std::runtime_error("cannot write " + path.string());
    write_raw(header);
  }

  void row(const std::vector<Cell>& cells) {
    if (cells.size() != width_) throw std::logic_error("csv row width does not match header");
    std::string line;
    for (std::size_t k = 0; k < cells.size(); ++k) {
      if (k) line += ',';
      line += format_cell(cells[k]);
    }
    line += '\n';
    out_ << line;
  }

 private:
  void write_raw(const std::vector<std::string>& h) {
    std::vector<Cell> cells(h.begin(), h.end());
    std::string line;
    for (std::size_t k = 0; k < cells.size(); ++k) {
      if (k) line += ',';
      line += format_cell(cells[k]);
    }
    out_ << line << '\n';
  }

  std::ofstream out_;
  std::size_t width_;
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

}  // namespace selforder::io
