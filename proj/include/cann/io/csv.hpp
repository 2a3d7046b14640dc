#pragma once

// Minimal comma-delimited text reading/writing. Fields never contain commas
// or quotes in the formats used here, so no quoting is supported.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <unordered_map>
#include <vector>

#include "cann/error.hpp"

namespace cann::io {

inline std::vector<std::string> split_fields(std::string_view line, char delim = ',') {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(delim, start);
    if (pos == std::string_view::npos) {
      out.emplace_back(line.substr(start));
      break;
    }
    out.emplace_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

/// Shortest decimal text that parses back to exactly `v`.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

/// Fixed-precision decimal text (for reports).
inline std::string format_fixed(double v, int digits) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed, digits);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s, std::string_view what) {
  double v = 0.0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  while (b < e && *b == ' ') ++b;
  while (e > b && (e[-1] == ' ' || e[-1] == '\r')) --e;
  auto res = std::from_chars(b, e, v);
  if (res.ec != std::errc() || res.ptr != e) {
    throw DataError("cannot parse number '" + std::string(s) + "' for " + std::string(what));
  }
  return v;
}

inline std::int64_t parse_int(std::string_view s, std::string_view what) {
  std::int64_t v = 0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  while (e > b && (e[-1] == ' ' || e[-1] == '\r')) --e;
  auto res = std::from_chars(b, e, v);
  if (res.ec != std::errc() || res.ptr != e) {
    throw DataError("cannot parse integer '" + std::string(s) + "' for " + std::string(what));
  }
  return v;
}

/// Header-indexed table read fully into memory.
class CsvTable {
 public:
  static CsvTable read(std::istream& in, std::string_view source = "<stream>") {
    CsvTable t;
    t.source_ = source;
    std::string line;
    if (!std::getline(in, line)) throw DataError(t.source_ + ": empty file, expected a header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    t.header_ = split_fields(line);
    for (std::size_t i = 0; i < t.header_.size(); ++i) t.index_[t.header_[i]] = i;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      auto f = split_fields(line);
      if (f.size() != t.header_.size()) {
        throw DataError(t.source_ + ":" + std::to_string(lineno) + ": expected " +
                        std::to_string(t.header_.size()) + " fields, got " +
                        std::to_string(f.size()));
      }
      t.rows_.push_back(std::move(f));
    }
    return t;
  }

  static CsvTable read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    return read(in, path);
  }

  std::size_t rows() const { return rows_.size(); }
  const std::vector<std::string>& header() const { return header_; }
  bool has(std::string_view col) const { return index_.count(std::string(col)) > 0; }

  std::size_t column(std::string_view col) const {
    auto it = index_.find(std::string(col));
    if (it == index_.end()) throw DataError(source_ + ": missing column '" + std::string(col) + "'");
    return it->second;
  }

  const std::string& at(std::size_t row, std::size_t col) const { return rows_[row][col]; }
  const std::string& source() const { return source_; }

 private:
  std::string source_;
  std::vector<std::string> header_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::vector<std::string>> rows_;
};

/// Accumulates one delimited row at a time.
class RowWriter {
 public:
  explicit RowWriter(std::ostream& out, char delim = ',') : out_(out), delim_(delim) {}

  RowWriter& field(std::string_view s) {
    if (!first_) out_ << delim_;
    out_ << s;
    first_ = false;
    return *this;
  }
  RowWriter& field(double v) { return field(format_double(v)); }
  RowWriter& field(std::int64_t v) { return field(std::to_string(v)); }
  RowWriter& field(int v) { return field(std::to_string(v)); }
  RowWriter& field(std::size_t v) { return field(std::to_string(v)); }
  void end() {
    out_ << '\n';
    first_ = true;
  }

 private:
  std::ostream& out_;
  char delim_;
  bool first_ = true;
};

}  // namespace cann::io
