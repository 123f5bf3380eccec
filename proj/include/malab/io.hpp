#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "error.hpp"

namespace malab {

/// Shortest decimal form that parses back to the same double.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) s[static_cast<std::size_t>(i)] = digits[h & 0xf];
  return s;
}

using CsvCell = std::variant<std::string, double, long long>;

/// RFC 4180 table: CRLF line ends, fields quoted only when they need it.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : cols_(header.size()) { line(header); }

  void row(const std::vector<CsvCell>& cells) {
    if (cells.size() != cols_) throw Error("csv: row has " + std::to_string(cells.size()) + " cells, header has " +
                                           std::to_string(cols_));
    std::vector<std::string> s;
    s.reserve(cells.size());
    for (const auto& c : cells) {
      if (auto* d = std::get_if<double>(&c))
        s.push_back(format_double(*d));
      else if (auto* i = std::get_if<long long>(&c))
        s.push_back(std::to_string(*i));
      else
        s.push_back(std::get<std::string>(c));
    }
    line(s);
  }

  std::size_t rows() const { return rows_; }
  const std::string& str() const { return text_; }

  static std::string escape(const std::string& f) {
    if (f.find_first_of(",\"\r\n") == std::string::npos) return f;
    std::string q = "\"";
    for (char c : f) {
      if (c == '"') q += '"';
      q += c;
    }
    return q + '"';
  }

 private:
  void line(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) text_ += ',';
      text_ += escape(fields[i]);
    }
    text_ += "\r\n";
    ++rows_;
  }

  std::size_t cols_;
  std::size_t rows_ = 0;
  std::string text_;
};

/// Writes via a temporary in the same directory and renames over the target.
inline void write_atomic(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw Error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace malab
