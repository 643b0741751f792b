#pragma once

#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace comadice {

/// Reals are printed with 17 significant digits so they round-trip exactly.
inline std::string format_real(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline void write_text_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << contents;
  if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

/// Splits one space-separated record and reports errors as
/// `<path>:<line>: field '<name>': ...`.
class LineReader {
 public:
  LineReader(std::string_view line, std::string_view path, int line_no)
      : line_(line), path_(path), line_no_(line_no) {}

  std::string_view next_token(std::string_view field) {
    while (pos_ < line_.size() && line_[pos_] == ' ') ++pos_;
    if (pos_ >= line_.size()) fail(field, "missing");
    const std::size_t start = pos_;
    while (pos_ < line_.size() && line_[pos_] != ' ') ++pos_;
    return line_.substr(start, pos_ - start);
  }

  long long next_int(std::string_view field) {
    const std::string tok(next_token(field));
    std::size_t used = 0;
    long long v = 0;
    try {
      v = std::stoll(tok, &used);
    } catch (const std::exception&) {
      fail(field, "not an integer: '" + tok + "'");
    }
    if (used != tok.size()) fail(field, "not an integer: '" + tok + "'");
    return v;
  }

  double next_real(std::string_view field) {
    const std::string tok(next_token(field));
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      fail(field, "not a real: '" + tok + "'");
    }
    if (used != tok.size()) fail(field, "not a real: '" + tok + "'");
    return v;
  }

  void expect_end() {
    while (pos_ < line_.size() && (line_[pos_] == ' ' || line_[pos_] == '\r')) ++pos_;
    if (pos_ != line_.size()) fail("end of record", "unexpected trailing fields");
  }

  [[noreturn]] void fail(std::string_view field, const std::string& what) const {
    throw std::runtime_error(std::string(path_) + ":" + std::to_string(line_no_) + ": field '" +
                             std::string(field) + "': " + what);
  }

 private:
  std::string_view line_;
  std::string_view path_;
  int line_no_;
  std::size_t pos_ = 0;
};

}  // namespace comadice
