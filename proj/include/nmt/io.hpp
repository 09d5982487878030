#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "nmt/error.hpp"
#include "nmt/unicode.hpp"

namespace nmt::io {

inline std::string read_file(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

inline void write_file(const std::string &path, const std::string &bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path);
  out << bytes;
  if (!out) throw InputError("write failed for " + path);
}

// Splits into lines (a trailing newline does not start a new line), strips
// CR, and validates UTF-8 with 1-based line numbers in errors.
inline std::vector<std::string> split_lines(const std::string &bytes,
                                            const std::string &origin) {
  std::vector<std::string> lines;
  size_t start = 0;
  while (start < bytes.size()) {
    size_t end = bytes.find('\n', start);
    if (end == std::string::npos) end = bytes.size();
    std::string line = bytes.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!unicode::valid_utf8(line)) {
      throw InputError(origin + ":" + std::to_string(lines.size() + 1) +
                       ": undecodable UTF-8");
    }
    lines.push_back(std::move(line));
    start = end + 1;
  }
  return lines;
}

inline std::vector<std::string> read_lines(const std::string &path) {
  return split_lines(read_file(path), path);
}

inline std::string join_lines(const std::vector<std::string> &lines) {
  std::string out;
  for (const auto &line : lines) {
    out += line;
    out += '\n';
  }
  return out;
}

}  // namespace nmt::io
