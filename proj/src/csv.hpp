#pragma once

// Minimal CSV line splitting shared by the trace and profiling readers.
// Quoting is not supported; '#' starts a comment line.

#include <string>
#include <vector>

namespace lemix::csv {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

/// Empty result for blank and comment lines.
inline std::vector<std::string> split_line(const std::string& raw) {
  const std::string line = trim(raw);
  if (line.empty() || line[0] == '#') return {};
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const auto comma = line.find(',', pos);
    out.push_back(trim(line.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos)));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

}  // namespace lemix::csv
