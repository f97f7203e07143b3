#ifndef UDALM_TEXTIO_HPP
#define UDALM_TEXTIO_HPP

#include <charconv>
#include <cmath>
#include <string>
#include <vector>

#include "udalm/errors.hpp"

namespace udalm {

// Shortest round-trip decimal form; NaN renders as "-" so absent metrics
// stay readable in line-oriented records.
inline std::string fmt_double(double x) {
  if (std::isnan(x)) return "-";
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
  if (s == "-") return std::nan("");
  double x = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), x);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw DataError("bad numeric field '" + s + "'");
  return x;
}

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    auto tab = line.find('\t', start);
    if (tab == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

}  // namespace udalm

#endif
