#pragma once

// Locale-independent CSV output. Doubles use the shortest round-trip
// representation so that identical values always print identically.

#include <charconv>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace unnorm {

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& header) : out_(path) {
    if (!out_) throw std::runtime_error("cannot open " + path + " for writing");
    columns_ = header.size();
    row(header);
  }

  void row(const std::vector<std::string>& fields) {
    if (fields.size() != columns_) throw std::logic_error("CSV row has the wrong number of fields");
    for (size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ << ',';
      out_ << fields[i];
    }
    out_ << '\n';
  }

 private:
  std::ofstream out_;
  size_t columns_ = 0;
};

}  // namespace unnorm
