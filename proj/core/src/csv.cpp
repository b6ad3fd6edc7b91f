#include "mmclab/csv.hpp"

#include <charconv>

namespace mmc {

std::string csv_double(double v) {
  char buf[40];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

}  // namespace mmc
