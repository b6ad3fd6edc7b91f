#pragma once

#include <string>

namespace mmc {

// Shortest round-trip decimal form; keeps CSV output byte-stable.
std::string csv_double(double v);

}  // namespace mmc
