#pragma once

#include <string>

namespace masslearn {

// Shortest decimal that round-trips to the same double; "nan", "inf" and
// "-inf" for non-finite values. Independent of the C locale.
std::string format_double(double value);

// Inverse of format_double. Throws std::invalid_argument.
double parse_double(const std::string& text);

}  // namespace masslearn
