#pragma once

#include <string>

namespace expocnn {

/// Shortest decimal text that parses back to exactly `value`.
std::string format_number(double value);
std::string format_number(float value);

}  // namespace expocnn
