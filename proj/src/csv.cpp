#include "expocnn/csv.hpp"

#include <charconv>

namespace expocnn {

namespace {

template <class F>
std::string shortest(F value) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, r.ptr);
}

}  // namespace

std::string format_number(double value) { return shortest(value); }
std::string format_number(float value) { return shortest(value); }

}  // namespace expocnn
