#include "expocnn/tensor.hpp"

namespace expocnn {

std::string shape_to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::size_t checked_numel(const Shape& shape) {
  std::size_t n = 1;
  for (Dim d : shape) {
    if (d <= 0) throw InvalidShapeError("invalid tensor shape " + shape_to_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

}  // namespace expocnn
