#pragma once

#include <cmath>
#include <cstdint>

#include "expocnn/rng.hpp"
#include "expocnn/tensor.hpp"

namespace testutil {

template <class T = float>
expocnn::BasicTensor<T> random_tensor(const expocnn::Shape& shape, expocnn::Rng& rng, double lo = -1.0,
                                      double hi = 1.0) {
  expocnn::BasicTensor<T> t(shape);
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

inline double rel_err(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace testutil
