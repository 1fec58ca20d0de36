#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "expocnn/tensor.hpp"

namespace expocnn {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

/// First/second moment estimates mirroring the parameter list, plus the step
/// counter used for bias correction.
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  /// Zero moments shaped like `params`.
  static AdamState for_parameters(std::span<const Tensor* const> params, AdamConfig config = {});

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// One Adam update:
///   t += 1
///   m = b1*m + (1-b1)*g        v = b2*v + (1-b2)*g^2
///   p -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
/// Throws ShapeError when grads, state and params do not mirror each other.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state);

}  // namespace expocnn
