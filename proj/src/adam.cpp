#include "expocnn/adam.hpp"

#include <cmath>

namespace expocnn {

AdamState AdamState::for_parameters(std::span<const Tensor* const> params, AdamConfig config) {
  AdamState s;
  s.config = config;
  for (const Tensor* p : params) {
    s.m.emplace_back(p->shape());
    s.v.emplace_back(p->shape());
  }
  return s;
}

void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " parameters, " + std::to_string(grads.size()) +
                     " gradients, " + std::to_string(state.m.size()) + " moment tensors");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(*params[i], grads[i], "adam_step gradient");
    require_same_shape(*params[i], state.m[i], "adam_step first moment");
    require_same_shape(*params[i], state.v[i], "adam_step second moment");
  }

  const AdamConfig& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const float b1 = static_cast<float>(c.beta1);
  const float b2 = static_cast<float>(c.beta2);
  const float one_minus_b1 = static_cast<float>(1.0 - c.beta1);
  const float one_minus_b2 = static_cast<float>(1.0 - c.beta2);
  const float m_scale = static_cast<float>(1.0 / (1.0 - std::pow(c.beta1, t)));
  const float v_scale = static_cast<float>(1.0 / (1.0 - std::pow(c.beta2, t)));
  const float lr = static_cast<float>(c.learning_rate);
  const float eps = static_cast<float>(c.epsilon);

  for (std::size_t i = 0; i < params.size(); ++i) {
    float* p = params[i]->ptr();
    const float* g = grads[i].ptr();
    float* m = state.m[i].ptr();
    float* v = state.v[i].ptr();
    const std::size_t n = params[i]->size();
#pragma omp parallel for schedule(static) if (n >= (1u << 16))
    for (std::size_t j = 0; j < n; ++j) {
      m[j] = b1 * m[j] + one_minus_b1 * g[j];
      v[j] = b2 * v[j] + one_minus_b2 * g[j] * g[j];
      const float m_hat = m[j] * m_scale;
      const float v_hat = v[j] * v_scale;
      p[j] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

}  // namespace expocnn
