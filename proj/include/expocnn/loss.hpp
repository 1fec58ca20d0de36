#pragma once

#include "expocnn/tensor.hpp"

namespace expocnn {

/// Lower clamp applied to the true-class probability before the log.
inline constexpr double kProbabilityFloor = 1e-12;

/// exp(v_i - max v) / sum_j exp(v_j - max v). Throws ValueError on
/// non-finite or empty input.
template <class T>
BasicTensor<T> softmax(const BasicTensor<T>& logits);

/// -log(max(p[true_class], 1e-12)).
template <class T>
double sparse_ce(const BasicTensor<T>& probabilities, Dim true_class);

/// Cross-entropy of softmax(logits) at `true_class`, evaluated through
/// log-sum-exp, with the same probability floor as sparse_ce.
template <class T>
double softmax_ce(const BasicTensor<T>& logits, Dim true_class);

/// d/dlogits of sparse_ce(softmax(logits)): softmax(logits) - onehot(true_class).
template <class T>
BasicTensor<T> softmax_ce_grad(const BasicTensor<T>& logits, Dim true_class);

struct HeadWeights {
  double base = 1.0;
  double exponent = 1.0;
};

struct LossBreakdown {
  double base_loss = 0.0;
  double exp_loss = 0.0;
  double total = 0.0;
};

/// total = w_base * CE(base) + w_exp * CE(exp).
template <class T>
LossBreakdown combined_loss(const BasicTensor<T>& base_logits, const BasicTensor<T>& exp_logits, Dim base_label,
                            Dim exp_label, HeadWeights weights = {});

}  // namespace expocnn
