#include "expocnn/loss.hpp"

#include <algorithm>
#include <cmath>

namespace expocnn {

namespace {

template <class T>
void check_logits(const BasicTensor<T>& logits, const char* what) {
  if (logits.rank() != 1 || logits.size() == 0) {
    throw ShapeError(std::string(what) + ": expected a non-empty rank-1 tensor, got " + shape_to_string(logits.shape()));
  }
  if (!logits.all_finite()) throw ValueError(std::string(what) + ": non-finite logit");
}

void check_class(Dim true_class, std::size_t n, const char* what) {
  if (true_class < 0 || static_cast<std::size_t>(true_class) >= n) {
    throw ValueError(std::string(what) + ": class " + std::to_string(true_class) + " out of range [0," +
                     std::to_string(n) + ")");
  }
}

}  // namespace

template <class T>
BasicTensor<T> softmax(const BasicTensor<T>& logits) {
  check_logits(logits, "softmax");
  const T top = *std::max_element(logits.data().begin(), logits.data().end());
  BasicTensor<T> out(logits.shape());
  double sum = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double e = std::exp(static_cast<double>(logits[i]) - static_cast<double>(top));
    out[i] = static_cast<T>(e);
    sum += e;
  }
  for (T& v : out.data()) v = static_cast<T>(static_cast<double>(v) / sum);
  return out;
}

template <class T>
double sparse_ce(const BasicTensor<T>& probabilities, Dim true_class) {
  if (probabilities.rank() != 1) throw ShapeError("sparse_ce: probabilities must be rank-1");
  check_class(true_class, probabilities.size(), "sparse_ce");
  const double p = static_cast<double>(probabilities[static_cast<std::size_t>(true_class)]);
  return -std::log(std::max(p, kProbabilityFloor));
}

template <class T>
double softmax_ce(const BasicTensor<T>& logits, Dim true_class) {
  check_logits(logits, "softmax_ce");
  check_class(true_class, logits.size(), "softmax_ce");
  const double top = static_cast<double>(*std::max_element(logits.data().begin(), logits.data().end()));
  double sum = 0.0;
  for (T v : logits.data()) sum += std::exp(static_cast<double>(v) - top);
  const double log_p = static_cast<double>(logits[static_cast<std::size_t>(true_class)]) - top - std::log(sum);
  return -std::max(log_p, std::log(kProbabilityFloor));
}

template <class T>
BasicTensor<T> softmax_ce_grad(const BasicTensor<T>& logits, Dim true_class) {
  check_class(true_class, logits.size(), "softmax_ce_grad");
  BasicTensor<T> g = softmax(logits);
  g[static_cast<std::size_t>(true_class)] -= T{1};
  return g;
}

template <class T>
LossBreakdown combined_loss(const BasicTensor<T>& base_logits, const BasicTensor<T>& exp_logits, Dim base_label,
                            Dim exp_label, HeadWeights weights) {
  LossBreakdown r;
  r.base_loss = softmax_ce(base_logits, base_label);
  r.exp_loss = softmax_ce(exp_logits, exp_label);
  r.total = weights.base * r.base_loss + weights.exponent * r.exp_loss;
  return r;
}

#define EXPOCNN_INSTANTIATE_LOSS(T)                                                                  \
  template BasicTensor<T> softmax<T>(const BasicTensor<T>&);                                         \
  template double sparse_ce<T>(const BasicTensor<T>&, Dim);                                          \
  template double softmax_ce<T>(const BasicTensor<T>&, Dim);                                         \
  template BasicTensor<T> softmax_ce_grad<T>(const BasicTensor<T>&, Dim);                            \
  template LossBreakdown combined_loss<T>(const BasicTensor<T>&, const BasicTensor<T>&, Dim, Dim, HeadWeights);

EXPOCNN_INSTANTIATE_LOSS(float)
EXPOCNN_INSTANTIATE_LOSS(double)

#undef EXPOCNN_INSTANTIATE_LOSS

}  // namespace expocnn
