#pragma once

#include <cstdint>
#include <vector>

#include "expocnn/kernels.hpp"
#include "expocnn/tensor.hpp"

namespace expocnn {

template <class T>
struct ConvLayer {
  BasicTensor<T> weights;  // [K, C_in, M, N]
  BasicTensor<T> bias;     // [K]
  Dim stride = 1;
  Dim padding = 0;

  Dim filters() const { return weights.dim(0); }
  void validate() const;
};

template <class T>
struct DenseLayer {
  BasicTensor<T> weights;  // [out, in]
  BasicTensor<T> bias;     // [out]

  Dim in_features() const { return weights.dim(1); }
  Dim out_features() const { return weights.dim(0); }
  void validate() const;
};

/// Flat input offsets of each pooled maximum, plus the input shape they index.
struct PoolIndices {
  Shape input_shape;
  std::vector<std::int64_t> argmax;
};

template <class T>
struct PoolResult {
  BasicTensor<T> output;
  PoolIndices indices;
};

template <class T>
struct DenseGradients {
  BasicTensor<T> weights;
  BasicTensor<T> bias;
  BasicTensor<T> input;
};

template <class T>
BasicTensor<T> relu_forward(const BasicTensor<T>& x);

/// Passes `upstream` where `cached_input > 0`; the subgradient at 0 is 0.
template <class T>
BasicTensor<T> relu_backward(const BasicTensor<T>& upstream, const BasicTensor<T>& cached_input);

/// Max over each window of a [C,H,W] tensor. Ties go to the first cell in
/// row-major window order.
template <class T>
PoolResult<T> maxpool_forward(const BasicTensor<T>& x, Dim window, Dim stride);

template <class T>
BasicTensor<T> maxpool_backward(const BasicTensor<T>& upstream, const PoolIndices& indices);

/// weights * x + bias for one rank-1 input.
template <class T>
BasicTensor<T> dense_forward(const DenseLayer<T>& layer, const BasicTensor<T>& x);

template <class T>
DenseGradients<T> dense_backward(const DenseLayer<T>& layer, const BasicTensor<T>& upstream,
                                 const BasicTensor<T>& cached_x);

/// Row-batched dense layer: x [B, in] -> [B, out].
template <class T>
BasicTensor<T> dense_forward_batch(const DenseLayer<T>& layer, const BasicTensor<T>& x);

/// Batched adjoint; weight and bias gradients are summed over the batch.
template <class T>
DenseGradients<T> dense_backward_batch(const DenseLayer<T>& layer, const BasicTensor<T>& upstream,
                                       const BasicTensor<T>& cached_x, bool need_input_grad = true);

template <class T>
BasicTensor<T> conv_forward(const ConvLayer<T>& layer, const BasicTensor<T>& x);

template <class T>
ConvGradients<T> conv_backward(const ConvLayer<T>& layer, const BasicTensor<T>& upstream,
                               const BasicTensor<T>& cached_input, bool need_input_grad = true);

}  // namespace expocnn
