#include "expocnn/layers.hpp"

namespace expocnn {

template <class T>
void ConvLayer<T>::validate() const {
  if (weights.rank() != 4 || weights.dim(0) < 1) {
    throw ShapeError("conv layer weights must be [K,C,M,N] with K >= 1, got " + shape_to_string(weights.shape()));
  }
  if (bias.shape() != Shape{weights.dim(0)}) {
    throw ShapeError("conv layer bias " + shape_to_string(bias.shape()) + " does not match " +
                     std::to_string(weights.dim(0)) + " filters");
  }
  if (stride < 1 || padding < 0) throw ShapeError("conv layer stride must be >= 1 and padding >= 0");
}

template <class T>
void DenseLayer<T>::validate() const {
  if (weights.rank() != 2) throw ShapeError("dense weights must be [out,in], got " + shape_to_string(weights.shape()));
  if (bias.shape() != Shape{weights.dim(0)}) {
    throw ShapeError("dense bias " + shape_to_string(bias.shape()) + " does not match " +
                     std::to_string(weights.dim(0)) + " outputs");
  }
}

template <class T>
BasicTensor<T> relu_forward(const BasicTensor<T>& x) {
  BasicTensor<T> out = x;
  for (T& v : out.data()) v = v > T{0} ? v : T{0};
  return out;
}

template <class T>
BasicTensor<T> relu_backward(const BasicTensor<T>& upstream, const BasicTensor<T>& cached_input) {
  require_same_shape(upstream, cached_input, "relu_backward");
  BasicTensor<T> grad(upstream.shape());
  const T* u = upstream.ptr();
  const T* x = cached_input.ptr();
  T* g = grad.ptr();
  const std::size_t n = grad.size();
  for (std::size_t i = 0; i < n; ++i) g[i] = x[i] > T{0} ? u[i] : T{0};
  return grad;
}

template <class T>
PoolResult<T> maxpool_forward(const BasicTensor<T>& x, Dim window, Dim stride) {
  if (x.rank() != 3) throw ShapeError("maxpool: input must be [C,H,W], got " + shape_to_string(x.shape()));
  if (window < 1 || stride < 1) throw ShapeError("maxpool: window and stride must be >= 1");
  const Dim C = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (H < window || W < window) {
    throw ShapeError("maxpool: window " + std::to_string(window) + " larger than input " + shape_to_string(x.shape()));
  }
  const Dim ho = (H - window) / stride + 1, wo = (W - window) / stride + 1;
  PoolResult<T> r{BasicTensor<T>({C, ho, wo}), PoolIndices{x.shape(), {}}};
  r.indices.argmax.resize(r.output.size());
  std::size_t o = 0;
  for (Dim c = 0; c < C; ++c) {
    for (Dim i = 0; i < ho; ++i) {
      for (Dim j = 0; j < wo; ++j, ++o) {
        std::int64_t best = (c * H + i * stride) * W + j * stride;
        T best_v = x[static_cast<std::size_t>(best)];
        for (Dim m = 0; m < window; ++m) {
          for (Dim n = 0; n < window; ++n) {
            const std::int64_t idx = (c * H + i * stride + m) * W + j * stride + n;
            if (x[static_cast<std::size_t>(idx)] > best_v) {
              best_v = x[static_cast<std::size_t>(idx)];
              best = idx;
            }
          }
        }
        r.output[o] = best_v;
        r.indices.argmax[o] = best;
      }
    }
  }
  return r;
}

template <class T>
BasicTensor<T> maxpool_backward(const BasicTensor<T>& upstream, const PoolIndices& indices) {
  if (upstream.size() != indices.argmax.size()) {
    throw ShapeError("maxpool_backward: upstream has " + std::to_string(upstream.size()) + " cells, indices have " +
                     std::to_string(indices.argmax.size()));
  }
  BasicTensor<T> grad(indices.input_shape);
  const auto n = static_cast<std::int64_t>(grad.size());
  for (std::size_t o = 0; o < upstream.size(); ++o) {
    const std::int64_t idx = indices.argmax[o];
    if (idx < 0 || idx >= n) throw ShapeError("maxpool_backward: argmax index out of bounds");
    grad[static_cast<std::size_t>(idx)] += upstream[o];
  }
  return grad;
}

template <class T>
BasicTensor<T> dense_forward(const DenseLayer<T>& layer, const BasicTensor<T>& x) {
  if (x.rank() != 1 || x.dim(0) != layer.in_features()) {
    throw ShapeError("dense_forward: input " + shape_to_string(x.shape()) + " but layer expects " +
                     std::to_string(layer.in_features()));
  }
  const Dim out = layer.out_features(), in = layer.in_features();
  BasicTensor<T> y({out});
  for (Dim o = 0; o < out; ++o) {
    T s{0};
    const T* w = layer.weights.ptr() + o * in;
    for (Dim i = 0; i < in; ++i) s += w[i] * x[static_cast<std::size_t>(i)];
    y[static_cast<std::size_t>(o)] = s + layer.bias[static_cast<std::size_t>(o)];
  }
  return y;
}

template <class T>
DenseGradients<T> dense_backward(const DenseLayer<T>& layer, const BasicTensor<T>& upstream,
                                 const BasicTensor<T>& cached_x) {
  const Dim out = layer.out_features(), in = layer.in_features();
  if (upstream.shape() != Shape{out} || cached_x.shape() != Shape{in}) {
    throw ShapeError("dense_backward: upstream " + shape_to_string(upstream.shape()) + " / input " +
                     shape_to_string(cached_x.shape()) + " inconsistent with layer [" + std::to_string(out) + "," +
                     std::to_string(in) + "]");
  }
  DenseGradients<T> g{BasicTensor<T>({out, in}), upstream, BasicTensor<T>({in})};
  for (Dim o = 0; o < out; ++o) {
    const T u = upstream[static_cast<std::size_t>(o)];
    const T* w = layer.weights.ptr() + o * in;
    T* gw = g.weights.ptr() + o * in;
    for (Dim i = 0; i < in; ++i) {
      gw[i] = u * cached_x[static_cast<std::size_t>(i)];
      g.input[static_cast<std::size_t>(i)] += w[i] * u;
    }
  }
  return g;
}

template <class T>
BasicTensor<T> dense_forward_batch(const DenseLayer<T>& layer, const BasicTensor<T>& x) {
  if (x.rank() != 2 || x.dim(1) != layer.in_features()) {
    throw ShapeError("dense layer expects [B," + std::to_string(layer.in_features()) + "] input, got " +
                     shape_to_string(x.shape()));
  }
  const Dim B = x.dim(0), out = layer.out_features();
  BasicTensor<T> y({B, out});
  for (Dim b = 0; b < B; ++b) std::copy(layer.bias.data().begin(), layer.bias.data().end(), y.ptr() + b * out);
  const BasicTensor<T> wt = transpose(layer.weights);
  gemm_accumulate(x.ptr(), wt.ptr(), y.ptr(), B, layer.in_features(), out);
  return y;
}

template <class T>
DenseGradients<T> dense_backward_batch(const DenseLayer<T>& layer, const BasicTensor<T>& upstream,
                                       const BasicTensor<T>& cached_x, bool need_input_grad) {
  const Dim out = layer.out_features(), in = layer.in_features();
  if (upstream.rank() != 2 || upstream.dim(1) != out || cached_x.rank() != 2 || cached_x.dim(1) != in ||
      upstream.dim(0) != cached_x.dim(0)) {
    throw ShapeError("dense_backward: upstream " + shape_to_string(upstream.shape()) + " / input " +
                     shape_to_string(cached_x.shape()) + " inconsistent with layer");
  }
  const Dim B = upstream.dim(0);
  DenseGradients<T> g;
  g.weights = BasicTensor<T>({out, in});
  const BasicTensor<T> ut = transpose(upstream);
  gemm_accumulate(ut.ptr(), cached_x.ptr(), g.weights.ptr(), out, B, in);
  g.bias = BasicTensor<T>({out});
  for (Dim b = 0; b < B; ++b) {
    for (Dim o = 0; o < out; ++o) g.bias[static_cast<std::size_t>(o)] += upstream.at(b, o);
  }
  if (need_input_grad) g.input = matmul(upstream, layer.weights);
  return g;
}

template <class T>
BasicTensor<T> conv_forward(const ConvLayer<T>& layer, const BasicTensor<T>& x) {
  return conv2d_fast(x, layer.weights, layer.bias, layer.stride, layer.padding);
}

template <class T>
ConvGradients<T> conv_backward(const ConvLayer<T>& layer, const BasicTensor<T>& upstream,
                               const BasicTensor<T>& cached_input, bool need_input_grad) {
  return conv2d_backward(upstream, cached_input, layer.weights, layer.stride, layer.padding, need_input_grad);
}

#define EXPOCNN_INSTANTIATE_LAYERS(T)                                                                      \
  template struct ConvLayer<T>;                                                                            \
  template struct DenseLayer<T>;                                                                           \
  template BasicTensor<T> relu_forward<T>(const BasicTensor<T>&);                                          \
  template BasicTensor<T> relu_backward<T>(const BasicTensor<T>&, const BasicTensor<T>&);                  \
  template PoolResult<T> maxpool_forward<T>(const BasicTensor<T>&, Dim, Dim);                              \
  template BasicTensor<T> maxpool_backward<T>(const BasicTensor<T>&, const PoolIndices&);                  \
  template BasicTensor<T> dense_forward<T>(const DenseLayer<T>&, const BasicTensor<T>&);                   \
  template DenseGradients<T> dense_backward<T>(const DenseLayer<T>&, const BasicTensor<T>&,                \
                                               const BasicTensor<T>&);                                     \
  template BasicTensor<T> dense_forward_batch<T>(const DenseLayer<T>&, const BasicTensor<T>&);             \
  template DenseGradients<T> dense_backward_batch<T>(const DenseLayer<T>&, const BasicTensor<T>&,          \
                                                     const BasicTensor<T>&, bool);                         \
  template BasicTensor<T> conv_forward<T>(const ConvLayer<T>&, const BasicTensor<T>&);                     \
  template ConvGradients<T> conv_backward<T>(const ConvLayer<T>&, const BasicTensor<T>&,                   \
                                             const BasicTensor<T>&, bool);

EXPOCNN_INSTANTIATE_LAYERS(float)
EXPOCNN_INSTANTIATE_LAYERS(double)

#undef EXPOCNN_INSTANTIATE_LAYERS

}  // namespace expocnn
