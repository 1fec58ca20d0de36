#include "expocnn/kernels.hpp"

#include <algorithm>
#include <cstring>

namespace expocnn {

namespace {

// Register tile: MR rows of C by one 128-byte strip of columns.
constexpr int kTileRows = 4;
template <class T>
constexpr int tile_cols() {
  return static_cast<int>(128 / sizeof(T));
}

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr Dim kParallelWork = 1 << 16;

template <class T, int MR, int NR>
inline void micro_tile(const T* a, Dim lda, const T* b, Dim ldb, T* c, Dim ldc, Dim k) {
  T acc[MR][NR] = {};
  for (Dim p = 0; p < k; ++p) {
    const T* brow = b + p * ldb;
    for (int r = 0; r < MR; ++r) {
      const T av = a[r * lda + p];
      for (int q = 0; q < NR; ++q) acc[r][q] += av * brow[q];
    }
  }
  for (int r = 0; r < MR; ++r) {
    for (int q = 0; q < NR; ++q) c[r * ldc + q] += acc[r][q];
  }
}

template <class T>
inline void edge_tile(const T* a, Dim lda, const T* b, Dim ldb, T* c, Dim ldc, Dim k, int mr, int nr) {
  constexpr int NR = tile_cols<T>();
  T acc[kTileRows][NR] = {};
  for (Dim p = 0; p < k; ++p) {
    const T* brow = b + p * ldb;
    for (int r = 0; r < mr; ++r) {
      const T av = a[r * lda + p];
      for (int q = 0; q < nr; ++q) acc[r][q] += av * brow[q];
    }
  }
  for (int r = 0; r < mr; ++r) {
    for (int q = 0; q < nr; ++q) c[r * ldc + q] += acc[r][q];
  }
}

// Dot products of MR rows of a with NR rows of b, each accumulated in L
// independent lanes and reduced in a fixed order at the end.
constexpr int kAbtTile = 4;

template <class T, int MR, int NR>
inline void abt_tile(const T* a, const T* b, T* c, Dim ldc, Dim k) {
  constexpr int L = static_cast<int>(64 / sizeof(T));
  T acc[MR][NR][L] = {};
  Dim p = 0;
  for (; p + L <= k; p += L) {
    for (int r = 0; r < MR; ++r) {
      for (int q = 0; q < NR; ++q) {
        for (int l = 0; l < L; ++l) acc[r][q][l] += a[r * k + p + l] * b[q * k + p + l];
      }
    }
  }
  for (int r = 0; r < MR; ++r) {
    for (int q = 0; q < NR; ++q) {
      T s{0};
      for (int l = 0; l < L; ++l) s += acc[r][q][l];
      for (Dim pp = p; pp < k; ++pp) s += a[r * k + pp] * b[q * k + pp];
      c[r * ldc + q] += s;
    }
  }
}

void require_matrix(Dim rank, const char* what) {
  if (rank != 2) throw ShapeError(std::string(what) + ": expected a rank-2 tensor");
}

}  // namespace

void ConvGeometry::validate() const {
  if (stride < 1) throw ShapeError("convolution stride must be >= 1");
  if (padding < 0) throw ShapeError("convolution padding must be >= 0");
  if (height + 2 * padding < kernel_h || width + 2 * padding < kernel_w) {
    throw ShapeError("kernel " + std::to_string(kernel_h) + "x" + std::to_string(kernel_w) +
                     " larger than padded input " + std::to_string(height + 2 * padding) + "x" +
                     std::to_string(width + 2 * padding));
  }
}

template <class T>
void gemm_accumulate(const T* a, const T* b, T* c, Dim m, Dim k, Dim n) {
  constexpr int NR = tile_cols<T>();
  const Dim row_tiles = (m + kTileRows - 1) / kTileRows;
  const Dim col_tiles = (n + NR - 1) / NR;
  const Dim tiles = row_tiles * col_tiles;
  // Column-tile major so consecutive tiles share the same strip of b.
#pragma omp parallel for schedule(static) if (m * n * k >= kParallelWork)
  for (Dim t = 0; t < tiles; ++t) {
    const Dim jt = t / row_tiles;
    const Dim it = t % row_tiles;
    const Dim i0 = it * kTileRows;
    const Dim j0 = jt * NR;
    const int mr = static_cast<int>(std::min<Dim>(kTileRows, m - i0));
    const int nr = static_cast<int>(std::min<Dim>(NR, n - j0));
    const T* at = a + i0 * k;
    const T* bt = b + j0;
    T* ct = c + i0 * n + j0;
    if (mr == kTileRows && nr == NR) {
      micro_tile<T, kTileRows, NR>(at, k, bt, n, ct, n, k);
    } else {
      edge_tile<T>(at, k, bt, n, ct, n, k, mr, nr);
    }
  }
}

template <class T>
void gemm_abt_accumulate(const T* a, const T* b, T* c, Dim m, Dim k, Dim n) {
  constexpr int R = kAbtTile;
  const Dim row_tiles = (m + R - 1) / R, col_tiles = (n + R - 1) / R;
#pragma omp parallel for schedule(static) if (m * n * k >= kParallelWork)
  for (Dim t = 0; t < row_tiles * col_tiles; ++t) {
    const Dim i0 = (t / col_tiles) * R, j0 = (t % col_tiles) * R;
    const int mr = static_cast<int>(std::min<Dim>(R, m - i0));
    const int nr = static_cast<int>(std::min<Dim>(R, n - j0));
    if (mr == R && nr == R) {
      abt_tile<T, R, R>(a + i0 * k, b + j0 * k, c + i0 * n + j0, n, k);
    } else {
      for (int r = 0; r < mr; ++r) {
        for (int q = 0; q < nr; ++q) abt_tile<T, 1, 1>(a + (i0 + r) * k, b + (j0 + q) * k, c + (i0 + r) * n + j0 + q, n, k);
      }
    }
  }
}

template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_matrix(static_cast<Dim>(a.rank()), "matmul");
  require_matrix(static_cast<Dim>(b.rank()), "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: inner dimensions differ " + shape_to_string(a.shape()) + " * " +
                     shape_to_string(b.shape()));
  }
  BasicTensor<T> c({a.dim(0), b.dim(1)}, T{0});
  gemm_accumulate(a.ptr(), b.ptr(), c.ptr(), a.dim(0), a.dim(1), b.dim(1));
  return c;
}

template <class T>
BasicTensor<T> matmul_reference(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_matrix(static_cast<Dim>(a.rank()), "matmul");
  require_matrix(static_cast<Dim>(b.rank()), "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: inner dimensions differ " + shape_to_string(a.shape()) + " * " +
                     shape_to_string(b.shape()));
  }
  const Dim m = a.dim(0), k = a.dim(1), n = b.dim(1);
  BasicTensor<T> c({m, n}, T{0});
  for (Dim i = 0; i < m; ++i) {
    for (Dim j = 0; j < n; ++j) {
      T s{0};
      for (Dim p = 0; p < k; ++p) s += a.at(i, p) * b.at(p, j);
      c.at(i, j) = s;
    }
  }
  return c;
}

template <class T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
  require_matrix(static_cast<Dim>(a.rank()), "transpose");
  const Dim m = a.dim(0), n = a.dim(1);
  BasicTensor<T> t({n, m});
  constexpr Dim B = 32;
#pragma omp parallel for schedule(static) if (m * n >= kParallelWork)
  for (Dim i0 = 0; i0 < m; i0 += B) {
    for (Dim j0 = 0; j0 < n; j0 += B) {
      const Dim i1 = std::min(m, i0 + B), j1 = std::min(n, j0 + B);
      for (Dim i = i0; i < i1; ++i) {
        for (Dim j = j0; j < j1; ++j) t[j * m + i] = a[i * n + j];
      }
    }
  }
  return t;
}

template <class T>
BasicTensor<T> im2col(const BasicTensor<T>& input, Dim kernel_h, Dim kernel_w, Dim stride, Dim padding) {
  if (input.rank() != 3) throw ShapeError("im2col: input must be [C,H,W], got " + shape_to_string(input.shape()));
  ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), kernel_h, kernel_w, stride, padding};
  g.validate();
  const Dim ho = g.out_height(), wo = g.out_width();
  BasicTensor<T> cols({g.patch_size(), ho * wo}, T{0});
  const Dim rows = g.patch_size();
#pragma omp parallel for schedule(static) if (rows * ho * wo >= kParallelWork)
  for (Dim r = 0; r < rows; ++r) {
    const Dim c = r / (kernel_h * kernel_w);
    const Dim m = (r / kernel_w) % kernel_h;
    const Dim n = r % kernel_w;
    T* dst = cols.ptr() + r * ho * wo;
    for (Dim i = 0; i < ho; ++i) {
      const Dim y = i * stride + m - padding;
      if (y < 0 || y >= g.height) continue;
      const T* src = input.ptr() + (c * g.height + y) * g.width;
      for (Dim j = 0; j < wo; ++j) {
        const Dim x = j * stride + n - padding;
        if (x >= 0 && x < g.width) dst[i * wo + j] = src[x];
      }
    }
  }
  return cols;
}

template <class T>
BasicTensor<T> col2im(const BasicTensor<T>& cols, const ConvGeometry& g) {
  const Dim ho = g.out_height(), wo = g.out_width();
  if (cols.rank() != 2 || cols.dim(0) != g.patch_size() || cols.dim(1) != ho * wo) {
    throw ShapeError("col2im: column matrix " + shape_to_string(cols.shape()) + " does not match geometry");
  }
  BasicTensor<T> out({g.channels, g.height, g.width}, T{0});
  const Dim khw = g.kernel_h * g.kernel_w;
  // One thread per channel: rows of different channels never alias.
#pragma omp parallel for schedule(static) if (cols.size() >= static_cast<std::size_t>(kParallelWork))
  for (Dim c = 0; c < g.channels; ++c) {
    for (Dim mn = 0; mn < khw; ++mn) {
      const Dim m = mn / g.kernel_w, n = mn % g.kernel_w;
      const T* src = cols.ptr() + (c * khw + mn) * ho * wo;
      for (Dim i = 0; i < ho; ++i) {
        const Dim y = i * g.stride + m - g.padding;
        if (y < 0 || y >= g.height) continue;
        T* dst = out.ptr() + (c * g.height + y) * g.width;
        for (Dim j = 0; j < wo; ++j) {
          const Dim x = j * g.stride + n - g.padding;
          if (x >= 0 && x < g.width) dst[x] += src[i * wo + j];
        }
      }
    }
  }
  return out;
}

template <class T>
ConvGeometry conv_geometry(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                           const BasicTensor<T>& bias, Dim stride, Dim padding) {
  if (input.rank() != 3) throw ShapeError("conv2d: input must be [C,H,W], got " + shape_to_string(input.shape()));
  if (weights.rank() != 4) {
    throw ShapeError("conv2d: weights must be [K,C,M,N], got " + shape_to_string(weights.shape()));
  }
  if (weights.dim(1) != input.dim(0)) {
    throw ShapeError("conv2d: weights expect " + std::to_string(weights.dim(1)) + " channels, input has " +
                     std::to_string(input.dim(0)));
  }
  if (bias.rank() != 1 || bias.dim(0) != weights.dim(0)) {
    throw ShapeError("conv2d: bias " + shape_to_string(bias.shape()) + " does not match " +
                     std::to_string(weights.dim(0)) + " filters");
  }
  ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), weights.dim(2), weights.dim(3), stride, padding};
  g.validate();
  return g;
}

template <class T>
BasicTensor<T> conv2d_naive(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                            const BasicTensor<T>& bias, Dim stride, Dim padding) {
  const ConvGeometry g = conv_geometry(input, weights, bias, stride, padding);
  const Dim K = weights.dim(0), ho = g.out_height(), wo = g.out_width();
  BasicTensor<T> out({K, ho, wo});
  for (Dim k = 0; k < K; ++k) {
    for (Dim i = 0; i < ho; ++i) {
      for (Dim j = 0; j < wo; ++j) {
        T s{0};
        for (Dim c = 0; c < g.channels; ++c) {
          for (Dim m = 0; m < g.kernel_h; ++m) {
            const Dim y = i * stride + m - padding;
            if (y < 0 || y >= g.height) continue;
            for (Dim n = 0; n < g.kernel_w; ++n) {
              const Dim x = j * stride + n - padding;
              if (x < 0 || x >= g.width) continue;
              s += input.at(c, y, x) * weights[((k * g.channels + c) * g.kernel_h + m) * g.kernel_w + n];
            }
          }
        }
        out.at(k, i, j) = s + bias[k];
      }
    }
  }
  return out;
}

template <class T>
BasicTensor<T> conv2d_fast(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                           const BasicTensor<T>& bias, Dim stride, Dim padding) {
  const ConvGeometry g = conv_geometry(input, weights, bias, stride, padding);
  const Dim K = weights.dim(0), P = g.out_height() * g.out_width();
  const BasicTensor<T> cols = im2col(input, g.kernel_h, g.kernel_w, stride, padding);
  BasicTensor<T> out({K, g.out_height(), g.out_width()});
  for (Dim k = 0; k < K; ++k) std::fill_n(out.ptr() + k * P, P, bias[k]);
  gemm_accumulate(weights.ptr(), cols.ptr(), out.ptr(), K, g.patch_size(), P);
  return out;
}

template <class T>
ConvGradients<T> conv2d_backward(const BasicTensor<T>& upstream, const BasicTensor<T>& input,
                                 const BasicTensor<T>& weights, Dim stride, Dim padding,
                                 bool need_input_grad) {
  const BasicTensor<T> dummy_bias({weights.dim(0)});
  const ConvGeometry g = conv_geometry(input, weights, dummy_bias, stride, padding);
  const Dim K = weights.dim(0), P = g.out_height() * g.out_width();
  if (upstream.shape() != Shape{K, g.out_height(), g.out_width()}) {
    throw ShapeError("conv2d_backward: upstream " + shape_to_string(upstream.shape()) + " does not match output");
  }
  ConvGradients<T> grads;
  grads.bias = BasicTensor<T>({K});
  for (Dim k = 0; k < K; ++k) {
    T s{0};
    const T* u = upstream.ptr() + k * P;
    for (Dim p = 0; p < P; ++p) s += u[p];
    grads.bias[k] = s;
  }
  const BasicTensor<T> cols = im2col(input, g.kernel_h, g.kernel_w, stride, padding);
  const BasicTensor<T> u2 = upstream.reshaped({K, P});
  grads.weights = BasicTensor<T>({K, g.patch_size()});
  gemm_abt_accumulate(u2.ptr(), cols.ptr(), grads.weights.ptr(), K, P, g.patch_size());
  grads.weights.reshape(weights.shape());
  if (need_input_grad) {
    const BasicTensor<T> w2 = weights.reshaped({K, g.patch_size()});
    grads.input = col2im(matmul(transpose(w2), u2), g);
  }
  return grads;
}

template <class T>
ConvGradients<T> conv2d_backward_naive(const BasicTensor<T>& upstream, const BasicTensor<T>& input,
                                       const BasicTensor<T>& weights, Dim stride, Dim padding) {
  const BasicTensor<T> dummy_bias({weights.dim(0)});
  const ConvGeometry g = conv_geometry(input, weights, dummy_bias, stride, padding);
  const Dim K = weights.dim(0), ho = g.out_height(), wo = g.out_width();
  if (upstream.shape() != Shape{K, ho, wo}) {
    throw ShapeError("conv2d_backward: upstream " + shape_to_string(upstream.shape()) + " does not match output");
  }
  ConvGradients<T> grads{BasicTensor<T>(weights.shape()), BasicTensor<T>({K}), BasicTensor<T>(input.shape())};
  for (Dim k = 0; k < K; ++k) {
    for (Dim i = 0; i < ho; ++i) {
      for (Dim j = 0; j < wo; ++j) {
        const T u = upstream.at(k, i, j);
        grads.bias[k] += u;
        for (Dim c = 0; c < g.channels; ++c) {
          for (Dim m = 0; m < g.kernel_h; ++m) {
            const Dim y = i * stride + m - padding;
            if (y < 0 || y >= g.height) continue;
            for (Dim n = 0; n < g.kernel_w; ++n) {
              const Dim x = j * stride + n - padding;
              if (x < 0 || x >= g.width) continue;
              const Dim widx = ((k * g.channels + c) * g.kernel_h + m) * g.kernel_w + n;
              grads.weights[widx] += u * input.at(c, y, x);
              grads.input.at(c, y, x) += u * weights[widx];
            }
          }
        }
      }
    }
  }
  return grads;
}

#define EXPOCNN_INSTANTIATE_KERNELS(T)                                                                   \
  template void gemm_accumulate<T>(const T*, const T*, T*, Dim, Dim, Dim);                               \
  template void gemm_abt_accumulate<T>(const T*, const T*, T*, Dim, Dim, Dim);                           \
  template BasicTensor<T> matmul<T>(const BasicTensor<T>&, const BasicTensor<T>&);                       \
  template BasicTensor<T> matmul_reference<T>(const BasicTensor<T>&, const BasicTensor<T>&);             \
  template BasicTensor<T> transpose<T>(const BasicTensor<T>&);                                           \
  template BasicTensor<T> im2col<T>(const BasicTensor<T>&, Dim, Dim, Dim, Dim);                          \
  template BasicTensor<T> col2im<T>(const BasicTensor<T>&, const ConvGeometry&);                         \
  template ConvGeometry conv_geometry<T>(const BasicTensor<T>&, const BasicTensor<T>&,                   \
                                         const BasicTensor<T>&, Dim, Dim);                               \
  template BasicTensor<T> conv2d_naive<T>(const BasicTensor<T>&, const BasicTensor<T>&,                  \
                                          const BasicTensor<T>&, Dim, Dim);                              \
  template BasicTensor<T> conv2d_fast<T>(const BasicTensor<T>&, const BasicTensor<T>&,                   \
                                         const BasicTensor<T>&, Dim, Dim);                               \
  template ConvGradients<T> conv2d_backward<T>(const BasicTensor<T>&, const BasicTensor<T>&,             \
                                               const BasicTensor<T>&, Dim, Dim, bool);                   \
  template ConvGradients<T> conv2d_backward_naive<T>(const BasicTensor<T>&, const BasicTensor<T>&,       \
                                                     const BasicTensor<T>&, Dim, Dim);

EXPOCNN_INSTANTIATE_KERNELS(float)
EXPOCNN_INSTANTIATE_KERNELS(double)

#undef EXPOCNN_INSTANTIATE_KERNELS

}  // namespace expocnn
