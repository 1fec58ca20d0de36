#pragma once

// Dense kernels shared by every layer.
//
// Each parallel kernel has a serial reference twin (`*_reference` /
// `conv2d_naive`) kept for tests and for the benchmark target. The parallel
// kernels never change the per-element summation order with the thread
// count, so their results are bitwise reproducible under any OMP_NUM_THREADS.

#include "expocnn/tensor.hpp"

namespace expocnn {

/// Spatial geometry of one 2-D convolution or pooling window sweep.
struct ConvGeometry {
  Dim channels = 1;
  Dim height = 1;
  Dim width = 1;
  Dim kernel_h = 1;
  Dim kernel_w = 1;
  Dim stride = 1;
  Dim padding = 0;

  Dim out_height() const { return (height + 2 * padding - kernel_h) / stride + 1; }
  Dim out_width() const { return (width + 2 * padding - kernel_w) / stride + 1; }
  Dim patch_size() const { return channels * kernel_h * kernel_w; }

  /// Throws ShapeError if the kernel does not fit inside the padded input.
  void validate() const;
};

/// c = a * b for a [m,k], b [k,n]. Blocked, OpenMP-parallel over output tiles.
template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Plain triple loop; the oracle for `matmul`.
template <class T>
BasicTensor<T> matmul_reference(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// c += a * b on raw row-major buffers (a: m x k, b: k x n, c: m x n).
template <class T>
void gemm_accumulate(const T* a, const T* b, T* c, Dim m, Dim k, Dim n);

/// c += a * b^T on raw row-major buffers (a: m x k, b: n x k, c: m x n).
/// Suited to long inner dimensions, e.g. conv weight gradients.
template <class T>
void gemm_abt_accumulate(const T* a, const T* b, T* c, Dim m, Dim k, Dim n);

template <class T>
BasicTensor<T> transpose(const BasicTensor<T>& a);

/// Unrolls receptive fields of `input` [C,H,W] into a [C*M*N, H_out*W_out]
/// matrix. Row (c*M + m)*N + n, column i*W_out + j holds
/// input[c][i*stride + m - padding][j*stride + n - padding] (0 outside).
template <class T>
BasicTensor<T> im2col(const BasicTensor<T>& input, Dim kernel_h, Dim kernel_w, Dim stride, Dim padding);

/// Adjoint of im2col: scatters-and-adds columns back into a [C,H,W] tensor.
template <class T>
BasicTensor<T> col2im(const BasicTensor<T>& cols, const ConvGeometry& geom);

/// Direct evaluation of
///   z[k][i][j] = sum_c sum_m sum_n x[c][i*s+m-p][j*s+n-p] * w[k][c][m][n] + b[k]
/// with zero padding. Serial reference.
template <class T>
BasicTensor<T> conv2d_naive(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                            const BasicTensor<T>& bias, Dim stride, Dim padding);

/// Same contract as conv2d_naive, computed as weights[K, C*M*N] * im2col + bias.
template <class T>
BasicTensor<T> conv2d_fast(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                           const BasicTensor<T>& bias, Dim stride, Dim padding);

template <class T>
struct ConvGradients {
  BasicTensor<T> weights;
  BasicTensor<T> bias;
  BasicTensor<T> input;  // left empty when not requested
};

/// Adjoint of conv2d for one sample, via GEMM on the im2col matrix.
template <class T>
ConvGradients<T> conv2d_backward(const BasicTensor<T>& upstream, const BasicTensor<T>& input,
                                 const BasicTensor<T>& weights, Dim stride, Dim padding,
                                 bool need_input_grad = true);

/// Direct-loop adjoint; the reference for conv2d_backward.
template <class T>
ConvGradients<T> conv2d_backward_naive(const BasicTensor<T>& upstream, const BasicTensor<T>& input,
                                       const BasicTensor<T>& weights, Dim stride, Dim padding);

/// Geometry implied by a conv call; validates ranks and channel agreement.
template <class T>
ConvGeometry conv_geometry(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                           const BasicTensor<T>& bias, Dim stride, Dim padding);

}  // namespace expocnn
