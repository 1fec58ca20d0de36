#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "expocnn/layers.hpp"

namespace expocnn {

enum class LayerKind { Conv, Relu, MaxPool, Flatten, Dense };

/// One trunk layer in an architecture description. `units` is the filter
/// count for conv and the output width for dense; `kernel` is the square
/// kernel (conv) or window (pool) size.
struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  Dim units = 0;
  Dim kernel = 0;
  Dim stride = 1;
  Dim padding = 0;

  static LayerSpec conv(Dim filters, Dim kernel, Dim stride = 1, Dim padding = 0) {
    return {LayerKind::Conv, filters, kernel, stride, padding};
  }
  static LayerSpec relu() { return {LayerKind::Relu}; }
  static LayerSpec maxpool(Dim window, Dim stride) { return {LayerKind::MaxPool, 0, window, stride, 0}; }
  static LayerSpec flatten() { return {LayerKind::Flatten}; }
  static LayerSpec dense(Dim units) { return {LayerKind::Dense, units}; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Shared trunk plus two classification heads.
///
/// The trunk is a spatial stage (conv / relu / maxpool on [C,H,W]) followed by
/// exactly one flatten and a vector stage (dense / relu). Both heads read the
/// trunk output.
struct ArchSpec {
  Dim in_channels = 1;
  Dim in_height = 64;
  Dim in_width = 64;
  std::vector<LayerSpec> trunk;
  Dim base_classes = 8;
  Dim exp_classes = 10;

  /// conv(32,3x3,s1,p1) relu pool(2,2) conv(64,3x3,s1,p1) relu pool(2,2)
  /// flatten dense(128) relu, heads (8, 10).
  static ArchSpec default_arch(Dim height = 64, Dim width = 64);

  /// Same layer pattern with narrower layers, sized for finite-difference
  /// checks: conv(4) pool conv(8) pool dense(16) on a 16x16 input.
  static ArchSpec small(Dim height = 16, Dim width = 16);

  /// Output shape after the input and after every trunk layer (index 0 is the
  /// input). Throws ShapeError naming the first layer that does not fit.
  std::vector<Shape> shape_chain() const;

  Dim feature_width() const;

  /// Line-oriented text form embedded in checkpoints.
  std::string describe() const;
  static ArchSpec parse(const std::string& text);

  friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

struct ReluLayer {};
struct MaxPoolLayer {
  Dim window = 2;
  Dim stride = 2;
};
struct FlattenLayer {};

template <class T>
using Layer = std::variant<ConvLayer<T>, ReluLayer, MaxPoolLayer, FlattenLayer, DenseLayer<T>>;

/// Gradient tree: one tensor per model parameter, in Model::parameters() order.
template <class T>
using Gradients = std::vector<BasicTensor<T>>;

template <class T>
class Model {
 public:
  /// All weights and biases zero.
  static Model zeros(const ArchSpec& arch);

  /// Fan-in scaled uniform weights (bound sqrt(6 / fan_in)), zero biases,
  /// drawn in parameter order from a stream keyed by `seed`.
  static Model initialize(const ArchSpec& arch, std::uint64_t seed);

  const ArchSpec& arch() const noexcept { return arch_; }
  const std::vector<Layer<T>>& trunk() const noexcept { return trunk_; }
  std::vector<Layer<T>>& trunk() noexcept { return trunk_; }
  const DenseLayer<T>& base_head() const noexcept { return base_head_; }
  const DenseLayer<T>& exp_head() const noexcept { return exp_head_; }
  DenseLayer<T>& base_head() noexcept { return base_head_; }
  DenseLayer<T>& exp_head() noexcept { return exp_head_; }

  std::vector<BasicTensor<T>*> parameters();
  std::vector<const BasicTensor<T>*> parameters() const;
  std::vector<std::string> parameter_names() const;
  std::size_t parameter_count() const;

  Gradients<T> zero_gradients() const;

  template <class U>
  Model<U> cast() const;

  friend bool operator==(const Model& a, const Model& b) {
    if (!(a.arch_ == b.arch_)) return false;
    auto pa = a.parameters(), pb = b.parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) {
      if (!(*pa[i] == *pb[i])) return false;
    }
    return true;
  }

 private:
  template <class>
  friend class Model;

  explicit Model(ArchSpec arch);

  ArchSpec arch_;
  std::vector<Layer<T>> trunk_;
  DenseLayer<T> base_head_;
  DenseLayer<T> exp_head_;
};

/// Per-layer reverse-mode cache. Spatial layers keep one tensor per sample;
/// the vector stage keeps a [B, F] matrix.
template <class T>
struct LayerCache {
  std::vector<BasicTensor<T>> sample_inputs;
  BasicTensor<T> matrix_input;
  std::vector<PoolIndices> pool;
};

template <class T>
struct ForwardTrace {
  Dim batch = 0;
  std::vector<LayerCache<T>> layers;  // one entry per trunk layer
  BasicTensor<T> features;            // trunk output [B, F], input of both heads
};

template <class T>
struct BatchOutput {
  BasicTensor<T> base_logits;  // [B, N_base]
  BasicTensor<T> exp_logits;   // [B, N_exp]
  ForwardTrace<T> trace;
};

template <class T>
struct SampleOutput {
  BasicTensor<T> base_logits;  // [N_base]
  BasicTensor<T> exp_logits;   // [N_exp]
  ForwardTrace<T> trace;
};

/// Batched forward pass. Samples of the spatial stage run in parallel; the
/// vector stage runs as GEMMs over the batch. With `keep_trace == false` no
/// reverse-mode cache is retained.
template <class T>
BatchOutput<T> model_forward_batch(const Model<T>& model, std::span<const BasicTensor<T>> images,
                                   bool keep_trace = true);

/// Adjoint of model_forward_batch. Gradients are summed over the batch, head
/// contributions are added where they meet the trunk, and per-sample conv
/// gradients are reduced in sample order.
template <class T>
Gradients<T> model_backward_batch(const Model<T>& model, const ForwardTrace<T>& trace,
                                  const BasicTensor<T>& grad_base_logits, const BasicTensor<T>& grad_exp_logits);

template <class T>
SampleOutput<T> model_forward(const Model<T>& model, const BasicTensor<T>& image);

template <class T>
Gradients<T> model_backward(const Model<T>& model, const ForwardTrace<T>& trace,
                            const BasicTensor<T>& grad_base_logits, const BasicTensor<T>& grad_exp_logits);

/// ReLU on/off pattern and pooling argmax of every cached layer, flattened.
/// Two traces with equal patterns lie on the same smooth piece of the network.
template <class T>
std::vector<std::int64_t> activation_pattern(const ForwardTrace<T>& trace);

}  // namespace expocnn
