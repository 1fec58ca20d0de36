#include "expocnn/model.hpp"

#include <cmath>
#include <sstream>

#include "expocnn/parallel.hpp"
#include "expocnn/rng.hpp"

namespace expocnn {

namespace {

const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "conv";
    case LayerKind::Relu: return "relu";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Dense: return "dense";
  }
  return "?";
}

std::string layer_label(std::size_t index, LayerKind k) {
  return "trunk layer " + std::to_string(index) + " (" + kind_name(k) + ")";
}

template <class T>
void add_into(BasicTensor<T>& acc, const BasicTensor<T>& x) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += x[i];
}

}  // namespace

// ---------------------------------------------------------------- ArchSpec

ArchSpec ArchSpec::default_arch(Dim height, Dim width) {
  ArchSpec a;
  a.in_height = height;
  a.in_width = width;
  a.trunk = {LayerSpec::conv(32, 3, 1, 1), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
             LayerSpec::conv(64, 3, 1, 1), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
             LayerSpec::flatten(),         LayerSpec::dense(128), LayerSpec::relu()};
  return a;
}

ArchSpec ArchSpec::small(Dim height, Dim width) {
  ArchSpec a;
  a.in_height = height;
  a.in_width = width;
  a.trunk = {LayerSpec::conv(4, 3, 1, 1), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
             LayerSpec::conv(8, 3, 1, 1), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
             LayerSpec::flatten(),        LayerSpec::dense(16), LayerSpec::relu()};
  return a;
}

std::vector<Shape> ArchSpec::shape_chain() const {
  std::vector<Shape> chain;
  chain.push_back({in_channels, in_height, in_width});
  checked_numel(chain.back());
  if (base_classes < 1 || exp_classes < 1) throw ShapeError("head sizes must be >= 1");
  bool flattened = false;
  for (std::size_t i = 0; i < trunk.size(); ++i) {
    const LayerSpec& l = trunk[i];
    const Shape& in = chain.back();
    Shape out;
    switch (l.kind) {
      case LayerKind::Conv: {
        if (flattened) throw ShapeError(layer_label(i, l.kind) + ": convolution after flatten");
        if (l.units < 1 || l.kernel < 1) throw ShapeError(layer_label(i, l.kind) + ": needs filters and kernel >= 1");
        ConvGeometry g{in[0], in[1], in[2], l.kernel, l.kernel, l.stride, l.padding};
        try {
          g.validate();
        } catch (const ShapeError& e) {
          throw ShapeError(layer_label(i, l.kind) + ": " + e.what());
        }
        out = {l.units, g.out_height(), g.out_width()};
        break;
      }
      case LayerKind::Relu: out = in; break;
      case LayerKind::MaxPool:
        if (flattened) throw ShapeError(layer_label(i, l.kind) + ": pooling after flatten");
        if (l.kernel < 1 || l.stride < 1) throw ShapeError(layer_label(i, l.kind) + ": window and stride must be >= 1");
        if (in[1] < l.kernel || in[2] < l.kernel) {
          throw ShapeError(layer_label(i, l.kind) + ": window " + std::to_string(l.kernel) + " larger than input " +
                           shape_to_string(in));
        }
        out = {in[0], (in[1] - l.kernel) / l.stride + 1, (in[2] - l.kernel) / l.stride + 1};
        break;
      case LayerKind::Flatten:
        if (flattened) throw ShapeError(layer_label(i, l.kind) + ": second flatten");
        flattened = true;
        out = {static_cast<Dim>(checked_numel(in))};
        break;
      case LayerKind::Dense:
        if (!flattened) throw ShapeError(layer_label(i, l.kind) + ": dense layer before flatten");
        if (l.units < 1) throw ShapeError(layer_label(i, l.kind) + ": needs units >= 1");
        out = {l.units};
        break;
    }
    chain.push_back(std::move(out));
  }
  if (!flattened) throw ShapeError("trunk has no flatten layer");
  return chain;
}

Dim ArchSpec::feature_width() const { return shape_chain().back()[0]; }

std::string ArchSpec::describe() const {
  std::ostringstream os;
  os << "input " << in_channels << ' ' << in_height << ' ' << in_width << '\n';
  for (const LayerSpec& l : trunk) {
    os << kind_name(l.kind);
    switch (l.kind) {
      case LayerKind::Conv: os << ' ' << l.units << ' ' << l.kernel << ' ' << l.stride << ' ' << l.padding; break;
      case LayerKind::MaxPool: os << ' ' << l.kernel << ' ' << l.stride; break;
      case LayerKind::Dense: os << ' ' << l.units; break;
      default: break;
    }
    os << '\n';
  }
  os << "heads " << base_classes << ' ' << exp_classes << '\n';
  return os.str();
}

ArchSpec ArchSpec::parse(const std::string& text) {
  ArchSpec a;
  a.trunk.clear();
  std::istringstream is(text);
  std::string line;
  bool have_input = false, have_heads = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    auto need = [&](bool ok) {
      if (!ok || have_heads) throw FormatError("malformed architecture line: '" + line + "'");
    };
    if (kind == "input") {
      need(!have_input && static_cast<bool>(ls >> a.in_channels >> a.in_height >> a.in_width));
      have_input = true;
      continue;
    }
    need(have_input);
    if (kind == "conv") {
      LayerSpec l = LayerSpec::conv(0, 0);
      need(static_cast<bool>(ls >> l.units >> l.kernel >> l.stride >> l.padding));
      a.trunk.push_back(l);
    } else if (kind == "relu") {
      a.trunk.push_back(LayerSpec::relu());
    } else if (kind == "maxpool") {
      LayerSpec l = LayerSpec::maxpool(0, 0);
      need(static_cast<bool>(ls >> l.kernel >> l.stride));
      a.trunk.push_back(l);
    } else if (kind == "flatten") {
      a.trunk.push_back(LayerSpec::flatten());
    } else if (kind == "dense") {
      LayerSpec l = LayerSpec::dense(0);
      need(static_cast<bool>(ls >> l.units));
      a.trunk.push_back(l);
    } else if (kind == "heads") {
      need(static_cast<bool>(ls >> a.base_classes >> a.exp_classes));
      have_heads = true;
    } else {
      throw FormatError("unknown layer kind '" + kind + "' in architecture");
    }
  }
  if (!have_input || !have_heads) throw FormatError("architecture block missing input or heads line");
  try {
    a.shape_chain();
  } catch (const ShapeError& e) {
    throw FormatError(std::string("inconsistent architecture: ") + e.what());
  }
  return a;
}

// ------------------------------------------------------------------- Model

template <class T>
Model<T>::Model(ArchSpec arch) : arch_(std::move(arch)) {
  const std::vector<Shape> chain = arch_.shape_chain();
  for (std::size_t i = 0; i < arch_.trunk.size(); ++i) {
    const LayerSpec& l = arch_.trunk[i];
    const Shape& in = chain[i];
    switch (l.kind) {
      case LayerKind::Conv:
        trunk_.emplace_back(ConvLayer<T>{BasicTensor<T>({l.units, in[0], l.kernel, l.kernel}),
                                         BasicTensor<T>({l.units}), l.stride, l.padding});
        break;
      case LayerKind::Relu: trunk_.emplace_back(ReluLayer{}); break;
      case LayerKind::MaxPool: trunk_.emplace_back(MaxPoolLayer{l.kernel, l.stride}); break;
      case LayerKind::Flatten: trunk_.emplace_back(FlattenLayer{}); break;
      case LayerKind::Dense:
        trunk_.emplace_back(DenseLayer<T>{BasicTensor<T>({l.units, in[0]}), BasicTensor<T>({l.units})});
        break;
    }
  }
  const Dim f = chain.back()[0];
  base_head_ = DenseLayer<T>{BasicTensor<T>({arch_.base_classes, f}), BasicTensor<T>({arch_.base_classes})};
  exp_head_ = DenseLayer<T>{BasicTensor<T>({arch_.exp_classes, f}), BasicTensor<T>({arch_.exp_classes})};
}

template <class T>
Model<T> Model<T>::zeros(const ArchSpec& arch) {
  return Model(arch);
}

template <class T>
Model<T> Model<T>::initialize(const ArchSpec& arch, std::uint64_t seed) {
  Model m(arch);
  Rng rng = Rng::substream(seed, stream::kInit);
  auto params = m.parameters();
  // parameters() alternates weight, bias; only weights are drawn.
  for (std::size_t i = 0; i < params.size(); i += 2) {
    BasicTensor<T>& w = *params[i];
    const double fan_in = static_cast<double>(w.size() / static_cast<std::size_t>(w.dim(0)));
    const double bound = std::sqrt(6.0 / fan_in);
    for (T& v : w.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  }
  return m;
}

template <class T>
std::vector<BasicTensor<T>*> Model<T>::parameters() {
  std::vector<BasicTensor<T>*> out;
  for (auto& layer : trunk_) {
    if (auto* c = std::get_if<ConvLayer<T>>(&layer)) {
      out.push_back(&c->weights);
      out.push_back(&c->bias);
    } else if (auto* d = std::get_if<DenseLayer<T>>(&layer)) {
      out.push_back(&d->weights);
      out.push_back(&d->bias);
    }
  }
  out.push_back(&base_head_.weights);
  out.push_back(&base_head_.bias);
  out.push_back(&exp_head_.weights);
  out.push_back(&exp_head_.bias);
  return out;
}

template <class T>
std::vector<const BasicTensor<T>*> Model<T>::parameters() const {
  auto mut = const_cast<Model*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

template <class T>
std::vector<std::string> Model<T>::parameter_names() const {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < trunk_.size(); ++i) {
    const char* kind = std::holds_alternative<ConvLayer<T>>(trunk_[i])    ? "conv"
                       : std::holds_alternative<DenseLayer<T>>(trunk_[i]) ? "dense"
                                                                           : nullptr;
    if (!kind) continue;
    const std::string prefix = "trunk." + std::to_string(i) + "." + kind;
    names.push_back(prefix + ".weight");
    names.push_back(prefix + ".bias");
  }
  names.insert(names.end(), {"base_head.weight", "base_head.bias", "exp_head.weight", "exp_head.bias"});
  return names;
}

template <class T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->size();
  return n;
}

template <class T>
Gradients<T> Model<T>::zero_gradients() const {
  Gradients<T> g;
  for (const auto* p : parameters()) g.emplace_back(p->shape());
  return g;
}

template <class T>
template <class U>
Model<U> Model<T>::cast() const {
  Model<U> out(arch_);
  auto src = parameters();
  auto dst = out.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = src[i]->template cast<U>();
  return out;
}

// ----------------------------------------------------------------- forward

template <class T>
BatchOutput<T> model_forward_batch(const Model<T>& model, std::span<const BasicTensor<T>> images, bool keep_trace) {
  const ArchSpec& arch = model.arch();
  const Shape expected{arch.in_channels, arch.in_height, arch.in_width};
  const Dim B = static_cast<Dim>(images.size());
  if (B == 0) throw ShapeError("model_forward: empty batch");
  for (const auto& img : images) {
    if (img.shape() != expected) {
      throw ShapeError("model input: expected " + shape_to_string(expected) + ", got " + shape_to_string(img.shape()));
    }
  }

  BatchOutput<T> result;
  ForwardTrace<T>& trace = result.trace;
  trace.batch = B;
  if (keep_trace) trace.layers.resize(model.trunk().size());

  std::vector<BasicTensor<T>> spatial(images.begin(), images.end());
  BasicTensor<T> matrix;
  bool vector_stage = false;

  for (std::size_t li = 0; li < model.trunk().size(); ++li) {
    const Layer<T>& layer = model.trunk()[li];
    LayerCache<T>* cache = keep_trace ? &trace.layers[li] : nullptr;
    if (const auto* conv = std::get_if<ConvLayer<T>>(&layer)) {
      std::vector<BasicTensor<T>> out(spatial.size());
      parallel_for(B, [&](Dim b) { out[b] = conv_forward(*conv, spatial[b]); });
      if (cache) cache->sample_inputs = std::move(spatial);
      spatial = std::move(out);
    } else if (std::holds_alternative<ReluLayer>(layer)) {
      if (vector_stage) {
        BasicTensor<T> out = relu_forward(matrix);
        if (cache) cache->matrix_input = std::move(matrix);
        matrix = std::move(out);
      } else {
        std::vector<BasicTensor<T>> out(spatial.size());
        parallel_for(B, [&](Dim b) { out[b] = relu_forward(spatial[b]); });
        if (cache) cache->sample_inputs = std::move(spatial);
        spatial = std::move(out);
      }
    } else if (const auto* pool = std::get_if<MaxPoolLayer>(&layer)) {
      std::vector<PoolResult<T>> out(spatial.size());
      parallel_for(B, [&](Dim b) { out[b] = maxpool_forward(spatial[b], pool->window, pool->stride); });
      if (cache) cache->pool.resize(spatial.size());
      for (Dim b = 0; b < B; ++b) {
        spatial[b] = std::move(out[b].output);
        if (cache) cache->pool[b] = std::move(out[b].indices);
      }
    } else if (std::holds_alternative<FlattenLayer>(layer)) {
      const Dim f = static_cast<Dim>(spatial.front().size());
      matrix = BasicTensor<T>({B, f});
      for (Dim b = 0; b < B; ++b) std::copy(spatial[b].data().begin(), spatial[b].data().end(), matrix.ptr() + b * f);
      spatial.clear();
      vector_stage = true;
    } else if (const auto* dense = std::get_if<DenseLayer<T>>(&layer)) {
      BasicTensor<T> out = dense_forward_batch(*dense, matrix);
      if (cache) cache->matrix_input = std::move(matrix);
      matrix = std::move(out);
    }
  }

  result.base_logits = dense_forward_batch(model.base_head(), matrix);
  result.exp_logits = dense_forward_batch(model.exp_head(), matrix);
  if (keep_trace) trace.features = std::move(matrix);
  return result;
}

template <class T>
Gradients<T> model_backward_batch(const Model<T>& model, const ForwardTrace<T>& trace,
                                  const BasicTensor<T>& grad_base_logits, const BasicTensor<T>& grad_exp_logits) {
  const ArchSpec& arch = model.arch();
  const Dim B = trace.batch;
  if (trace.layers.size() != model.trunk().size() || trace.features.rank() != 2 || trace.features.dim(0) != B) {
    throw ShapeError("model_backward: trace does not belong to this model (was it recorded with keep_trace?)");
  }
  if (grad_base_logits.shape() != Shape{B, arch.base_classes} || grad_exp_logits.shape() != Shape{B, arch.exp_classes}) {
    throw ShapeError("model_backward: head gradients " + shape_to_string(grad_base_logits.shape()) + " / " +
                     shape_to_string(grad_exp_logits.shape()) + " do not match batch of " + std::to_string(B));
  }
  const std::vector<Shape> chain = arch.shape_chain();

  Gradients<T> grads = model.zero_gradients();
  std::size_t head_slot = grads.size() - 4;

  DenseGradients<T> gb = dense_backward_batch(model.base_head(), grad_base_logits, trace.features);
  DenseGradients<T> ge = dense_backward_batch(model.exp_head(), grad_exp_logits, trace.features);
  grads[head_slot] = std::move(gb.weights);
  grads[head_slot + 1] = std::move(gb.bias);
  grads[head_slot + 2] = std::move(ge.weights);
  grads[head_slot + 3] = std::move(ge.bias);

  BasicTensor<T> matrix = std::move(gb.input);
  add_into(matrix, ge.input);
  std::vector<BasicTensor<T>> spatial;

  std::size_t slot = head_slot;
  for (std::size_t li = model.trunk().size(); li-- > 0;) {
    const Layer<T>& layer = model.trunk()[li];
    const LayerCache<T>& cache = trace.layers[li];
    const bool need_input = li > 0;
    if (const auto* dense = std::get_if<DenseLayer<T>>(&layer)) {
      DenseGradients<T> g = dense_backward_batch(*dense, matrix, cache.matrix_input, need_input);
      slot -= 2;
      grads[slot] = std::move(g.weights);
      grads[slot + 1] = std::move(g.bias);
      matrix = std::move(g.input);
    } else if (std::holds_alternative<ReluLayer>(layer)) {
      if (!cache.matrix_input.empty()) {
        matrix = relu_backward(matrix, cache.matrix_input);
      } else {
        parallel_for(B, [&](Dim b) { spatial[b] = relu_backward(spatial[b], cache.sample_inputs[b]); });
      }
    } else if (std::holds_alternative<FlattenLayer>(layer)) {
      const Shape& in = chain[li];
      const Dim f = matrix.dim(1);
      spatial.assign(static_cast<std::size_t>(B), BasicTensor<T>());
      for (Dim b = 0; b < B; ++b) {
        std::vector<T> row(matrix.ptr() + b * f, matrix.ptr() + (b + 1) * f);
        spatial[b] = BasicTensor<T>(in, std::move(row));
      }
      matrix = BasicTensor<T>();
    } else if (std::holds_alternative<MaxPoolLayer>(layer)) {
      parallel_for(B, [&](Dim b) { spatial[b] = maxpool_backward(spatial[b], cache.pool[b]); });
    } else if (const auto* conv = std::get_if<ConvLayer<T>>(&layer)) {
      std::vector<ConvGradients<T>> per(spatial.size());
      parallel_for(B, [&](Dim b) { per[b] = conv_backward(*conv, spatial[b], cache.sample_inputs[b], need_input); });
      slot -= 2;
      BasicTensor<T> gw = std::move(per[0].weights);
      BasicTensor<T> gbias = std::move(per[0].bias);
      for (Dim b = 1; b < B; ++b) {
        add_into(gw, per[b].weights);
        add_into(gbias, per[b].bias);
      }
      grads[slot] = std::move(gw);
      grads[slot + 1] = std::move(gbias);
      if (need_input) {
        for (Dim b = 0; b < B; ++b) spatial[b] = std::move(per[b].input);
      }
    }
  }
  return grads;
}

template <class T>
SampleOutput<T> model_forward(const Model<T>& model, const BasicTensor<T>& image) {
  BatchOutput<T> out = model_forward_batch(model, std::span<const BasicTensor<T>>(&image, 1), true);
  return {std::move(out.base_logits).reshaped({model.arch().base_classes}),
          std::move(out.exp_logits).reshaped({model.arch().exp_classes}), std::move(out.trace)};
}

template <class T>
Gradients<T> model_backward(const Model<T>& model, const ForwardTrace<T>& trace,
                            const BasicTensor<T>& grad_base_logits, const BasicTensor<T>& grad_exp_logits) {
  if (trace.batch != 1) throw ShapeError("model_backward: trace holds a batch; use model_backward_batch");
  if (grad_base_logits.rank() != 1 || grad_exp_logits.rank() != 1) {
    throw ShapeError("model_backward: head gradients must be rank-1");
  }
  return model_backward_batch(model, trace, grad_base_logits.reshaped({1, grad_base_logits.dim(0)}),
                              grad_exp_logits.reshaped({1, grad_exp_logits.dim(0)}));
}

template <class T>
std::vector<std::int64_t> activation_pattern(const ForwardTrace<T>& trace) {
  std::vector<std::int64_t> pattern;
  auto push_mask = [&](const BasicTensor<T>& t) {
    for (T v : t.data()) pattern.push_back(v > T{0} ? 1 : 0);
  };
  for (const LayerCache<T>& c : trace.layers) {
    // Conv/dense caches hold post-ReLU values; their masks add nothing but
    // never hide a change.
    for (const auto& t : c.sample_inputs) push_mask(t);
    if (!c.matrix_input.empty()) push_mask(c.matrix_input);
    for (const auto& p : c.pool) pattern.insert(pattern.end(), p.argmax.begin(), p.argmax.end());
  }
  return pattern;
}

#define EXPOCNN_INSTANTIATE_MODEL(T)                                                                      \
  template class Model<T>;                                                                                \
  template BatchOutput<T> model_forward_batch<T>(const Model<T>&, std::span<const BasicTensor<T>>, bool); \
  template Gradients<T> model_backward_batch<T>(const Model<T>&, const ForwardTrace<T>&,                  \
                                                const BasicTensor<T>&, const BasicTensor<T>&);            \
  template SampleOutput<T> model_forward<T>(const Model<T>&, const BasicTensor<T>&);                      \
  template Gradients<T> model_backward<T>(const Model<T>&, const ForwardTrace<T>&, const BasicTensor<T>&, \
                                          const BasicTensor<T>&);                                         \
  template std::vector<std::int64_t> activation_pattern<T>(const ForwardTrace<T>&);

EXPOCNN_INSTANTIATE_MODEL(float)
EXPOCNN_INSTANTIATE_MODEL(double)

template Model<double> Model<float>::cast<double>() const;
template Model<float> Model<double>::cast<float>() const;
template Model<float> Model<float>::cast<float>() const;
template Model<double> Model<double>::cast<double>() const;

#undef EXPOCNN_INSTANTIATE_MODEL

}  // namespace expocnn
