#include "expocnn/train.hpp"

#include <algorithm>
#include <cmath>

#include "expocnn/evaluate.hpp"
#include "expocnn/loss.hpp"

namespace expocnn {

namespace {

std::uint64_t derived_seed(std::uint64_t seed, std::uint64_t tag) { return Rng::substream(seed, tag).next(); }

Tensor row_of(const Tensor& m, Dim row) {
  const Dim n = m.dim(1);
  return Tensor({n}, std::vector<float>(m.ptr() + row * n, m.ptr() + (row + 1) * n));
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw ValueError("TrainConfig: epochs must be >= 1");
  if (batch_size < 1) throw ValueError("TrainConfig: batch size must be >= 1");
  if (early_stop_patience < 1) throw ValueError("TrainConfig: patience must be >= 1");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw ValueError("TrainConfig: validation fraction must lie in (0, 1)");
  }
  if (!(adam.learning_rate > 0.0)) throw ValueError("TrainConfig: learning rate must be positive");
}

bool EarlyStopper::observe(double loss) {
  if (loss < best_ - min_delta_) {
    best_ = loss;
    stale_ = 0;
    return true;
  }
  ++stale_;
  return false;
}

void shuffle_indices(std::vector<std::int64_t>& indices, Rng& rng) {
  for (std::size_t i = indices.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(indices[i - 1], indices[j]);
  }
}

Split split_dataset(std::size_t count, double validation_fraction, std::uint64_t seed) {
  if (count < 2) throw EmptyDatasetError("training needs at least 2 samples to hold out a validation set");
  std::vector<std::int64_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = static_cast<std::int64_t>(i);
  Rng rng(derived_seed(seed, stream::kSplit));
  shuffle_indices(order, rng);
  auto n_val = static_cast<std::size_t>(std::llround(validation_fraction * static_cast<double>(count)));
  n_val = std::clamp<std::size_t>(n_val, 1, count - 1);
  Split s;
  s.validation.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  s.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  return s;
}

ArchSpec arch_for(const Dataset& data) {
  ArchSpec a = ArchSpec::default_arch(data.height, data.width);
  a.base_classes = data.base_classes();
  a.exp_classes = data.exp_classes();
  return a;
}

void check_compatible(const ArchSpec& arch, const Dataset& data) {
  if (data.samples.empty()) throw EmptyDatasetError("dataset is empty");
  const Shape expected{arch.in_channels, arch.in_height, arch.in_width};
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const Sample& s = data.samples[i];
    if (s.image.shape() != expected) {
      throw ShapeError("sample " + std::to_string(i) + " image " + shape_to_string(s.image.shape()) +
                       " does not match model input " + shape_to_string(expected));
    }
    if (s.base_label < 0 || s.base_label >= arch.base_classes || s.exp_label < 0 || s.exp_label >= arch.exp_classes) {
      throw ValueError("sample " + std::to_string(i) + " labels (" + std::to_string(s.base_label) + ", " +
                       std::to_string(s.exp_label) + ") outside model heads (" + std::to_string(arch.base_classes) +
                       ", " + std::to_string(arch.exp_classes) + ")");
    }
  }
}

std::vector<Tensor> gather_images(const Dataset& data, std::span<const std::int64_t> indices) {
  std::vector<Tensor> out;
  out.reserve(indices.size());
  for (std::int64_t i : indices) out.push_back(data.samples[static_cast<std::size_t>(i)].image);
  return out;
}

Trainer::Trainer(Model<float> initial, const Dataset& data, TrainConfig config, TrainHooks hooks)
    : data_(data),
      config_(std::move(config)),
      hooks_(std::move(hooks)),
      model_(std::move(initial)),
      stopper_(config_.early_stop_patience, config_.early_stop_min_delta) {
  config_.validate();
  check_compatible(model_.arch(), data_);
  split_ = split_dataset(data_.samples.size(), config_.validation_fraction, config_.seed);
  const auto params = std::as_const(model_).parameters();
  adam_ = AdamState::for_parameters(params, config_.adam);
}

void Trainer::resume(AdamState state, int completed_epochs) {
  const auto params = std::as_const(model_).parameters();
  if (state.m.size() != params.size()) throw ArchitectureMismatchError("optimizer state does not match the model");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].shape() != params[i]->shape() || state.v[i].shape() != params[i]->shape()) {
      throw ArchitectureMismatchError("optimizer state tensor " + std::to_string(i) + " does not match the model");
    }
  }
  adam_ = std::move(state);
  epoch_ = completed_epochs;
}

bool Trainer::finished() const { return epoch_ >= config_.epochs || stopper_.should_stop(); }

EpochRecord Trainer::run_epoch() {
  const ArchSpec& arch = model_.arch();
  std::vector<std::int64_t> order = split_.train;
  Rng shuffle_rng = Rng::substream(derived_seed(config_.seed, stream::kEpochShuffle), static_cast<std::uint64_t>(epoch_));
  shuffle_indices(order, shuffle_rng);

  double sum_base = 0.0, sum_exp = 0.0;
  const auto batch = static_cast<std::size_t>(config_.batch_size);
  for (std::size_t start = 0; start < order.size(); start += batch) {
    const std::span<const std::int64_t> idx(order.data() + start, std::min(batch, order.size() - start));
    const Dim B = static_cast<Dim>(idx.size());
    const std::vector<Tensor> images = gather_images(data_, idx);
    BatchOutput<float> out = model_forward_batch(model_, std::span<const Tensor>(images), true);

    Tensor grad_base({B, arch.base_classes});
    Tensor grad_exp({B, arch.exp_classes});
    const float inv_b = 1.0f / static_cast<float>(B);
    for (Dim b = 0; b < B; ++b) {
      const Sample& s = data_.samples[static_cast<std::size_t>(idx[static_cast<std::size_t>(b)])];
      const Tensor bl = row_of(out.base_logits, b);
      const Tensor el = row_of(out.exp_logits, b);
      sum_base += softmax_ce(bl, s.base_label);
      sum_exp += softmax_ce(el, s.exp_label);
      const Tensor gb = softmax_ce_grad(bl, s.base_label);
      const Tensor ge = softmax_ce_grad(el, s.exp_label);
      for (Dim c = 0; c < arch.base_classes; ++c) grad_base.at(b, c) = gb[static_cast<std::size_t>(c)] * inv_b;
      for (Dim c = 0; c < arch.exp_classes; ++c) grad_exp.at(b, c) = ge[static_cast<std::size_t>(c)] * inv_b;
    }
    const Gradients<float> grads = model_backward_batch(model_, out.trace, grad_base, grad_exp);
    const auto params = model_.parameters();
    adam_step(params, grads, adam_);
  }
  ++epoch_;

  EpochRecord rec;
  rec.epoch = epoch_;
  const double n = static_cast<double>(order.size());
  rec.train_base = sum_base / n;
  rec.train_exp = sum_exp / n;
  rec.train_total = rec.train_base + rec.train_exp;
  if (hooks_.validation_loss) {
    rec.val_total = hooks_.validation_loss(model_, epoch_);
  } else {
    const EvalReport val = evaluate(model_, data_, split_.validation);
    rec.val_total = val.mean_loss;
    rec.val_base_acc = val.base_accuracy;
    rec.val_exp_acc = val.exp_accuracy;
  }

  if (rec.val_total < best_loss_) {
    best_loss_ = rec.val_total;
    best_epoch_ = epoch_;
    best_model_ = model_;
  }
  stopper_.observe(rec.val_total);
  history_.push_back(rec);
  if (hooks_.on_epoch) hooks_.on_epoch(rec);
  return rec;
}

TrainResult Trainer::run() {
  while (!finished()) run_epoch();
  TrainResult r{best_model_ ? *best_model_ : model_, history_, best_epoch_, stopper_.should_stop() && epoch_ < config_.epochs};
  return r;
}

TrainResult train(std::uint64_t model_init_seed, const Dataset& data, const TrainConfig& config, TrainHooks hooks) {
  if (data.samples.empty()) throw EmptyDatasetError("cannot train on an empty dataset");
  Trainer trainer(Model<float>::initialize(arch_for(data), model_init_seed), data, config, std::move(hooks));
  return trainer.run();
}

}  // namespace expocnn
