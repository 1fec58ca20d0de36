#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "expocnn/adam.hpp"
#include "expocnn/datagen.hpp"
#include "expocnn/model.hpp"

namespace expocnn {

struct TrainConfig {
  int epochs = 50;
  int batch_size = 32;
  AdamConfig adam;
  int early_stop_patience = 5;
  double early_stop_min_delta = 1e-4;
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_total = 0.0;
  double train_base = 0.0;
  double train_exp = 0.0;
  double val_total = 0.0;
  double val_base_acc = 0.0;
  double val_exp_acc = 0.0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

/// Patience counter on a monitored loss. An epoch counts as an improvement
/// when it beats the best seen so far by more than min_delta; `patience`
/// consecutive non-improving epochs trigger the stop.
class EarlyStopper {
 public:
  EarlyStopper(int patience, double min_delta) : patience_(patience), min_delta_(min_delta) {}

  /// Returns true if `loss` counted as an improvement.
  bool observe(double loss);
  bool should_stop() const { return stale_ >= patience_; }
  double best() const { return best_; }
  int stale_epochs() const { return stale_; }

 private:
  int patience_;
  double min_delta_;
  double best_ = std::numeric_limits<double>::infinity();
  int stale_ = 0;
};

struct TrainHooks {
  /// Replaces the validation-loss evaluation (used to drive early stopping in
  /// tests). Receives the current model and the 1-based epoch number.
  std::function<double(const Model<float>&, int)> validation_loss;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  Model<float> model;  // parameters of the epoch with the lowest validation loss
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  bool stopped_early = false;
};

/// Indices of the train and validation partitions after the seeded shuffle.
struct Split {
  std::vector<std::int64_t> train;
  std::vector<std::int64_t> validation;
};

Split split_dataset(std::size_t count, double validation_fraction, std::uint64_t seed);

/// Seeded Fisher-Yates permutation of `indices`.
void shuffle_indices(std::vector<std::int64_t>& indices, Rng& rng);

/// Default architecture sized to the dataset's image and label ranges.
ArchSpec arch_for(const Dataset& data);

/// Throws if any label falls outside the model's head sizes or the image
/// shape does not match the model input.
void check_compatible(const ArchSpec& arch, const Dataset& data);

/// Mini-batch Adam training with early stopping. One instance owns the
/// current parameters and optimizer state, so training can be paused after
/// any epoch, checkpointed, and resumed bit-for-bit.
class Trainer {
 public:
  Trainer(Model<float> initial, const Dataset& data, TrainConfig config, TrainHooks hooks = {});

  /// Continue from saved optimizer state; `completed_epochs` epochs are
  /// treated as already run (their shuffles are skipped, not replayed).
  void resume(AdamState state, int completed_epochs);

  bool finished() const;
  EpochRecord run_epoch();
  TrainResult run();

  const Model<float>& current() const { return model_; }
  const AdamState& optimizer() const { return adam_; }
  int completed_epochs() const { return epoch_; }

 private:
  const Dataset& data_;
  TrainConfig config_;
  TrainHooks hooks_;
  Model<float> model_;
  AdamState adam_;
  Split split_;
  EarlyStopper stopper_;
  std::optional<Model<float>> best_model_;
  double best_loss_ = std::numeric_limits<double>::infinity();
  int best_epoch_ = 0;
  int epoch_ = 0;
  std::vector<EpochRecord> history_;
};

/// train(model-init-seed, dataset, config): builds arch_for(dataset),
/// initialises it from `model_init_seed`, and runs a Trainer to completion.
TrainResult train(std::uint64_t model_init_seed, const Dataset& data, const TrainConfig& config,
                  TrainHooks hooks = {});

/// Images of the selected samples, in order.
std::vector<Tensor> gather_images(const Dataset& data, std::span<const std::int64_t> indices);

}  // namespace expocnn
