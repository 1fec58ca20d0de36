#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "expocnn/datagen.hpp"
#include "expocnn/model.hpp"

namespace expocnn {

using ConfusionMatrix = std::vector<std::vector<std::int64_t>>;  // [true][predicted]

struct EvalReport {
  std::int64_t count = 0;
  double base_accuracy = 0.0;
  double exp_accuracy = 0.0;
  double joint_accuracy = 0.0;
  double mean_loss = 0.0;
  ConfusionMatrix base_confusion;
  ConfusionMatrix exp_confusion;
};

/// Index of the largest entry; the lowest index wins ties.
std::int64_t argmax(std::span<const float> values);

/// Argmax predictions, accuracies and mean combined loss over `indices` (all
/// samples when empty).
EvalReport evaluate(const Model<float>& model, const Dataset& data, std::span<const std::int64_t> indices = {});

enum class SweepAttribute { Noise, Blur };

SweepAttribute parse_sweep_attribute(const std::string& name);
std::string to_string(SweepAttribute attr);

struct SweepRow {
  double level = 0.0;
  EvalReport report;
};

/// For each level, generates `per_level_count` fresh samples from
/// `base_config` with the chosen attribute pinned to that level (other
/// attributes drawn as usual, pixels quantised to bytes like a stored
/// dataset) and evaluates them. Every level reuses the same substreams, so
/// levels differ only in the pinned attribute.
std::vector<SweepRow> robustness_sweep(const Model<float>& model, const GenConfig& base_config, SweepAttribute attr,
                                       std::span<const double> levels, std::int64_t per_level_count);

/// Rounds every pixel to the nearest multiple of 1/255, as storage does.
void quantize_pixels(Dataset& data);

struct HistogramBucket {
  double lo = 0.0;
  double hi = 0.0;  // equals lo for categorical buckets
  std::int64_t count = 0;
};

/// One bucket per distinct value, ascending.
std::vector<HistogramBucket> histogram_categorical(std::span<const double> values);

/// `bins` equal-width buckets over [min, max]; right-open except the last.
std::vector<HistogramBucket> histogram_continuous(std::span<const double> values, int bins);

}  // namespace expocnn
