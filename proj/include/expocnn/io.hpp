#pragma once

// Binary dataset and checkpoint files, plus CSV exports.
//
// Dataset file (little-endian):
//   "EXPD" u32 version=1 u32 count u32 H u32 W u8 base_lo u8 base_hi u8 exp_lo u8 exp_hi
//   count x { H*W u8 pixels (round(p*255)), u8 base_label, u8 exp_label,
//             f32 font_scale, f32 noise_sigma, f32 blur_sigma }
//
// Checkpoint file (little-endian):
//   "EXPM" u32 version=1 u32 arch_len arch_len bytes of ArchSpec::describe()
//   u32 n_tensors, n_tensors x { u32 rank, rank x u32 dim, f32 data... }
//   u8 has_state; if 1: f64 lr f64 beta1 f64 beta2 f64 eps u64 step
//                       u32 completed_epochs, n_tensors first moments, n_tensors second moments

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "expocnn/adam.hpp"
#include "expocnn/datagen.hpp"
#include "expocnn/evaluate.hpp"
#include "expocnn/model.hpp"
#include "expocnn/train.hpp"

namespace expocnn {

inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_dataset(const Dataset& data);
Dataset decode_dataset(std::span<const std::uint8_t> bytes);

void write_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);

/// Optimizer state saved alongside parameters so training can resume.
struct TrainingState {
  AdamState adam;
  int completed_epochs = 0;

  friend bool operator==(const TrainingState&, const TrainingState&) = default;
};

struct Checkpoint {
  Model<float> model;
  std::optional<TrainingState> state;
};

std::vector<std::uint8_t> encode_checkpoint(const Model<float>& model, const TrainingState* state = nullptr);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void write_checkpoint(const Model<float>& model, const TrainingState* state, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Loads parameters into an existing model; throws ArchitectureMismatchError
/// if the stored architecture differs from `model.arch()`.
std::optional<TrainingState> load_checkpoint_into(Model<float>& model, const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

// CSV exports. The first row is always the header.
void write_history_csv(std::ostream& os, std::span<const EpochRecord> history);
void write_sweep_csv(std::ostream& os, SweepAttribute attr, std::span<const SweepRow> rows);
void write_histogram_csv(std::ostream& os, std::span<const HistogramBucket> buckets, bool categorical);
void write_report_csv(std::ostream& os, const EvalReport& report);
void write_confusion_csv(std::ostream& os, const EvalReport& report);

}  // namespace expocnn
