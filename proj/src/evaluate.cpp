#include "expocnn/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "expocnn/loss.hpp"
#include "expocnn/train.hpp"

namespace expocnn {

namespace {

constexpr std::size_t kEvalBatch = 64;

std::span<const float> row(const Tensor& m, Dim r) {
  const auto n = static_cast<std::size_t>(m.dim(1));
  return {m.ptr() + static_cast<std::size_t>(r) * n, n};
}

}  // namespace

std::int64_t argmax(std::span<const float> values) {
  if (values.empty()) throw ValueError("argmax of an empty range");
  return std::max_element(values.begin(), values.end()) - values.begin();
}

EvalReport evaluate(const Model<float>& model, const Dataset& data, std::span<const std::int64_t> indices) {
  std::vector<std::int64_t> all;
  if (indices.empty()) {
    all.resize(data.samples.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<std::int64_t>(i);
    indices = all;
  }
  if (indices.empty()) throw EmptyDatasetError("cannot evaluate on an empty dataset");
  const ArchSpec& arch = model.arch();

  EvalReport r;
  r.count = static_cast<std::int64_t>(indices.size());
  r.base_confusion.assign(static_cast<std::size_t>(arch.base_classes),
                          std::vector<std::int64_t>(static_cast<std::size_t>(arch.base_classes), 0));
  r.exp_confusion.assign(static_cast<std::size_t>(arch.exp_classes),
                         std::vector<std::int64_t>(static_cast<std::size_t>(arch.exp_classes), 0));
  std::int64_t base_ok = 0, exp_ok = 0, joint_ok = 0;
  double loss = 0.0;

  for (std::size_t start = 0; start < indices.size(); start += kEvalBatch) {
    const auto chunk = indices.subspan(start, std::min(kEvalBatch, indices.size() - start));
    for (std::int64_t i : chunk) {
      const Sample& s = data.samples.at(static_cast<std::size_t>(i));
      if (s.base_label < 0 || s.base_label >= arch.base_classes || s.exp_label < 0 || s.exp_label >= arch.exp_classes) {
        throw ValueError("sample " + std::to_string(i) + " has labels outside the model's heads");
      }
    }
    const std::vector<Tensor> images = gather_images(data, chunk);
    const BatchOutput<float> out = model_forward_batch(model, std::span<const Tensor>(images), false);
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      const Sample& s = data.samples[static_cast<std::size_t>(chunk[b])];
      const auto br = row(out.base_logits, static_cast<Dim>(b));
      const auto er = row(out.exp_logits, static_cast<Dim>(b));
      const std::int64_t pb = argmax(br), pe = argmax(er);
      r.base_confusion[static_cast<std::size_t>(s.base_label)][static_cast<std::size_t>(pb)]++;
      r.exp_confusion[static_cast<std::size_t>(s.exp_label)][static_cast<std::size_t>(pe)]++;
      const bool bok = pb == s.base_label, eok = pe == s.exp_label;
      base_ok += bok;
      exp_ok += eok;
      joint_ok += bok && eok;
      const Tensor bt({arch.base_classes}, std::vector<float>(br.begin(), br.end()));
      const Tensor et({arch.exp_classes}, std::vector<float>(er.begin(), er.end()));
      loss += combined_loss(bt, et, s.base_label, s.exp_label).total;
    }
  }
  const double n = static_cast<double>(r.count);
  r.base_accuracy = static_cast<double>(base_ok) / n;
  r.exp_accuracy = static_cast<double>(exp_ok) / n;
  r.joint_accuracy = static_cast<double>(joint_ok) / n;
  r.mean_loss = loss / n;
  return r;
}

SweepAttribute parse_sweep_attribute(const std::string& name) {
  if (name == "noise") return SweepAttribute::Noise;
  if (name == "blur") return SweepAttribute::Blur;
  throw ValueError("unknown sweep attribute '" + name + "' (expected noise or blur)");
}

std::string to_string(SweepAttribute attr) { return attr == SweepAttribute::Noise ? "noise" : "blur"; }

void quantize_pixels(Dataset& data) {
  for (Sample& s : data.samples) {
    for (float& v : s.image.data()) v = static_cast<float>(std::lround(v * 255.0f)) / 255.0f;
  }
}

std::vector<SweepRow> robustness_sweep(const Model<float>& model, const GenConfig& base_config, SweepAttribute attr,
                                       std::span<const double> levels, std::int64_t per_level_count) {
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (!(levels[i] >= 0.0)) throw ValueError("sweep levels must be non-negative");
    if (i > 0 && levels[i] < levels[i - 1]) throw ValueError("sweep levels must be sorted ascending");
  }
  std::vector<SweepRow> rows;
  for (double level : levels) {
    GenConfig cfg = base_config;
    cfg.count = per_level_count;
    (attr == SweepAttribute::Noise ? cfg.noise_sigma : cfg.blur_sigma) = Range{level, level};
    Dataset ds = generate_dataset(cfg);
    quantize_pixels(ds);
    rows.push_back({level, evaluate(model, ds)});
  }
  return rows;
}

std::vector<HistogramBucket> histogram_categorical(std::span<const double> values) {
  if (values.empty()) throw EmptyDatasetError("histogram of an empty value list");
  std::map<double, std::int64_t> counts;
  for (double v : values) counts[v]++;
  std::vector<HistogramBucket> out;
  for (const auto& [v, c] : counts) out.push_back({v, v, c});
  return out;
}

std::vector<HistogramBucket> histogram_continuous(std::span<const double> values, int bins) {
  if (values.empty()) throw EmptyDatasetError("histogram of an empty value list");
  if (bins < 1) throw ValueError("histogram needs at least one bin");
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  const double lo = *mn, hi = *mx, width = (hi - lo) / bins;
  std::vector<HistogramBucket> out(static_cast<std::size_t>(bins));
  for (int b = 0; b < bins; ++b) {
    out[static_cast<std::size_t>(b)].lo = lo + width * b;
    out[static_cast<std::size_t>(b)].hi = b + 1 == bins ? hi : lo + width * (b + 1);
  }
  for (double v : values) {
    int b = width > 0.0 ? static_cast<int>(std::floor((v - lo) / width)) : bins - 1;
    b = std::clamp(b, 0, bins - 1);
    out[static_cast<std::size_t>(b)].count++;
  }
  return out;
}

}  // namespace expocnn
