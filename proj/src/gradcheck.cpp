#include "expocnn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "expocnn/csv.hpp"
#include "expocnn/loss.hpp"

namespace expocnn {

namespace {

struct Probe {
  double loss;
  std::vector<std::int64_t> pattern;
};

Probe probe(const Model<double>& model, const TensorD& image, Dim base_label, Dim exp_label) {
  SampleOutput<double> out = model_forward(model, image);
  return {combined_loss(out.base_logits, out.exp_logits, base_label, exp_label).total,
          activation_pattern(out.trace)};
}

}  // namespace

bool GradCheckReport::all_pass() const {
  return !entries.empty() && std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.pass; });
}

double GradCheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, e.max_rel_error);
  return m;
}

double sample_loss(const Model<double>& model, const TensorD& image, Dim base_label, Dim exp_label) {
  BatchOutput<double> out = model_forward_batch(model, std::span<const TensorD>(&image, 1), false);
  const TensorD b = std::move(out.base_logits).reshaped({model.arch().base_classes});
  const TensorD e = std::move(out.exp_logits).reshaped({model.arch().exp_classes});
  return combined_loss(b, e, base_label, exp_label).total;
}

Gradients<double> analytic_gradients(const Model<double>& model, const TensorD& image, Dim base_label,
                                     Dim exp_label) {
  SampleOutput<double> out = model_forward(model, image);
  return model_backward(model, out.trace, softmax_ce_grad(out.base_logits, base_label),
                        softmax_ce_grad(out.exp_logits, exp_label));
}

GradCheckReport compare_gradients(const Model<double>& model, const TensorD& image, Dim base_label, Dim exp_label,
                                  const Gradients<double>& analytic, const GradCheckOptions& options) {
  Model<double> work = model;
  auto params = work.parameters();
  const auto names = work.parameter_names();
  if (analytic.size() != params.size()) throw ShapeError("compare_gradients: gradient tree does not match model");

  const std::vector<std::int64_t> base_pattern = probe(work, image, base_label, exp_label).pattern;

  GradCheckReport report;
  report.tolerance = options.tolerance;
  for (std::size_t t = 0; t < params.size(); ++t) {
    TensorD& p = *params[t];
    require_same_shape(p, analytic[t], "compare_gradients");
    GradCheckEntry entry{names[t]};
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double original = p[j];
      p[j] = original + options.epsilon;
      const Probe plus = probe(work, image, base_label, exp_label);
      p[j] = original - options.epsilon;
      const Probe minus = probe(work, image, base_label, exp_label);
      p[j] = original;

      const double numeric = (plus.loss - minus.loss) / (2.0 * options.epsilon);
      const double a = analytic[t][j];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.denominator_floor});
      const double rel = std::abs(a - numeric) / denom;
      const bool near_kink = plus.pattern != base_pattern || minus.pattern != base_pattern;
      // Across a kink the difference quotient mixes two linear pieces, so a
      // mismatch there says nothing about the backward pass.
      if (near_kink && rel >= options.tolerance) {
        ++entry.skipped;
        continue;
      }
      ++entry.checked;
      entry.max_rel_error = std::max(entry.max_rel_error, rel);
    }
    entry.pass = entry.checked > 0 && entry.max_rel_error < options.tolerance;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

GradCheckReport gradient_check(const Model<float>& model, const Tensor& image, Dim base_label, Dim exp_label,
                               const GradCheckOptions& options) {
  const Model<double> m64 = model.cast<double>();
  const TensorD img64 = image.cast<double>();
  const Gradients<double> analytic = analytic_gradients(m64, img64, base_label, exp_label);
  return compare_gradients(m64, img64, base_label, exp_label, analytic, options);
}

void write_gradcheck_csv(std::ostream& os, const GradCheckReport& report) {
  os << "parameter,max_rel_err,status,checked,skipped\n";
  for (const auto& e : report.entries) {
    os << e.name << ',' << format_number(e.max_rel_error) << ',' << (e.pass ? "pass" : "fail") << ',' << e.checked
       << ',' << e.skipped << '\n';
  }
}

}  // namespace expocnn
