#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "expocnn/model.hpp"

namespace expocnn {

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  /// Coordinates whose +/- eps probes land on a different ReLU mask or pooling
  /// argmax than the unperturbed point (the loss is not smooth across them).
  std::size_t skipped = 0;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 0.0;

  bool all_pass() const;
  double max_rel_error() const;
};

struct GradCheckOptions {
  double epsilon = 1e-3;
  double tolerance = 1e-3;
  double denominator_floor = 1e-8;
};

/// Loss used by the check: combined two-head cross-entropy with unit weights.
double sample_loss(const Model<double>& model, const TensorD& image, Dim base_label, Dim exp_label);

/// Analytic gradient of sample_loss in 64-bit.
Gradients<double> analytic_gradients(const Model<double>& model, const TensorD& image, Dim base_label,
                                     Dim exp_label);

/// Compares `analytic` against central differences (L(p+eps) - L(p-eps)) / 2eps
/// of sample_loss for every coordinate. Relative error is
/// |a - n| / max(|a|, |n|, floor).
GradCheckReport compare_gradients(const Model<double>& model, const TensorD& image, Dim base_label, Dim exp_label,
                                  const Gradients<double>& analytic, const GradCheckOptions& options = {});

/// Full harness: promotes `model` to 64-bit, computes analytic gradients, and
/// compares them with finite differences.
GradCheckReport gradient_check(const Model<float>& model, const Tensor& image, Dim base_label, Dim exp_label,
                               const GradCheckOptions& options = {});

/// CSV rows: parameter,max_rel_err,status,checked,skipped.
void write_gradcheck_csv(std::ostream& os, const GradCheckReport& report);

}  // namespace expocnn
