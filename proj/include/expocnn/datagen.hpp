#pragma once

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

#include "expocnn/rng.hpp"
#include "expocnn/tensor.hpp"

namespace expocnn {

/// Embedded 8x12 digit bitmaps ('#' = ink).
inline constexpr int kGlyphWidth = 8;
inline constexpr int kGlyphHeight = 12;
using GlyphRows = std::array<std::string_view, kGlyphHeight>;
const std::array<GlyphRows, 10>& digit_glyphs();
int glyph_popcount(int digit);

/// Exponent glyphs are drawn at this fraction of the base glyph scale.
inline constexpr double kExponentScale = 0.6;

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct GenConfig {
  std::int64_t count = 1;
  Dim height = 64;
  Dim width = 64;
  int base_lo = 2;
  int base_hi = 9;
  int exp_lo = 0;
  int exp_hi = 9;
  Range font_scale{2.0, 3.5};
  Range noise_sigma{0.0, 0.3};
  Range blur_sigma{0.0, 2.0};
  std::uint64_t master_seed = 0;
  /// Sample i is drawn from substream (master_seed, index_offset + i), so
  /// disjoint offsets give disjoint datasets under one seed.
  std::uint64_t index_offset = 0;

  int base_classes() const { return base_hi - base_lo + 1; }
  int exp_classes() const { return exp_hi - exp_lo + 1; }
  void validate() const;
};

struct SampleMeta {
  float font_scale = 0.0f;
  float noise_sigma = 0.0f;
  float blur_sigma = 0.0f;

  friend bool operator==(const SampleMeta&, const SampleMeta&) = default;
};

struct Sample {
  Tensor image;        // [1, H, W], values in [0, 1]
  int base_label = 0;  // index into [base_lo, base_hi]
  int exp_label = 0;   // index into [exp_lo, exp_hi]
  SampleMeta meta;

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct Dataset {
  Dim height = 64;
  Dim width = 64;
  int base_lo = 2;
  int base_hi = 9;
  int exp_lo = 0;
  int exp_hi = 9;
  std::vector<Sample> samples;

  int base_classes() const { return base_hi - base_lo + 1; }
  int exp_classes() const { return exp_hi - exp_lo + 1; }
  std::size_t size() const { return samples.size(); }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// White-on-black rendering of base^exponent. The base glyph (scaled by
/// font_scale) sits left of centre, vertically centred; the exponent glyph
/// (scaled by 0.6 * font_scale) follows after a gap of one scaled pixel with
/// its top raised by a third of its height. Nearest-neighbour scaling.
/// Throws LayoutError if anything falls outside the canvas.
Tensor render_expression(int base, int exponent, double font_scale, Dim height, Dim width);

/// clamp(image + N(0, sigma^2), 0, 1) per pixel.
Tensor add_gaussian_noise(const Tensor& image, double sigma, Rng& rng);

/// Separable Gaussian blur, radius ceil(3 sigma), normalised kernel, edges
/// replicated. sigma < 0.05 returns the input unchanged.
Tensor gaussian_blur(const Tensor& image, double sigma);

/// Normalised 1-D Gaussian taps for `sigma` (length 2*ceil(3 sigma) + 1).
std::vector<double> gaussian_kernel(double sigma);

/// Sample `index` of the dataset described by `config` (render, blur, noise).
Sample generate_sample(const GenConfig& config, std::uint64_t index);

/// All `config.count` samples in index order; generation runs in parallel.
Dataset generate_dataset(const GenConfig& config);

}  // namespace expocnn
