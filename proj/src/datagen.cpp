#include "expocnn/datagen.hpp"

#include <algorithm>
#include <cmath>

#include "expocnn/parallel.hpp"

namespace expocnn {

namespace {

constexpr std::array<GlyphRows, 10> kGlyphs{{
    {"..####..", ".##..##.", "##....##", "##....##", "##....##", "##....##",
     "##....##", "##....##", "##....##", "##....##", ".##..##.", "..####.."},
    {"...##...", "..###...", ".####...", "...##...", "...##...", "...##...",
     "...##...", "...##...", "...##...", "...##...", "...##...", ".######."},
    {"..####..", ".##..##.", "##....##", "......##", ".....##.", "....##..",
     "...##...", "..##....", ".##.....", "##......", "##......", "########"},
    {".#####..", "##...##.", "......##", "......##", ".....##.", "..####..",
     ".....##.", "......##", "......##", "......##", "##...##.", ".#####.."},
    {".....##.", "....###.", "...####.", "..##.##.", ".##..##.", "##...##.",
     "########", ".....##.", ".....##.", ".....##.", ".....##.", ".....##."},
    {"########", "##......", "##......", "##......", "######..", ".....##.",
     "......##", "......##", "......##", "......##", "##...##.", ".#####.."},
    {"..####..", ".##.....", "##......", "##......", "######..", "###..##.",
     "##....##", "##....##", "##....##", "##....##", ".##..##.", "..####.."},
    {"########", "......##", ".....##.", ".....##.", "....##..", "....##..",
     "...##...", "...##...", "..##....", "..##....", "..##....", "..##...."},
    {"..####..", ".##..##.", "##....##", "##....##", ".##..##.", "..####..",
     ".##..##.", "##....##", "##....##", "##....##", ".##..##.", "..####.."},
    {"..####..", ".##..##.", "##....##", "##....##", "##....##", ".##..###",
     "..######", "......##", "......##", ".....##.", "....##..", ".###...."},
}};

struct Placement {
  Dim top, left, height, width;
};

Dim scaled(int master, double scale) { return std::max<Dim>(1, std::lround(master * scale)); }

void draw_glyph(Tensor& canvas, int digit, const Placement& p) {
  const GlyphRows& g = kGlyphs[static_cast<std::size_t>(digit)];
  for (Dim y = 0; y < p.height; ++y) {
    const auto& row = g[static_cast<std::size_t>(y * kGlyphHeight / p.height)];
    for (Dim x = 0; x < p.width; ++x) {
      if (row[static_cast<std::size_t>(x * kGlyphWidth / p.width)] == '#') canvas.at(0, p.top + y, p.left + x) = 1.0f;
    }
  }
}

void check_sigma(double sigma, const char* what) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
    throw ValueError(std::string(what) + ": sigma must be finite and >= 0, got " + std::to_string(sigma));
  }
}

void check_range(const Range& r, const char* what, double floor) {
  if (!(r.lo <= r.hi) || r.lo < floor || !std::isfinite(r.hi)) {
    throw ValueError(std::string("GenConfig: invalid ") + what + " range [" + std::to_string(r.lo) + ", " +
                     std::to_string(r.hi) + "]");
  }
}

}  // namespace

const std::array<GlyphRows, 10>& digit_glyphs() { return kGlyphs; }

int glyph_popcount(int digit) {
  int n = 0;
  for (std::string_view row : kGlyphs.at(static_cast<std::size_t>(digit))) n += static_cast<int>(std::count(row.begin(), row.end(), '#'));
  return n;
}

void GenConfig::validate() const {
  if (count < 1) throw ValueError("GenConfig: count must be >= 1");
  checked_numel({1, height, width});
  if (base_lo < 0 || base_hi > 9 || base_lo > base_hi) throw ValueError("GenConfig: base range must lie in [0,9]");
  if (exp_lo < 0 || exp_hi > 9 || exp_lo > exp_hi) throw ValueError("GenConfig: exponent range must lie in [0,9]");
  check_range(font_scale, "font scale", 1e-9);
  check_range(noise_sigma, "noise sigma", 0.0);
  check_range(blur_sigma, "blur sigma", 0.0);
}

Tensor render_expression(int base, int exponent, double font_scale, Dim height, Dim width) {
  if (base < 0 || base > 9 || exponent < 0 || exponent > 9) {
    throw ValueError("render_expression: base and exponent must be single digits");
  }
  if (!(font_scale > 0.0)) throw ValueError("render_expression: font scale must be positive");
  const double exp_scale = kExponentScale * font_scale;
  const Dim bh = scaled(kGlyphHeight, font_scale), bw = scaled(kGlyphWidth, font_scale);
  const Dim eh = scaled(kGlyphHeight, exp_scale), ew = scaled(kGlyphWidth, exp_scale);
  const Dim gap = scaled(1, font_scale);
  const Dim total_w = bw + gap + ew;

  const Placement base_at{(height - bh) / 2, (width - total_w) / 2, bh, bw};
  const Placement exp_at{base_at.top - eh / 3, base_at.left + bw + gap, eh, ew};
  if (base_at.left < 0 || base_at.top < 0 || exp_at.top < 0 || base_at.left + total_w > width ||
      base_at.top + bh > height) {
    throw LayoutError("expression " + std::to_string(base) + "^" + std::to_string(exponent) + " at font scale " +
                      std::to_string(font_scale) + " does not fit a " + std::to_string(height) + "x" +
                      std::to_string(width) + " canvas");
  }

  Tensor canvas({1, height, width}, 0.0f);
  draw_glyph(canvas, base, base_at);
  draw_glyph(canvas, exponent, exp_at);
  return canvas;
}

Tensor add_gaussian_noise(const Tensor& image, double sigma, Rng& rng) {
  check_sigma(sigma, "add_gaussian_noise");
  Tensor out(image.shape());
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double v = static_cast<double>(image[i]) + sigma * rng.normal();
    out[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return out;
}

std::vector<double> gaussian_kernel(double sigma) {
  check_sigma(sigma, "gaussian_kernel");
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double w = std::exp(-(i * i) / (2.0 * sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = w;
    sum += w;
  }
  for (double& w : k) w /= sum;
  return k;
}

Tensor gaussian_blur(const Tensor& image, double sigma) {
  check_sigma(sigma, "gaussian_blur");
  if (sigma < 0.05) return image;
  if (image.rank() != 3) throw ShapeError("gaussian_blur: image must be [C,H,W]");
  const std::vector<double> k = gaussian_kernel(sigma);
  const Dim r = static_cast<Dim>(k.size() / 2);
  const Dim C = image.dim(0), H = image.dim(1), W = image.dim(2);

  Tensor tmp(image.shape());
  for (Dim c = 0; c < C; ++c) {
    for (Dim y = 0; y < H; ++y) {
      for (Dim x = 0; x < W; ++x) {
        double s = 0.0;
        for (Dim d = -r; d <= r; ++d) {
          s += k[static_cast<std::size_t>(d + r)] * image.at(c, y, std::clamp<Dim>(x + d, 0, W - 1));
        }
        tmp.at(c, y, x) = static_cast<float>(s);
      }
    }
  }
  Tensor out(image.shape());
  for (Dim c = 0; c < C; ++c) {
    for (Dim y = 0; y < H; ++y) {
      for (Dim x = 0; x < W; ++x) {
        double s = 0.0;
        for (Dim d = -r; d <= r; ++d) {
          s += k[static_cast<std::size_t>(d + r)] * tmp.at(c, std::clamp<Dim>(y + d, 0, H - 1), x);
        }
        out.at(c, y, x) = static_cast<float>(s);
      }
    }
  }
  return out;
}

Sample generate_sample(const GenConfig& config, std::uint64_t index) {
  Rng rng = Rng::substream(config.master_seed, config.index_offset + index);
  const int base = static_cast<int>(rng.uniform_int(config.base_lo, config.base_hi));
  const int exponent = static_cast<int>(rng.uniform_int(config.exp_lo, config.exp_hi));
  const double font = rng.uniform(config.font_scale.lo, config.font_scale.hi);
  const double noise = rng.uniform(config.noise_sigma.lo, config.noise_sigma.hi);
  const double blur = rng.uniform(config.blur_sigma.lo, config.blur_sigma.hi);

  Tensor image = render_expression(base, exponent, font, config.height, config.width);
  image = gaussian_blur(image, blur);
  image = add_gaussian_noise(image, noise, rng);
  return Sample{std::move(image), base - config.base_lo, exponent - config.exp_lo,
                SampleMeta{static_cast<float>(font), static_cast<float>(noise), static_cast<float>(blur)}};
}

Dataset generate_dataset(const GenConfig& config) {
  config.validate();
  Dataset ds{config.height, config.width, config.base_lo, config.base_hi, config.exp_lo, config.exp_hi, {}};
  ds.samples.resize(static_cast<std::size_t>(config.count));
  parallel_for(config.count, [&](std::int64_t i) {
    try {
      ds.samples[static_cast<std::size_t>(i)] = generate_sample(config, static_cast<std::uint64_t>(i));
    } catch (const LayoutError& e) {
      throw LayoutError("sample " + std::to_string(i) + ": " + e.what());
    }
  });
  return ds;
}

}  // namespace expocnn
