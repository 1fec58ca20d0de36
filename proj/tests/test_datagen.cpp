#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "doctest.h"
#include "expocnn/datagen.hpp"
#include "expocnn/evaluate.hpp"
#include "helpers.hpp"

using namespace expocnn;

namespace {

// Number of target cells that nearest-neighbour lookup maps onto source cell
// r when n source cells are stretched over `size` target cells:
// #{y : r*size/n <= y < (r+1)*size/n}.
Dim replicas(Dim r, Dim n, Dim size) {
  const auto ceil_div = [](Dim a, Dim b) { return (a + b - 1) / b; };
  return ceil_div((r + 1) * size, n) - ceil_div(r * size, n);
}

Dim glyph_ink(int digit, Dim h, Dim w) {
  const auto& g = digit_glyphs()[static_cast<std::size_t>(digit)];
  Dim total = 0;
  for (Dim r = 0; r < kGlyphHeight; ++r) {
    for (Dim c = 0; c < kGlyphWidth; ++c) {
      if (g[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] == '#') {
        total += replicas(r, kGlyphHeight, h) * replicas(c, kGlyphWidth, w);
      }
    }
  }
  return total;
}

Dim size_at(int master, double s) { return std::max<Dim>(1, std::lround(master * s)); }

Dim ink(const Tensor& t) {
  return static_cast<Dim>(std::count_if(t.data().begin(), t.data().end(), [](float v) { return v > 0.5f; }));
}

}  // namespace

TEST_CASE("glyph set") {
  const auto& g = digit_glyphs();
  CHECK(g.size() == 10);
  for (int d = 0; d < 10; ++d) {
    CHECK(glyph_popcount(d) > 0);
    for (const auto& row : g[static_cast<std::size_t>(d)]) CHECK(row.size() == static_cast<std::size_t>(kGlyphWidth));
  }
  for (int a = 0; a < 10; ++a) {
    for (int b = a + 1; b < 10; ++b) CHECK(g[static_cast<std::size_t>(a)] != g[static_cast<std::size_t>(b)]);
  }
}

TEST_CASE("rendered ink matches the replication-count oracle") {
  for (double s : {1.0, 2.0, 2.37, 2.5, 3.0, 3.5}) {
    for (int b = 2; b <= 9; ++b) {
      for (int e = 0; e <= 9; ++e) {
        const Tensor img = render_expression(b, e, s, 64, 64);
        const Dim expected = glyph_ink(b, size_at(kGlyphHeight, s), size_at(kGlyphWidth, s)) +
                             glyph_ink(e, size_at(kGlyphHeight, 0.6 * s), size_at(kGlyphWidth, 0.6 * s));
        CAPTURE(s);
        CAPTURE(b);
        CAPTURE(e);
        CHECK(ink(img) == expected);
      }
    }
  }
  // At integer scales the count is close to s^2 * (pop(base) + 0.36 pop(exp)).
  const Tensor img = render_expression(2, 5, 3.0, 64, 64);
  const double ideal = 9.0 * (glyph_popcount(2) + 0.36 * glyph_popcount(5));
  CHECK(std::abs(static_cast<double>(ink(img)) - ideal) / ideal < 0.1);
}

TEST_CASE("render value range and determinism") {
  const Tensor a = render_expression(7, 3, 2.8, 64, 64);
  const Tensor b = render_expression(7, 3, 2.8, 64, 64);
  CHECK(a == b);
  CHECK(a.shape() == Shape{1, 64, 64});
  CHECK(*std::min_element(a.data().begin(), a.data().end()) == 0.0f);
  CHECK(*std::max_element(a.data().begin(), a.data().end()) == 1.0f);
  for (float v : a.data()) CHECK((v == 0.0f || v == 1.0f));
}

TEST_CASE("exponent sits above and to the right of the base") {
  const Tensor img = render_expression(8, 8, 3.0, 64, 64);
  // Base occupies the vertically centred band; exponent starts higher.
  Dim first_row = 64, first_col = 64, last_col = -1;
  for (Dim y = 0; y < 64; ++y) {
    for (Dim x = 0; x < 64; ++x) {
      if (img.at(0, y, x) > 0.5f) {
        first_row = std::min(first_row, y);
        first_col = std::min(first_col, x);
        last_col = std::max(last_col, x);
      }
    }
  }
  const Dim bh = 36, eh = size_at(kGlyphHeight, 1.8);
  CHECK(first_row == (64 - bh) / 2 - eh / 3);
  // Horizontally the expression is roughly centred.
  CHECK(std::abs((first_col + last_col) / 2 - 32) <= 2);
}

TEST_CASE("render rejects oversized layouts") {
  CHECK_THROWS_AS(render_expression(9, 9, 6.0, 64, 64), LayoutError);
  CHECK_THROWS_AS(render_expression(2, 3, 2.0, 16, 16), LayoutError);
  CHECK_NOTHROW(render_expression(2, 3, 3.5, 64, 64));
}

TEST_CASE("noise") {
  Rng rng(1);
  const Tensor img = render_expression(3, 4, 2.5, 64, 64);
  CHECK(add_gaussian_noise(img, 0.0, rng) == img);

  const Tensor half = tensor_new({1, 64, 64}, 0.5f);
  const Tensor noisy = add_gaussian_noise(half, 0.1, rng);
  double s = 0, s2 = 0;
  for (float v : noisy.data()) {
    s += v;
    s2 += static_cast<double>(v) * v;
  }
  const double n = static_cast<double>(noisy.size());
  const double sd = std::sqrt((s2 - s * s / n) / (n - 1));
  CHECK(sd >= 0.08);
  CHECK(sd <= 0.12);

  for (double sigma : {0.05, 0.3, 2.0}) {
    const Tensor out = add_gaussian_noise(img, sigma, rng);
    for (float v : out.data()) CHECK((v >= 0.0f && v <= 1.0f));
  }
  CHECK_THROWS_AS(add_gaussian_noise(img, -0.1, rng), ValueError);
}

TEST_CASE("blur kernel") {
  const auto k = gaussian_kernel(1.0);
  CHECK(k.size() == 7);
  double sum = 0;
  for (double w : k) sum += w;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(k[3] / k[4] == doctest::Approx(std::exp(0.5)));
  CHECK(gaussian_kernel(0.34).size() == 5);
}

TEST_CASE("blur identities") {
  const Tensor img = render_expression(5, 6, 2.2, 64, 64);
  CHECK(gaussian_blur(img, 0.0) == img);
  CHECK(gaussian_blur(img, 0.049) == img);
  const Tensor flat = tensor_new({1, 20, 20}, 0.7f);
  for (double s : {0.3, 1.0, 2.0}) CHECK(max_abs_diff(gaussian_blur(flat, s), flat) < 1e-6);
  CHECK_THROWS_AS(gaussian_blur(img, -1.0), ValueError);
}

TEST_CASE("blur matches a direct 2-D convolution") {
  Rng rng(2);
  const Tensor img = testutil::random_tensor({1, 17, 13}, rng, 0, 1);
  for (double sigma : {0.6, 1.0, 1.7}) {
    const auto k = gaussian_kernel(sigma);
    const Dim r = static_cast<Dim>(k.size() / 2);
    Tensor direct(img.shape());
    for (Dim y = 0; y < 17; ++y) {
      for (Dim x = 0; x < 13; ++x) {
        double s = 0;
        for (Dim dy = -r; dy <= r; ++dy) {
          for (Dim dx = -r; dx <= r; ++dx) {
            const Dim yy = std::clamp<Dim>(y + dy, 0, 16), xx = std::clamp<Dim>(x + dx, 0, 12);
            s += k[static_cast<std::size_t>(dy + r)] * k[static_cast<std::size_t>(dx + r)] * img.at(0, yy, xx);
          }
        }
        direct.at(0, y, x) = static_cast<float>(s);
      }
    }
    CHECK(max_abs_diff(gaussian_blur(img, sigma), direct) < 1e-6);
  }
}

TEST_CASE("blur of a point conserves mass") {
  Tensor dot({1, 32, 32});
  dot.at(0, 16, 16) = 1.0f;
  const Tensor out = gaussian_blur(dot, 1.0);
  double mass = 0;
  for (float v : out.data()) mass += v;
  CHECK(std::abs(mass - 1.0) < 1e-4);
  CHECK(out.at(0, 16, 16) < 1.0f);
  CHECK(out.at(0, 16, 16) == *std::max_element(out.data().begin(), out.data().end()));
}

TEST_CASE("generated dataset contract") {
  GenConfig cfg;
  cfg.count = 80;
  cfg.master_seed = 3;
  const Dataset ds = generate_dataset(cfg);
  REQUIRE(ds.samples.size() == 80);
  std::map<std::pair<int, int>, int> pairs;
  for (const Sample& s : ds.samples) {
    CHECK(s.image.shape() == Shape{1, 64, 64});
    CHECK((s.base_label >= 0 && s.base_label < 8));
    CHECK((s.exp_label >= 0 && s.exp_label < 10));
    CHECK((s.meta.font_scale >= 2.0f && s.meta.font_scale <= 3.5f));
    CHECK((s.meta.noise_sigma >= 0.0f && s.meta.noise_sigma <= 0.3f));
    CHECK((s.meta.blur_sigma >= 0.0f && s.meta.blur_sigma <= 2.0f));
    for (float v : s.image.data()) REQUIRE((v >= 0.0f && v <= 1.0f));
    pairs[{s.base_label, s.exp_label}]++;
  }
  for (const auto& [_, c] : pairs) CHECK((c >= 0 && c <= 80));
}

TEST_CASE("generation is deterministic and order independent") {
  GenConfig cfg;
  cfg.count = 24;
  cfg.master_seed = 99;
  const Dataset a = generate_dataset(cfg);
  CHECK(a == generate_dataset(cfg));
  for (std::uint64_t i : {23u, 0u, 11u}) CHECK(generate_sample(cfg, i).image == a.samples[i].image);

  GenConfig tail = cfg;
  tail.count = 4;
  tail.index_offset = 20;
  const Dataset t = generate_dataset(tail);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(t.samples[i].image == a.samples[20 + i].image);
    CHECK(t.samples[i].base_label == a.samples[20 + i].base_label);
  }

  cfg.master_seed = 100;
  CHECK(!(generate_dataset(cfg) == a));
}

TEST_CASE("pipeline is render, blur, then noise") {
  GenConfig cfg;
  cfg.count = 1;
  cfg.master_seed = 5;
  cfg.noise_sigma = {0.0, 0.0};
  const Sample s = generate_sample(cfg, 0);
  const Tensor clean = render_expression(s.base_label + 2, s.exp_label, s.meta.font_scale, 64, 64);
  // The stored metadata is float; the image used the exact double draw.
  CHECK(max_abs_diff(s.image, gaussian_blur(clean, s.meta.blur_sigma)) < 1e-4);
}

TEST_CASE("config validation and layout errors") {
  GenConfig cfg;
  cfg.count = 0;
  CHECK_THROWS_AS(generate_dataset(cfg), ValueError);
  cfg.count = 3;
  cfg.base_lo = 5;
  cfg.base_hi = 4;
  CHECK_THROWS_AS(generate_dataset(cfg), ValueError);
  cfg.base_lo = 2;
  cfg.base_hi = 9;
  cfg.noise_sigma = {0.3, 0.1};
  CHECK_THROWS_AS(generate_dataset(cfg), ValueError);
  cfg.noise_sigma = {0.0, 0.3};
  cfg.font_scale = {7.0, 8.0};
  try {
    generate_dataset(cfg);
    FAIL("expected LayoutError");
  } catch (const LayoutError& e) {
    CHECK(std::string(e.what()).rfind("sample ", 0) == 0);
  }
}

TEST_CASE("label histograms are balanced at 10000 samples") {
  GenConfig cfg;
  cfg.count = 10000;
  cfg.master_seed = 2024;
  const Dataset ds = generate_dataset(cfg);
  std::vector<double> base, exp;
  for (const Sample& s : ds.samples) {
    base.push_back(s.base_label + 2);
    exp.push_back(s.exp_label);
  }
  for (const auto* values : {&base, &exp}) {
    const auto h = histogram_categorical(*values);
    std::int64_t lo = h.front().count, hi = lo;
    for (const auto& b : h) {
      lo = std::min(lo, b.count);
      hi = std::max(hi, b.count);
    }
    CHECK(static_cast<double>(hi) / static_cast<double>(lo) < 1.25);
  }
  CHECK(histogram_categorical(base).size() == 8);
  CHECK(histogram_categorical(exp).size() == 10);
}
