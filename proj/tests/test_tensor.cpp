#include <cstdint>
#include <set>
#include <vector>

#include "doctest.h"
#include "expocnn/kernels.hpp"
#include "expocnn/parallel.hpp"
#include "expocnn/rng.hpp"
#include "expocnn/tensor.hpp"
#include "helpers.hpp"

using namespace expocnn;
using testutil::random_tensor;

TEST_CASE("tensor_new fills and rejects degenerate shapes") {
  const Tensor z = tensor_new({2, 2}, 0.0f);
  CHECK(z.shape() == Shape{2, 2});
  CHECK(z.values() == std::vector<float>{0, 0, 0, 0});

  const Tensor c = tensor_new({3}, 1.5f);
  CHECK(c.values() == std::vector<float>{1.5f, 1.5f, 1.5f});

  CHECK_THROWS_AS(tensor_new({2, 0}, 1.0f), InvalidShapeError);
  CHECK_THROWS_AS(tensor_new({-1}, 1.0f), InvalidShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
}

TEST_CASE("reshape keeps data length") {
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor r = t.reshaped({3, 2});
  CHECK(r.size() == 6);
  CHECK(r.at(2, 1) == 6);
  CHECK_THROWS_AS(t.reshape({4, 2}), ShapeError);
  CHECK(t.shape() == Shape{2, 3});
}

TEST_CASE("matmul examples") {
  const Tensor id({2, 2}, {1, 0, 0, 1});
  const Tensor a({2, 2}, {1, 2, 3, 4});
  CHECK(matmul(id, a) == a);

  const Tensor r({1, 2}, {1, 2});
  const Tensor c({2, 1}, {3, 4});
  CHECK(matmul(r, c).values() == std::vector<float>{11});

  CHECK_THROWS_AS(matmul(Tensor({2, 3}), Tensor({4, 5})), ShapeError);
  CHECK_THROWS_AS(matmul(Tensor({2, 3, 1}), Tensor({3, 5})), ShapeError);
}

TEST_CASE("identity is exact on both sides") {
  Rng rng(11);
  for (Dim n : {1, 5, 17, 70}) {
    const Tensor a = random_tensor({n, n + 3}, rng);
    Tensor il({n, n}), ir({n + 3, n + 3});
    for (Dim i = 0; i < n; ++i) il.at(i, i) = 1;
    for (Dim i = 0; i < n + 3; ++i) ir.at(i, i) = 1;
    CHECK(matmul(il, a) == a);
    CHECK(matmul(a, ir) == a);
  }
}

TEST_CASE("blocked matmul agrees with the triple loop") {
  Rng rng(5);
  for (const auto& [m, k, n] : std::vector<std::tuple<Dim, Dim, Dim>>{
           {1, 1, 1}, {3, 7, 5}, {4, 32, 32}, {33, 65, 129}, {64, 288, 1024}, {130, 9, 31}}) {
    const Tensor a = random_tensor({m, k}, rng);
    const Tensor b = random_tensor({k, n}, rng);
    CHECK(max_abs_diff(matmul(a, b), matmul_reference(a, b)) < 1e-4);
    const TensorD ad = a.cast<double>(), bd = b.cast<double>();
    CHECK(max_abs_diff(matmul(ad, bd), matmul_reference(ad, bd)) < 1e-12);
  }
}

TEST_CASE("matmul is bitwise independent of the thread count") {
  Rng rng(9);
  const Tensor a = random_tensor({96, 200}, rng);
  const Tensor b = random_tensor({200, 300}, rng);
  const int saved = max_threads();
  set_threads(1);
  const Tensor one = matmul(a, b);
  set_threads(4);
  const Tensor four = matmul(a, b);
  set_threads(saved);
  CHECK(one == four);
}

TEST_CASE("transpose") {
  const Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor t = transpose(a);
  CHECK(t.shape() == Shape{3, 2});
  CHECK(t.values() == std::vector<float>{1, 4, 2, 5, 3, 6});
}

TEST_CASE("conv2d_naive examples") {
  const Tensor x({1, 2, 2}, {1, 2, 3, 4});
  const Tensor one({1, 1, 1, 1}, {1});
  const Tensor b0({1}, {0});
  CHECK(conv2d_naive(x, one, b0, 1, 0) == x);

  const Tensor diag({1, 1, 2, 2}, {1, 0, 0, 1});
  const Tensor z = conv2d_naive(x, diag, b0, 1, 0);
  CHECK(z.shape() == Shape{1, 1, 1});
  CHECK(z[0] == 5);

  Rng rng(2);
  const Tensor big = random_tensor({3, 7, 5}, rng);
  const Tensor zero_w({2, 3, 3, 3});
  const Tensor bias({2}, {0.25f, -1.5f});
  const Tensor out = conv2d_naive(big, zero_w, bias, 2, 1);
  CHECK(out.shape() == Shape{2, 4, 3});
  for (Dim i = 0; i < 4; ++i) {
    for (Dim j = 0; j < 3; ++j) {
      CHECK(out.at(0, i, j) == 0.25f);
      CHECK(out.at(1, i, j) == -1.5f);
    }
  }

  CHECK_THROWS_AS(conv2d_naive(x, Tensor({1, 1, 3, 3}), b0, 1, 0), ShapeError);
  CHECK_THROWS_AS(conv2d_naive(x, Tensor({1, 2, 1, 1}), b0, 1, 0), ShapeError);
  CHECK_THROWS_AS(conv2d_naive(x, one, Tensor({2}), 1, 0), ShapeError);
}

TEST_CASE("im2col examples") {
  const Tensor x({1, 2, 2}, {1, 2, 3, 4});

  const Tensor single = im2col(x, 2, 2, 1, 0);
  CHECK(single.shape() == Shape{4, 1});
  CHECK(single.values() == std::vector<float>{1, 2, 3, 4});

  Rng rng(3);
  const Tensor y = random_tensor({3, 4, 5}, rng);
  const Tensor flat = im2col(y, 1, 1, 1, 0);
  CHECK(flat == y.reshaped({3, 20}));

  const Tensor padded = im2col(x, 2, 2, 1, 1);
  CHECK(padded.shape() == Shape{4, 9});
  // Top-left output position sees three padding cells and x[0][0].
  int zeros = 0;
  for (Dim r = 0; r < 4; ++r) zeros += padded.at(r, 0) == 0.0f;
  CHECK(zeros == 3);
  CHECK(padded.at(3, 0) == 1.0f);

  CHECK_THROWS_AS(im2col(x, 3, 3, 1, 0), ShapeError);
}

TEST_CASE("col2im is the adjoint of im2col") {
  // <im2col(x), c> == <x, col2im(c)> for random x, c.
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    ConvGeometry g{2 + trial % 2, 5 + trial % 3, 4 + trial % 4, 3, 2, 1 + trial % 2, trial % 2};
    const TensorD x = random_tensor<double>({g.channels, g.height, g.width}, rng);
    const TensorD cols = im2col(x, g.kernel_h, g.kernel_w, g.stride, g.padding);
    const TensorD c = random_tensor<double>(cols.shape(), rng);
    const TensorD back = col2im(c, g);
    double lhs = 0, rhs = 0;
    for (std::size_t i = 0; i < c.size(); ++i) lhs += cols[i] * c[i];
    for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * back[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }
}

TEST_CASE("conv2d_fast matches the naive oracle (3x8x8, four 3x3 filters, 100 seeds)") {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const Tensor x = random_tensor({3, 8, 8}, rng);
    const Tensor w = random_tensor({4, 3, 3, 3}, rng);
    const Tensor b = random_tensor({4}, rng);
    const Dim pad = static_cast<Dim>(seed % 2);
    worst = std::max(worst, max_abs_diff(conv2d_fast(x, w, b, 1, pad), conv2d_naive(x, w, b, 1, pad)));
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("conv2d_fast identity kernel") {
  const Tensor x({1, 2, 2}, {1, 2, 3, 4});
  CHECK(conv2d_fast(x, Tensor({1, 1, 1, 1}, {1}), Tensor({1}, {0}), 1, 0) == x);
}

TEST_CASE("GEMM conv backward matches the direct-loop adjoint") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 100);
    const Dim c = 1 + static_cast<Dim>(seed % 3), k = 1 + static_cast<Dim>(seed % 4);
    const Dim h = 5 + static_cast<Dim>(seed % 4), w = 4 + static_cast<Dim>(seed % 5);
    const Dim m = 1 + static_cast<Dim>(seed % 3), stride = 1 + static_cast<Dim>(seed % 2);
    const Dim pad = static_cast<Dim>(seed % 2);
    const TensorD x = random_tensor<double>({c, h, w}, rng);
    const TensorD wt = random_tensor<double>({k, c, m, m}, rng);
    const TensorD out = conv2d_naive(x, wt, TensorD({k}), stride, pad);
    const TensorD up = random_tensor<double>(out.shape(), rng);
    const auto fast = conv2d_backward(up, x, wt, stride, pad);
    const auto slow = conv2d_backward_naive(up, x, wt, stride, pad);
    CHECK(max_abs_diff(fast.weights, slow.weights) < 1e-12);
    CHECK(max_abs_diff(fast.bias, slow.bias) < 1e-12);
    CHECK(max_abs_diff(fast.input, slow.input) < 1e-12);
  }
}

TEST_CASE("splitmix64 matches the published test vector") {
  std::uint64_t s = 1234567;
  CHECK(splitmix64(s) == 6457827717110365317ULL);
}

TEST_CASE("Rng sequence is pinned") {
  // Independent reimplementation of SplitMix64-seeded xoshiro256**.
  Rng a(42);
  CHECK(a.next() == 1546998764402558742ULL);
  CHECK(a.next() == 6990951692964543102ULL);
  CHECK(a.next() == 12544586762248559009ULL);
  Rng z(0);
  CHECK(z.next() == 11091344671253066420ULL);
}

TEST_CASE("Rng reproducibility over 10000 draws") {
  Rng a(123456789), b(123456789), c(123456790);
  bool same = true, differs = false;
  for (int i = 0; i < 10000; ++i) {
    const auto x = a.next();
    same = same && x == b.next();
    differs = differs || x != c.next();
  }
  CHECK(same);
  CHECK(differs);
}

TEST_CASE("substreams do not depend on other substreams' draws") {
  Rng s3 = Rng::substream(77, 3);
  std::vector<std::uint64_t> fresh;
  for (int i = 0; i < 50; ++i) fresh.push_back(s3.next());

  Rng s2 = Rng::substream(77, 2);
  for (int i = 0; i < 1000; ++i) s2.next();
  Rng again = Rng::substream(77, 3);
  for (int i = 0; i < 50; ++i) CHECK(again.next() == fresh[static_cast<std::size_t>(i)]);

  std::set<std::uint64_t> firsts;
  for (std::uint64_t idx = 0; idx < 1000; ++idx) firsts.insert(Rng::substream(77, idx).next());
  CHECK(firsts.size() == 1000);
  CHECK(Rng::substream(77, 0).next() != Rng::substream(78, 0).next());
}

TEST_CASE("uniform draws stay in range") {
  Rng rng(8);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70000; ++i) {
    const double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    const auto k = rng.uniform_int(-3, 3);
    REQUIRE(k >= -3);
    REQUIRE(k <= 3);
    counts[static_cast<std::size_t>(k + 3)]++;
  }
  // Binomial(70000, 1/7): sd ~ 92.6; 5 sd band around 10000.
  for (int c : counts) CHECK(std::abs(c - 10000) < 463);
}

TEST_CASE("normal draws have unit moments") {
  Rng rng(10);
  const int n = 200000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    s += x;
    s2 += x * x;
  }
  const double mean = s / n, var = s2 / n - mean * mean;
  CHECK(std::abs(mean) < 0.012);
  CHECK(std::abs(var - 1.0) < 0.016);
}
