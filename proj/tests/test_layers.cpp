#include <functional>
#include <vector>

#include "doctest.h"
#include "expocnn/layers.hpp"
#include "expocnn/loss.hpp"
#include "expocnn/model.hpp"
#include "helpers.hpp"

using namespace expocnn;
using testutil::random_tensor;
using testutil::rel_err;

namespace {

// Central differences of sum(f(x) * upstream) with respect to every element of x.
TensorD numeric_grad(TensorD& x, const TensorD& upstream, const std::function<TensorD()>& f, double eps = 1e-5) {
  TensorD g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + eps;
    const TensorD hi = f();
    x[i] = saved - eps;
    const TensorD lo = f();
    x[i] = saved;
    double d = 0;
    for (std::size_t j = 0; j < hi.size(); ++j) d += (hi[j] - lo[j]) * upstream[j];
    g[i] = d / (2 * eps);
  }
  return g;
}

double max_rel(const TensorD& a, const TensorD& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, rel_err(a[i], b[i], 1e-6));
  return m;
}

}  // namespace

TEST_CASE("relu forward") {
  CHECK(relu_forward(Tensor({3}, {-1, 0, 2})).values() == std::vector<float>{0, 0, 2});
  CHECK(relu_forward(Tensor({2, 2}, {-1, -2, -3, -0.5f})) == Tensor({2, 2}));
  const Tensor pos({4}, {0, 1, 2.5f, 7});
  CHECK(relu_forward(pos) == pos);
}

TEST_CASE("relu backward") {
  CHECK(relu_backward(Tensor({3}, {1, 1, 1}), Tensor({3}, {-1, 0, 2})).values() == std::vector<float>{0, 0, 1});
  const Tensor g({3}, {0.5f, -2, 3});
  CHECK(relu_backward(g, Tensor({3}, {1, 2, 3})) == g);
  CHECK_THROWS_AS(relu_backward(Tensor({3}), Tensor({2})), ShapeError);

  Rng rng(1);
  TensorD x = random_tensor<double>({50}, rng);
  const TensorD up = random_tensor<double>({50}, rng);
  const TensorD num = numeric_grad(x, up, [&] { return relu_forward(x); });
  CHECK(max_rel(relu_backward(up, x), num) < 1e-4);
}

TEST_CASE("maxpool forward") {
  const auto r = maxpool_forward(Tensor({1, 2, 2}, {1, 2, 3, 4}), 2, 2);
  CHECK(r.output.values() == std::vector<float>{4});
  CHECK(r.indices.argmax == std::vector<std::int64_t>{3});

  const auto c = maxpool_forward(tensor_new({1, 4, 4}, 2.0f), 2, 2);
  CHECK(c.output == tensor_new({1, 2, 2}, 2.0f));
  CHECK(c.indices.argmax == std::vector<std::int64_t>{0, 2, 8, 10});

  Tensor ramp({1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) ramp[i] = static_cast<float>(i + 1);
  CHECK(maxpool_forward(ramp, 2, 2).output.values() == std::vector<float>{6, 8, 14, 16});

  CHECK_THROWS_AS(maxpool_forward(Tensor({1, 1, 3}), 2, 2), ShapeError);
}

TEST_CASE("maxpool backward") {
  const auto r = maxpool_forward(Tensor({1, 2, 2}, {1, 2, 3, 4}), 2, 2);
  CHECK(maxpool_backward(Tensor({1, 1, 1}, {1}), r.indices).values() == std::vector<float>{0, 0, 0, 1});
  CHECK(maxpool_backward(Tensor({1, 1, 1}), r.indices) == Tensor({1, 2, 2}));

  PoolIndices bad{{1, 2, 2}, {4}};
  CHECK_THROWS(maxpool_backward(Tensor({1, 1, 1}, {1}), bad));

  // Distinct values keep the finite differences away from ties.
  Rng rng(2);
  TensorD x({2, 6, 6});
  std::vector<double> vals(x.size());
  for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = static_cast<double>(i) * 0.37;
  for (std::size_t i = vals.size(); i > 1; --i) std::swap(vals[i - 1], vals[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
  for (std::size_t i = 0; i < vals.size(); ++i) x[i] = vals[i];
  const auto fwd = maxpool_forward(x, 2, 2);
  const TensorD up = random_tensor<double>(fwd.output.shape(), rng);
  const TensorD num = numeric_grad(x, up, [&] { return maxpool_forward(x, 2, 2).output; });
  CHECK(max_rel(maxpool_backward(up, fwd.indices), num) < 1e-4);
}

TEST_CASE("dense forward") {
  DenseLayer<float> id{Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2})};
  CHECK(dense_forward(id, Tensor({2}, {3, -4})).values() == std::vector<float>{3, -4});

  DenseLayer<float> l{Tensor({1, 2}, {1, 2}), Tensor({1}, {3})};
  CHECK(dense_forward(l, Tensor({2}, {4, 5})).values() == std::vector<float>{17});

  DenseLayer<float> z{Tensor({2, 3}), Tensor({2}, {0.5f, -1})};
  CHECK(dense_forward(z, Tensor({3}, {9, 8, 7})).values() == std::vector<float>{0.5f, -1});

  CHECK_THROWS_AS(dense_forward(l, Tensor({3})), ShapeError);
}

TEST_CASE("dense backward") {
  DenseLayer<float> l{Tensor({1, 2}), Tensor({1})};
  const auto g = dense_backward(l, Tensor({1}, {1}), Tensor({2}, {2, 3}));
  CHECK(g.weights.values() == std::vector<float>{2, 3});
  CHECK(g.bias.values() == std::vector<float>{1});
  CHECK(g.input.values() == std::vector<float>{0, 0});

  DenseLayer<float> r{Tensor({3, 2}, {1, 2, 3, 4, 5, 6}), Tensor({3}, {1, 1, 1})};
  const auto zero = dense_backward(r, Tensor({3}), Tensor({2}, {7, 8}));
  CHECK(zero.weights == Tensor({3, 2}));
  CHECK(zero.bias == Tensor({3}));
  CHECK(zero.input == Tensor({2}));

  Rng rng(3);
  DenseLayer<double> d{random_tensor<double>({4, 6}, rng), random_tensor<double>({4}, rng)};
  TensorD x = random_tensor<double>({6}, rng);
  const TensorD up = random_tensor<double>({4}, rng);
  const auto an = dense_backward(d, up, x);
  CHECK(max_rel(an.input, numeric_grad(x, up, [&] { return dense_forward(d, x); })) < 1e-4);
  CHECK(max_rel(an.weights, numeric_grad(d.weights, up, [&] { return dense_forward(d, x); })) < 1e-4);
  CHECK(max_rel(an.bias, numeric_grad(d.bias, up, [&] { return dense_forward(d, x); })) < 1e-4);
}

TEST_CASE("batched dense equals per-row dense") {
  Rng rng(4);
  DenseLayer<double> d{random_tensor<double>({5, 7}, rng), random_tensor<double>({5}, rng)};
  const TensorD x = random_tensor<double>({3, 7}, rng);
  const TensorD up = random_tensor<double>({3, 5}, rng);
  const TensorD y = dense_forward_batch(d, x);
  const auto gb = dense_backward_batch(d, up, x);
  TensorD gw({5, 7}), gbias({5});
  for (Dim b = 0; b < 3; ++b) {
    const TensorD xr({7}, std::vector<double>(x.ptr() + b * 7, x.ptr() + b * 7 + 7));
    const TensorD ur({5}, std::vector<double>(up.ptr() + b * 5, up.ptr() + b * 5 + 5));
    const TensorD yr = dense_forward(d, xr);
    for (Dim o = 0; o < 5; ++o) CHECK(y.at(b, o) == doctest::Approx(yr[static_cast<std::size_t>(o)]));
    const auto g = dense_backward(d, ur, xr);
    for (Dim i = 0; i < 7; ++i) CHECK(gb.input.at(b, i) == doctest::Approx(g.input[static_cast<std::size_t>(i)]));
    for (std::size_t i = 0; i < gw.size(); ++i) gw[i] += g.weights[i];
    for (std::size_t i = 0; i < gbias.size(); ++i) gbias[i] += g.bias[i];
  }
  CHECK(max_abs_diff(gw, gb.weights) < 1e-12);
  CHECK(max_abs_diff(gbias, gb.bias) < 1e-12);
}

TEST_CASE("conv backward") {
  ConvLayer<float> one{Tensor({1, 1, 1, 1}, {2.5f}), Tensor({1}), 1, 0};
  const Tensor x({1, 2, 3}, {1, 2, 3, 4, 5, 6});
  const auto g = conv_backward(one, tensor_new({1, 2, 3}, 1.0f), x);
  CHECK(g.weights.values() == std::vector<float>{21});
  CHECK(g.bias.values() == std::vector<float>{6});
  CHECK(g.input == tensor_new({1, 2, 3}, 2.5f));

  const auto z = conv_backward(one, Tensor({1, 2, 3}), x);
  CHECK(z.weights == Tensor({1, 1, 1, 1}));
  CHECK(z.bias == Tensor({1}));
  CHECK(z.input == Tensor({1, 2, 3}));

  Rng rng(5);
  ConvLayer<double> c{random_tensor<double>({3, 2, 3, 3}, rng), random_tensor<double>({3}, rng), 1, 1};
  TensorD in = random_tensor<double>({2, 6, 6}, rng);
  const TensorD up = random_tensor<double>({3, 6, 6}, rng);
  const auto an = conv_backward(c, up, in);
  const auto f = [&] { return conv_forward(c, in); };
  CHECK(max_rel(an.input, numeric_grad(in, up, f)) < 1e-4);
  CHECK(max_rel(an.weights, numeric_grad(c.weights, up, f)) < 1e-4);
  CHECK(max_rel(an.bias, numeric_grad(c.bias, up, f)) < 1e-4);

  CHECK_THROWS_AS(conv_backward(c, TensorD({3, 5, 5}), in), ShapeError);
}

TEST_CASE("default architecture shape chain") {
  const ArchSpec a = ArchSpec::default_arch();
  const std::vector<Shape> expected{{1, 64, 64},  {32, 64, 64}, {32, 64, 64}, {32, 32, 32}, {64, 32, 32},
                                    {64, 32, 32}, {64, 16, 16}, {16384},      {128},        {128}};
  CHECK(a.shape_chain() == expected);
  CHECK(a.feature_width() == 128);

  const Model<float> m = Model<float>::initialize(a, 1);
  Rng rng(6);
  const Tensor img = random_tensor({1, 64, 64}, rng, 0, 1);
  const std::vector<Tensor> batch{img};
  const auto out = model_forward_batch(m, std::span<const Tensor>(batch));
  CHECK(out.base_logits.shape() == Shape{1, 8});
  CHECK(out.exp_logits.shape() == Shape{1, 10});
  // Each cached layer input reproduces the chain.
  for (std::size_t i : {0, 1, 3, 4}) CHECK(out.trace.layers[i].sample_inputs.at(0).shape() == expected[i]);
  for (std::size_t i : {2, 5}) CHECK(out.trace.layers[i].pool.at(0).input_shape == expected[i]);
  CHECK(out.trace.layers[7].matrix_input.shape() == Shape{1, 16384});
  CHECK(out.trace.layers[8].matrix_input.shape() == Shape{1, 128});
  CHECK(out.trace.features.shape() == Shape{1, 128});

  const auto s = model_forward(m, img);
  CHECK(s.base_logits.shape() == Shape{8});
  CHECK(s.exp_logits.shape() == Shape{10});
}

TEST_CASE("shape errors name the layer") {
  ArchSpec a = ArchSpec::default_arch(4, 4);
  a.trunk.insert(a.trunk.begin() + 3, LayerSpec::maxpool(4, 4));
  try {
    a.shape_chain();
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("trunk layer 3 (maxpool)") != std::string::npos);
  }

  const Model<float> m = Model<float>::initialize(ArchSpec::small(), 1);
  CHECK_THROWS_AS(model_forward(m, Tensor({1, 15, 16})), ShapeError);
}

TEST_CASE("zero image through zero heads gives zero logits") {
  Model<float> m = Model<float>::initialize(ArchSpec::small(), 3);
  m.base_head().weights.fill(0);
  m.exp_head().weights.fill(0);
  const auto out = model_forward(m, Tensor({1, 16, 16}));
  CHECK(out.base_logits == Tensor({8}));
  CHECK(out.exp_logits == Tensor({10}));
}

TEST_CASE("initialization bounds and determinism") {
  const ArchSpec a = ArchSpec::small();
  const Model<float> m1 = Model<float>::initialize(a, 42), m2 = Model<float>::initialize(a, 42);
  const Model<float> m3 = Model<float>::initialize(a, 43);
  CHECK(m1 == m2);
  CHECK(!(m1 == m3));
  const auto params = m1.parameters();
  const auto names = m1.parameter_names();
  REQUIRE(params.size() == names.size());
  CHECK(names.front() == "trunk.0.conv.weight");
  CHECK(names.back() == "exp_head.bias");
  for (std::size_t i = 0; i < params.size(); i += 2) {
    const Tensor& w = *params[i];
    Dim fan_in = 1;
    for (std::size_t d = 1; d < w.rank(); ++d) fan_in *= w.dim(d);
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (float v : w.data()) CHECK(std::abs(v) <= bound);
    CHECK(*params[i + 1] == Tensor(params[i + 1]->shape()));
  }
}

TEST_CASE("model forward is deterministic") {
  const Model<float> m = Model<float>::initialize(ArchSpec::default_arch(), 9);
  Rng rng(7);
  std::vector<Tensor> batch;
  for (int i = 0; i < 3; ++i) batch.push_back(random_tensor({1, 64, 64}, rng, 0, 1));
  const auto a = model_forward_batch(m, std::span<const Tensor>(batch));
  const auto b = model_forward_batch(m, std::span<const Tensor>(batch), false);
  CHECK(a.base_logits == b.base_logits);
  CHECK(a.exp_logits == b.exp_logits);
  // Row b of a batched pass equals the single-sample pass.
  const auto single = model_forward(m, batch[1]);
  for (Dim c = 0; c < 8; ++c) CHECK(a.base_logits.at(1, c) == doctest::Approx(single.base_logits[static_cast<std::size_t>(c)]).epsilon(1e-5));
}

TEST_CASE("model backward with zero upstream is zero") {
  const Model<float> m = Model<float>::initialize(ArchSpec::small(), 4);
  Rng rng(8);
  const auto out = model_forward(m, random_tensor({1, 16, 16}, rng, 0, 1));
  const auto g = model_backward(m, out.trace, Tensor({8}), Tensor({10}));
  for (const Tensor& t : g) CHECK(t == Tensor(t.shape()));
}

TEST_CASE("head gradients are additive at the trunk") {
  const Model<double> m = Model<float>::initialize(ArchSpec::small(), 5).cast<double>();
  Rng rng(9);
  std::vector<TensorD> batch;
  for (int i = 0; i < 4; ++i) batch.push_back(random_tensor<double>({1, 16, 16}, rng, 0, 1));
  const auto out = model_forward_batch(m, std::span<const TensorD>(batch));
  const TensorD g1 = random_tensor<double>({4, 8}, rng), g2 = random_tensor<double>({4, 10}, rng);
  const auto both = model_backward_batch(m, out.trace, g1, g2);
  const auto only_b = model_backward_batch(m, out.trace, g1, TensorD({4, 10}));
  const auto only_e = model_backward_batch(m, out.trace, TensorD({4, 8}), g2);
  double worst = 0;
  for (std::size_t p = 0; p < both.size(); ++p) {
    for (std::size_t i = 0; i < both[p].size(); ++i) {
      worst = std::max(worst, std::abs(both[p][i] - only_b[p][i] - only_e[p][i]));
    }
  }
  CHECK(worst < 1e-6);

  // The exp head receives nothing from a base-only upstream.
  const std::size_t n = both.size();
  CHECK(only_b[n - 2] == TensorD(only_b[n - 2].shape()));
  CHECK(only_b[n - 1] == TensorD(only_b[n - 1].shape()));
}

TEST_CASE("batched backward equals the sum of single-sample backwards") {
  const Model<double> m = Model<float>::initialize(ArchSpec::small(), 6).cast<double>();
  Rng rng(10);
  std::vector<TensorD> batch;
  for (int i = 0; i < 3; ++i) batch.push_back(random_tensor<double>({1, 16, 16}, rng, 0, 1));
  const auto out = model_forward_batch(m, std::span<const TensorD>(batch));
  const TensorD gb = random_tensor<double>({3, 8}, rng), ge = random_tensor<double>({3, 10}, rng);
  const auto total = model_backward_batch(m, out.trace, gb, ge);
  Gradients<double> sum = m.zero_gradients();
  for (Dim b = 0; b < 3; ++b) {
    const auto s = model_forward(m, batch[static_cast<std::size_t>(b)]);
    const TensorD rb({8}, std::vector<double>(gb.ptr() + b * 8, gb.ptr() + b * 8 + 8));
    const TensorD re({10}, std::vector<double>(ge.ptr() + b * 10, ge.ptr() + b * 10 + 10));
    const auto g = model_backward(m, s.trace, rb, re);
    for (std::size_t p = 0; p < g.size(); ++p) {
      for (std::size_t i = 0; i < g[p].size(); ++i) sum[p][i] += g[p][i];
    }
  }
  for (std::size_t p = 0; p < sum.size(); ++p) CHECK(max_abs_diff(sum[p], total[p]) < 1e-10);
}

TEST_CASE("architecture text round-trip") {
  const ArchSpec a = ArchSpec::default_arch(32, 48);
  CHECK(ArchSpec::parse(a.describe()) == a);
  CHECK_THROWS_AS(ArchSpec::parse("input 1 64 64\nswish\nheads 8 10\n"), FormatError);
}
