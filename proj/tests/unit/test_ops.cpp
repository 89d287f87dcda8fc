#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support/testing.hpp"
#include "vc/layers.hpp"
#include "vc/ops.hpp"

using namespace vc;
using vc::testkit::gradcheck;
using vc::testkit::random_tensor;

namespace {

// Textbook zero-padded strided/dilated/grouped convolution.
std::vector<double> naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, const ops::ConvSpec& s) {
  const Shape xs = x.shape(), ws = w.shape();
  const std::size_t Og = ws.n / s.groups;
  const long T = static_cast<long>(xs.t);
  const std::size_t Tout = (xs.t + s.pad_left + s.pad_right - s.dilation * (ws.t - 1) - 1) / s.stride + 1;
  std::vector<double> y(xs.n * ws.n * Tout);
  for (std::size_t n = 0; n < xs.n; ++n)
    for (std::size_t o = 0; o < ws.n; ++o)
      for (std::size_t t = 0; t < Tout; ++t) {
        double acc = b.defined() ? b.values()[o] : 0.0;
        for (std::size_t i = 0; i < ws.c; ++i)
          for (std::size_t k = 0; k < ws.t; ++k) {
            const long src = static_cast<long>(t * s.stride + k * s.dilation) - static_cast<long>(s.pad_left);
            if (src < 0 || src >= T) continue;
            acc += w.at(o, i, k) * x.at(n, (o / Og) * ws.c + i, static_cast<std::size_t>(src));
          }
        y[(n * ws.n + o) * Tout + t] = acc;
      }
  return y;
}

}  // namespace

TEST(Conv1d, MatchesNaiveOracleAcrossGeometries) {
  std::mt19937_64 rng(7);
  struct Case {
    std::size_t cin, cout, k, t;
    ops::ConvSpec spec;
  };
  const std::vector<Case> cases = {
      {3, 5, 3, 17, {1, 1, 1, 1, 1}},     {8, 16, 5, 40, {1, 2, 4, 4, 1}},   {16, 32, 5, 50, {3, 1, 2, 2, 1}},
      {16, 16, 7, 33, {1, 1, 3, 3, 16}},  {32, 64, 41, 90, {4, 1, 20, 20, 4}}, {4, 8, 1, 9, {1, 1, 0, 0, 2}},
      {24, 48, 3, 70, {2, 3, 0, 5, 3}},
  };
  for (const auto& c : cases) {
    Tensor x = random_tensor({2, c.cin, c.t}, rng);
    Tensor w = random_tensor({c.cout, c.cin / c.spec.groups, c.k}, rng);
    Tensor b = random_tensor({1, c.cout, 1}, rng);
    Tensor y = ops::conv1d(x, w, b, c.spec);
    const auto expect = naive_conv(x, w, b, c.spec);
    ASSERT_EQ(y.size(), expect.size());
    for (std::size_t i = 0; i < expect.size(); ++i) ASSERT_NEAR(y.values()[i], expect[i], 1e-10);
  }
}

TEST(Conv1d, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(11);
  for (ops::ConvSpec spec : {ops::ConvSpec{1, 1, 2, 2, 1}, ops::ConvSpec{2, 3, 3, 1, 1}, ops::ConvSpec{1, 1, 1, 1, 4},
                             ops::ConvSpec{3, 1, 2, 2, 2}}) {
    const std::size_t cin = 8, cout = 8;
    Tensor x = random_tensor({1, cin, 21}, rng);
    Tensor w = random_tensor({cout, cin / spec.groups, 5}, rng, 0.3);
    Tensor b = random_tensor({1, cout, 1}, rng);
    Tensor probe = random_tensor({1, cout, (21 + spec.pad_left + spec.pad_right - spec.dilation * 4 - 1) / spec.stride + 1},
                                 rng, 1.0, false);
    auto loss = [&] { return ops::sum(ops::mul(ops::conv1d(x, w, b, spec), probe)); };
    EXPECT_LT(gradcheck(loss, {x, w, b}).max_rel, 1e-5);
  }
}

TEST(Conv1d, RejectsIncompatibleShapes) {
  Tensor x = Tensor::zeros({1, 4, 10});
  EXPECT_THROW(ops::conv1d(x, Tensor::zeros({2, 3, 3}), {}, {}), std::invalid_argument);
  EXPECT_THROW(ops::conv1d(x, Tensor::zeros({2, 4, 13}), {}, {}), std::invalid_argument);
}

TEST(Elementwise, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(3);
  Tensor a = random_tensor({2, 3, 4}, rng);
  Tensor b = random_tensor({1, 3, 1}, rng);
  auto loss = [&] {
    Tensor t = ops::add(ops::mul(ops::tanh(a), ops::sigmoid(b)), ops::sub(ops::silu(a), b));
    t = ops::add(t, ops::leaky_relu(a, 0.1));
    t = ops::add(t, ops::exp(ops::scale(ops::clamp(a, -0.7, 0.9), 0.5)));
    return ops::mean(ops::mul(t, t));
  };
  EXPECT_LT(gradcheck(loss, {a, b}).max_rel, 1e-6);
}

TEST(Elementwise, BroadcastingFollowsSizeOneRule) {
  Tensor a = Tensor::from({1, 2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b = Tensor::from({1, 2, 1}, {10, 20});
  Tensor y = ops::add(a, b);
  EXPECT_EQ(std::vector<double>(y.values().begin(), y.values().end()), (std::vector<double>{11, 12, 13, 24, 25, 26}));
  EXPECT_THROW(ops::add(a, Tensor::zeros({1, 3, 3})), std::invalid_argument);
}

TEST(Backward, AccumulatesThroughSharedSubexpressions) {
  Tensor x = Tensor::from({1, 1, 1}, {3.0}, true);
  Tensor y = ops::mul(x, x);           // x^2
  Tensor z = ops::add(ops::mul(y, x), y);  // x^3 + x^2
  z.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 3 * 9 + 2 * 3);
}

TEST(Backward, NoGradGuardRecordsNothing) {
  Tensor x = Tensor::from({1, 1, 2}, {1.0, 2.0}, true);
  Tensor y;
  {
    NoGradGuard guard;
    EXPECT_FALSE(grad_enabled());
    y = ops::mul(x, x);
  }
  EXPECT_TRUE(grad_enabled());
  EXPECT_FALSE(y.requires_grad());
}

TEST(Shaping, ForwardValues) {
  Tensor x = Tensor::from({1, 1, 4}, {1, 2, 3, 4});
  auto vec = [](const Tensor& t) { return std::vector<double>(t.values().begin(), t.values().end()); };
  EXPECT_EQ(vec(ops::pad_reflect(x, 2, 3)), (std::vector<double>{3, 2, 1, 2, 3, 4, 3, 2, 1}));
  EXPECT_EQ(vec(ops::upsample_nearest(x, 2)), (std::vector<double>{1, 1, 2, 2, 3, 3, 4, 4}));
  EXPECT_EQ(vec(ops::avg_pool(Tensor::from({1, 1, 5}, {1, 3, 5, 7, 9}), 2)), (std::vector<double>{2, 6, 9}));
  Tensor f = ops::fold_period(Tensor::from({1, 1, 6}, {0, 1, 2, 3, 4, 5}), 3);
  EXPECT_EQ(f.shape(), (Shape{3, 1, 2}));
  EXPECT_EQ(vec(f), (std::vector<double>{0, 3, 1, 4, 2, 5}));
  EXPECT_EQ(vec(ops::resample_time(x, 2)), (std::vector<double>{1, 3}));
  EXPECT_EQ(vec(ops::slice_time(x, 1, 2)), (std::vector<double>{2, 3}));
}

TEST(Shaping, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(5);
  Tensor x = random_tensor({1, 4, 12}, rng);
  Tensor table = random_tensor({3, 2, 1}, rng);
  Tensor probe = random_tensor({2, 6, 10}, rng, 1.0, false);
  auto loss = [&] {
    Tensor a = ops::pad_reflect(x, 3, 2);                       // [1, 4, 17]
    Tensor b = ops::avg_pool(ops::upsample_nearest(a, 3), 5);   // [1, 4, 11]
    Tensor c = ops::fold_period(ops::slice_time(b, 1, 10), 2);  // [2, 4, 5]
    Tensor d = ops::resample_time(c, 10);                       // [2, 4, 10]
    Tensor r = ops::add(ops::slice_channels(d, 1, 2), ops::select_row(table, 2));
    Tensor parts[] = {d, r};
    return ops::sum(ops::mul(ops::concat_channels(parts), probe));
  };
  EXPECT_LT(gradcheck(loss, {x, table}).max_rel, 1e-6);
}

TEST(LayerNorm, NormalizesAndDifferentiates) {
  std::mt19937_64 rng(9);
  Tensor x = random_tensor({1, 6, 5}, rng, 3.0);
  Tensor g = random_tensor({1, 6, 1}, rng);
  Tensor b = random_tensor({1, 6, 1}, rng);
  Tensor y = ops::layer_norm(x, Tensor::full({1, 6, 1}, 1.0), Tensor::zeros({1, 6, 1}));
  for (std::size_t t = 0; t < 5; ++t) {
    double m = 0, v = 0;
    for (std::size_t c = 0; c < 6; ++c) m += y.at(0, c, t) / 6;
    for (std::size_t c = 0; c < 6; ++c) v += (y.at(0, c, t) - m) * (y.at(0, c, t) - m) / 6;
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v, 1.0, 1e-5);
  }
  Tensor probe = random_tensor({1, 6, 5}, rng, 1.0, false);
  auto loss = [&] { return ops::sum(ops::mul(ops::layer_norm(x, g, b), probe)); };
  EXPECT_LT(gradcheck(loss, {x, g, b}).max_rel, 1e-5);
}

TEST(Attention, MatchesNaiveSoftmaxAndDifferentiates) {
  std::mt19937_64 rng(13);
  const std::size_t C = 6, T = 7, heads = 2, dh = 3;
  Tensor q = random_tensor({1, C, T}, rng), k = random_tensor({1, C, T}, rng), v = random_tensor({1, C, T}, rng);
  Tensor y = ops::attention(q, k, v, heads);
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < T; ++i) {
      std::vector<double> s(T);
      double z = 0.0;
      for (std::size_t j = 0; j < T; ++j) {
        double dot = 0.0;
        for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) dot += q.at(0, c, i) * k.at(0, c, j);
        s[j] = std::exp(dot / std::sqrt(3.0));
        z += s[j];
      }
      for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) {
        double acc = 0.0;
        for (std::size_t j = 0; j < T; ++j) acc += s[j] / z * v.at(0, c, j);
        EXPECT_NEAR(y.at(0, c, i), acc, 1e-12);
      }
    }
  Tensor probe = random_tensor({1, C, T}, rng, 1.0, false);
  auto loss = [&] { return ops::sum(ops::mul(ops::attention(q, k, v, heads), probe)); };
  EXPECT_LT(gradcheck(loss, {q, k, v}).max_rel, 1e-6);
}

TEST(Reductions, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(17);
  Tensor a = random_tensor({2, 3, 5}, rng), b = random_tensor({2, 3, 5}, rng);
  auto loss = [&] {
    return ops::add(ops::add(ops::mse(a, b), ops::mean_abs_diff(a, b)), ops::mean(ops::glu(ops::concat_channels(std::vector<Tensor>{a, b}))));
  };
  EXPECT_LT(gradcheck(loss, {a, b}).max_rel, 1e-6);
}

TEST(WeightNorm, RowNormsEqualGains) {
  std::mt19937_64 rng(19);
  Tensor v = random_tensor({4, 3, 5}, rng), g = random_tensor({4, 1, 1}, rng);
  Tensor w = ops::weight_norm(v, g);
  for (std::size_t o = 0; o < 4; ++o) {
    double sq = 0.0;
    for (std::size_t i = 0; i < 15; ++i) sq += w.values()[o * 15 + i] * w.values()[o * 15 + i];
    EXPECT_NEAR(std::sqrt(sq), std::abs(g.values()[o]), 1e-12);
  }
  Tensor probe = random_tensor({4, 3, 5}, rng, 1.0, false);
  auto loss = [&] { return ops::sum(ops::mul(ops::weight_norm(v, g), probe)); };
  EXPECT_LT(gradcheck(loss, {v, g}).max_rel, 1e-6);
}

TEST(SpectralNorm, ConvergesToUnitSpectralNorm) {
  std::mt19937_64 rng(23);
  Tensor w = random_tensor({6, 2, 3}, rng);
  Tensor u = Tensor::full({1, 6, 1}, 1.0 / std::sqrt(6.0));
  Tensor wn;
  for (int i = 0; i < 200; ++i) wn = ops::spectral_normalize(w, u, true);
  // Independent estimate of ||wn||_2 by power iteration on wn^T wn.
  std::vector<double> x(6, 1.0);
  double sigma = 0.0;
  for (int it = 0; it < 500; ++it) {
    std::vector<double> y(6, 0.0);
    for (std::size_t c = 0; c < 6; ++c)
      for (std::size_t r = 0; r < 6; ++r) {
        double acc = 0.0;
        for (std::size_t o = 0; o < 6; ++o) acc += wn.values()[o * 6 + r] * wn.values()[o * 6 + c];
        y[r] += acc * x[c];
      }
    double n = 0.0;
    for (double v : y) n += v * v;
    n = std::sqrt(n);
    for (std::size_t i = 0; i < 6; ++i) x[i] = y[i] / n;
    sigma = std::sqrt(n);
  }
  EXPECT_NEAR(sigma, 1.0, 1e-6);
}

TEST(Layers, ConvNormsExposeExpectedParameters) {
  Rng rng(1);
  ConvOptions wn;
  wn.norm = Norm::weight;
  ParamList p;
  Conv1d(4, 8, 3, wn, rng).collect("a", p);
  ConvOptions sn;
  sn.norm = Norm::spectral;
  Conv1d(4, 8, 3, sn, rng).collect("b", p);
  std::vector<std::string> names;
  for (auto& n : p) names.push_back(n.name + (n.trainable ? "" : "*"));
  EXPECT_EQ(names, (std::vector<std::string>{"a.weight", "a.gain", "a.bias", "b.weight", "b.bias", "b.sn_u*"}));
}
