#include "hgvae/graph_conv.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace hgvae;
using hgvae::testing::check_gradients;
using hgvae::testing::random_tensor;

namespace {

double gelu_ref(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

// sigma(S A W + b) with explicit loops, A: [n_in, f_in].
std::vector<double> gcl_loop(const Tensor& a, const GclParams& p, bool activate) {
  const auto s = p.shape();
  std::vector<double> out(s.nodes_out * s.features_out);
  for (std::size_t i = 0; i < s.nodes_out; ++i) {
    for (std::size_t j = 0; j < s.features_out; ++j) {
      double acc = p.bias[i * s.features_out + j];
      for (std::size_t k = 0; k < s.nodes_in; ++k) {
        for (std::size_t m = 0; m < s.features_in; ++m) {
          acc += p.mix[i * s.nodes_in + k] * a[k * s.features_in + m] * p.weight[m * s.features_out + j];
        }
      }
      out[i * s.features_out + j] = activate ? gelu_ref(acc) : acc;
    }
  }
  return out;
}

void randomize(GclParams& p, std::mt19937_64& rng) {
  for (Tensor* t : {&p.mix, &p.weight, &p.bias}) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (double& v : t->mutable_data()) v = u(rng);
  }
}

}  // namespace

TEST(Gcl, IdentityWithoutActivation) {
  std::mt19937_64 rng(1);
  GclParams p = init_gcl({3, 4, 3, 4}, 1);
  p.mix = Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  p.weight = Tensor({4, 4}, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1});
  const Tensor a = random_tensor({3, 4}, rng);
  const Tensor out = gcl_forward(a, p, false);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(out[i], a[i]);
}

TEST(Gcl, ZeroInputZeroBiasGivesZero) {
  const GclParams p = init_gcl({4, 3, 2, 5}, 2);
  const Tensor out = gcl_forward(Tensor::zeros({4, 3}), p);
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(Gcl, MatchesLoopOracle) {
  std::mt19937_64 rng(3);
  GclParams p = init_gcl({4, 3, 2, 5}, 3);
  randomize(p, rng);
  const Tensor a = random_tensor({4, 3}, rng);
  for (bool act : {true, false}) {
    const Tensor out = gcl_forward(a, p, act);
    EXPECT_LT(hgvae::testing::max_abs_diff(out.data(), gcl_loop(a, p, act)), 1e-10);
  }
}

TEST(Gcl, BatchedInputIsIndependentPerRow) {
  std::mt19937_64 rng(4);
  GclParams p = init_gcl({4, 3, 6, 2}, 4);
  randomize(p, rng);
  const Tensor a = random_tensor({3, 4, 3}, rng);
  const Tensor out = gcl_forward(a, p);
  ASSERT_EQ(out.shape(), (Shape{3, 6, 2}));
  for (std::size_t b = 0; b < 3; ++b) {
    const Tensor row = reshape(slice(a, 0, b, b + 1), {4, 3});
    const auto ref = gcl_loop(row, p, true);
    EXPECT_LT(hgvae::testing::max_abs_diff(out.data().subspan(b * 12, 12), ref), 1e-10);
  }
}

TEST(Gcl, ShapeMismatchIsAnError) {
  const GclParams p = init_gcl({4, 3, 2, 5}, 5);
  EXPECT_THROW(gcl_forward(Tensor::zeros({5, 3}), p), ShapeError);
  EXPECT_THROW(gcl_forward(Tensor::zeros({4, 2}), p), ShapeError);
}

TEST(Gcl, InitShapesAndRanges) {
  const GclShape shape{5, 6, 3, 7};
  const GclParams p = init_gcl(shape, 6);
  EXPECT_EQ(p.mix.shape(), (Shape{3, 5}));
  EXPECT_EQ(p.weight.shape(), (Shape{6, 7}));
  EXPECT_EQ(p.bias.shape(), (Shape{3, 7}));
  const double limit = std::sqrt(6.0 / 13.0);
  for (double w : p.weight.data()) EXPECT_LE(std::abs(w), limit);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(p.mix[i * 5 + j], i == j ? 1.0 : 0.0, 0.01);
  }
  for (double b : p.bias.data()) EXPECT_EQ(b, 0.0);
  EXPECT_EQ(shape.parameter_count(), 3u * 5 + 6 * 7 + 3 * 7);
  EXPECT_EQ(p.mix.size() + p.weight.size() + p.bias.size(), shape.parameter_count());
}

TEST(Gcl, SquareMixDiagonalMeanNearOne) {
  const GclParams p = init_gcl({40, 2, 40, 2}, 7);
  double diag = 0.0;
  for (std::size_t i = 0; i < 40; ++i) diag += p.mix[i * 40 + i];
  EXPECT_NEAR(diag / 40.0, 1.0, 0.005);
}

TEST(Gcl, SameSeedSameParameters) {
  const GclParams a = init_gcl({4, 3, 2, 5}, 8), b = init_gcl({4, 3, 2, 5}, 8);
  EXPECT_TRUE(std::equal(a.mix.data().begin(), a.mix.data().end(), b.mix.data().begin()));
  EXPECT_TRUE(std::equal(a.weight.data().begin(), a.weight.data().end(), b.weight.data().begin()));
}

TEST(Gcb, AlphaStartsAtZero) {
  const GcbParams p = init_gcb(4, 3, 9);
  ASSERT_EQ(p.alpha.size(), 1u);
  EXPECT_EQ(p.alpha[0], 0.0);
}

TEST(Gcb, ZeroAlphaIsBranchOnly) {
  std::mt19937_64 rng(10);
  GcbParams p = init_gcb(4, 3, 10);
  randomize(p.first, rng);
  randomize(p.second, rng);
  const Tensor a = random_tensor({4, 3}, rng);
  const Tensor out = gcb_forward(a, p);
  const Tensor branch = gcl_forward(gcl_forward(a, p.first), p.second);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(out[i], branch[i]);
}

TEST(Gcb, DeadBranchWithUnitAlphaIsIdentity) {
  std::mt19937_64 rng(11);
  GcbParams p = init_gcb(4, 3, 11);
  for (GclParams* l : {&p.first, &p.second}) {
    for (double& v : l->weight.mutable_data()) v = 0.0;
  }
  p.alpha.mutable_data()[0] = 1.0;
  const Tensor a = random_tensor({4, 3}, rng);
  const Tensor out = gcb_forward(a, p);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(out[i], a[i]);
}

TEST(Gcb, MatchesLoopOracleBothConventions) {
  std::mt19937_64 rng(12);
  GcbParams p = init_gcb(4, 3, 12);
  randomize(p.first, rng);
  randomize(p.second, rng);
  p.alpha.mutable_data()[0] = 0.37;
  const Tensor a = random_tensor({4, 3}, rng);
  const auto h = gcl_loop(a, p.first, true);
  const auto branch = gcl_loop(Tensor({4, 3}, h), p.second, true);
  const Tensor on_input = gcb_forward(a, p, false);
  const Tensor on_branch = gcb_forward(a, p, true);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NEAR(on_input[i], branch[i] + 0.37 * a[i], 1e-10);
    EXPECT_NEAR(on_branch[i], 0.37 * branch[i] + a[i], 1e-10);
  }
}

TEST(Gcb, StackAtInitComposesBranches) {
  std::mt19937_64 rng(13);
  std::vector<GcbParams> blocks;
  for (int k = 0; k < 3; ++k) blocks.push_back(init_gcb(5, 4, rng));
  const Tensor a = random_tensor({5, 4}, rng);
  Tensor stacked = a, composed = a;
  for (const auto& b : blocks) {
    stacked = gcb_forward(stacked, b);
    composed = gcl_forward(gcl_forward(composed, b.first), b.second);
  }
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(stacked[i], composed[i]) << i;
}

TEST(GraphConv, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(14);
  GclParams g = init_gcl({4, 3, 2, 5}, rng);
  randomize(g, rng);
  Tensor a = random_tensor({2, 4, 3}, rng, -1, 1, true);
  const Tensor w = random_tensor({2, 2, 5}, rng);
  auto r = check_gradients([&] { return sum(mul(gcl_forward(a, g), w)); }, {a, g.mix, g.weight, g.bias});
  EXPECT_LT(r.relative_error, 1e-4);

  GcbParams b = init_gcb(4, 3, rng);
  randomize(b.first, rng);
  randomize(b.second, rng);
  b.alpha.mutable_data()[0] = 0.3;
  const Tensor w2 = random_tensor({2, 4, 3}, rng);
  for (bool on_branch : {false, true}) {
    r = check_gradients([&] { return sum(mul(gcb_forward(a, b, on_branch), w2)); },
                        {a, b.first.mix, b.first.weight, b.first.bias, b.second.mix, b.second.weight,
                         b.second.bias, b.alpha});
    EXPECT_LT(r.relative_error, 1e-4);
  }
}

TEST(GraphConv, RegisteredNames) {
  ParameterList list;
  register_parameters(list, "enc", init_gcb(3, 2, 15));
  std::vector<std::string> names;
  for (const auto& p : list) names.push_back(p.name);
  EXPECT_EQ(names, (std::vector<std::string>{"enc.l1.S", "enc.l1.W", "enc.l1.b", "enc.l2.S", "enc.l2.W", "enc.l2.b",
                                             "enc.alpha"}));
}
