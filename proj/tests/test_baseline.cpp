#include "hgvae/baseline.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace hgvae;
using hgvae::testing::check_gradients;
using hgvae::testing::random_normal;

namespace {

BaselineConfig tiny() {
  BaselineConfig c;
  c.nodes = 2;
  c.features = 3;
  c.hidden = {5, 4};
  c.latent = 2;
  return c;
}

const Tensor& find(const ParameterList& list, const std::string& name) {
  for (const auto& p : list) {
    if (p.name == name) return p.value;
  }
  throw std::runtime_error("missing " + name);
}

using Vec = std::vector<double>;

Vec dense(const Vec& x, const Tensor& w, const Tensor& b) {
  const std::size_t in = w.dim(0), out = w.dim(1);
  Vec y(out);
  for (std::size_t j = 0; j < out; ++j) {
    double acc = b[j];
    for (std::size_t i = 0; i < in; ++i) acc += x[i] * w[i * out + j];
    y[j] = acc;
  }
  return y;
}

double gelu_ref(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

double log_normal(double x, double m, double ls) {
  const double z = (x - m) / std::exp(ls);
  return -0.5 * z * z - ls - 0.5 * std::log(2.0 * std::numbers::pi);
}

// Evaluation-mode log p(x, z = posterior mean), written out with loops.
double score_ref(const BaselineVae& m, const Vec& x) {
  const auto& P = m.parameters();
  const auto& B = m.buffers();
  const auto& c = m.config();
  auto hidden = [&](Vec h, const std::string& name) {
    h = dense(h, find(P, name + ".W"), find(P, name + ".b"));
    const Tensor& g = find(P, name + ".bn_gamma");
    const Tensor& be = find(P, name + ".bn_beta");
    const Tensor& rm = find(B, name + ".bn_running_mean");
    const Tensor& rv = find(B, name + ".bn_running_var");
    for (std::size_t j = 0; j < h.size(); ++j) {
      h[j] = gelu_ref((h[j] - rm[j]) / std::sqrt(rv[j] + c.batch_norm_epsilon) * g[j] + be[j]);
    }
    return h;
  };
  auto clampv = [&](Vec v) {
    for (double& e : v) e = std::clamp(e, c.log_scale_min, c.log_scale_max);
    return v;
  };
  Vec h = x;
  for (std::size_t i = 0; i < c.hidden.size(); ++i) h = hidden(h, "encoder.dense" + std::to_string(i));
  const Vec mu = dense(h, find(P, "encoder.posterior_mean.W"), find(P, "encoder.posterior_mean.b"));
  h = mu;
  for (std::size_t i = 0; i < c.hidden.size(); ++i) h = hidden(h, "decoder.dense" + std::to_string(i));
  const Vec om = dense(h, find(P, "decoder.observation_mean.W"), find(P, "decoder.observation_mean.b"));
  const Vec ol = clampv(dense(h, find(P, "decoder.observation_log_scale.W"), find(P, "decoder.observation_log_scale.b")));
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += log_normal(x[i], om[i], ol[i]);
  for (double z : mu) s += log_normal(z, 0.0, 0.0);
  return s;
}

void perturb(BaselineVae& m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (auto& p : m.parameters()) {
    for (double& v : p.value.mutable_data()) v += u(rng);
  }
  for (auto& b : m.buffers()) {
    for (double& v : b.value.mutable_data()) v = std::abs(v + u(rng));
  }
}

}  // namespace

TEST(Baseline, DefaultParameterCount) {
  const BaselineVae m(BaselineConfig{}, 1);
  const std::vector<std::size_t> enc{2700, 2000, 1000, 500, 100};
  std::size_t want = 0;
  for (std::size_t i = 0; i + 1 < enc.size(); ++i) want += enc[i] * enc[i + 1] + 3 * enc[i + 1];
  want += 2 * (100 * 50 + 50);
  const std::vector<std::size_t> dec{50, 100, 500, 1000, 2000};
  for (std::size_t i = 0; i + 1 < dec.size(); ++i) want += dec[i] * dec[i + 1] + 3 * dec[i + 1];
  want += 2 * (2000 * 2700 + 2700);
  EXPECT_EQ(m.parameter_count(), want);
}

TEST(Baseline, ScoreMatchesLoopOracle) {
  BaselineVae m(tiny(), 2);
  perturb(m, 3);
  std::mt19937_64 rng(4);
  const Tensor x = random_normal({3, 2, 3}, rng);
  const Tensor s = m.score(x);
  ASSERT_EQ(s.shape(), (Shape{3}));
  for (std::size_t b = 0; b < 3; ++b) {
    const Vec row(x.data().begin() + 6 * b, x.data().begin() + 6 * (b + 1));
    EXPECT_NEAR(s[b], score_ref(m, row), 1e-10);
  }
}

TEST(Baseline, EvalScoreIsPerDatapoint) {
  BaselineVae m(tiny(), 5);
  perturb(m, 6);
  std::mt19937_64 rng(7);
  const Tensor x = random_normal({4, 2, 3}, rng);
  const Tensor s = m.score(x);
  for (std::size_t b = 0; b < 4; ++b) EXPECT_NEAR(m.score(slice(x, 0, b, b + 1))[0], s[b], 1e-12);
}

TEST(Baseline, TrainingModeNormalizesBatchAndUpdatesRunningStats) {
  BaselineVae m(tiny(), 8);
  m.set_training(true);
  std::mt19937_64 rng(9);
  const Tensor x = random_normal({16, 2, 3}, rng, 2.0);
  Rng noise(10);
  const Tensor before = find(m.buffers(), "encoder.dense0.bn_running_mean").detach();
  (void)m.elbo(x, 1.0, noise);
  const Tensor& after = find(m.buffers(), "encoder.dense0.bn_running_mean");
  // One momentum step from zero: 0.1 * batch mean of the pre-activation.
  const Tensor& w = find(m.parameters(), "encoder.dense0.W");
  for (std::size_t j = 0; j < 5; ++j) {
    double mu = 0.0;
    for (std::size_t b = 0; b < 16; ++b) {
      for (std::size_t i = 0; i < 6; ++i) mu += x[b * 6 + i] * w[i * 5 + j];
    }
    mu /= 16.0;
    EXPECT_EQ(before[j], 0.0);
    EXPECT_NEAR(after[j], 0.1 * mu, 1e-12);
  }
}

TEST(Baseline, ElboGradientsMatchFiniteDifferences) {
  BaselineVae m(tiny(), 11);
  perturb(m, 12);
  m.set_training(true);
  std::mt19937_64 rng(13);
  Tensor x = random_normal({4, 2, 3}, rng, 1.0, true);
  std::vector<Tensor> inputs{x};
  for (const char* name : {"encoder.dense0.W", "encoder.dense1.bn_gamma", "encoder.posterior_log_scale.W",
                           "decoder.dense0.bn_beta", "decoder.observation_mean.b"}) {
    inputs.push_back(find(m.parameters(), name));
  }
  // Training mode uses batch statistics, so running-stat updates between
  // evaluations do not change the loss.
  const auto loss = [&] {
    Rng noise(14);
    return m.elbo(x, 0.5, noise).objective;
  };
  EXPECT_LT(check_gradients(loss, inputs).relative_error, 1e-4);
}

TEST(Baseline, ConfigRoundTripAndErrors) {
  BaselineConfig c = BaselineConfig{}.scaled(10);
  EXPECT_EQ(c.hidden, (std::vector<std::size_t>{200, 100, 50, 10}));
  EXPECT_EQ(BaselineConfig::from_key_values(c.to_key_values()).to_key_values(), c.to_key_values());
  EXPECT_THROW(BaselineConfig{}.scaled(0), ConfigError);
  KeyValues kv = c.to_key_values();
  kv["epochs"] = "3";
  EXPECT_THROW(BaselineConfig::from_key_values(kv), ConfigError);
  BaselineVae m(tiny(), 15);
  Rng noise(1);
  const int label = 0;
  EXPECT_THROW(m.elbo(Tensor::zeros({1, 2, 3}), 1.0, noise, std::span<const int>(&label, 1)), std::invalid_argument);
  EXPECT_THROW(m.score(Tensor::zeros({1, 3, 2})), ShapeError);
}
