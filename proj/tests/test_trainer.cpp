#include "hgvae/dataio.hpp"
#include "hgvae/model.hpp"
#include "hgvae/trainer.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

using namespace hgvae;

namespace {

ModelConfig tiny_model() {
  ModelConfig c;
  c.latents = {{1, 4}, {2, 3}, {3, 3}, {6, 3}};
  c.route_width = 6;
  c.nodes = 6;
  c.features = 8;
  c.gcbs_per_stage = 1;
  return c;
}

MotionDataset two_joint_data(std::size_t count, std::size_t classes = 1) {
  const SkeletonSpec s = SkeletonSpec::parse("root -1 0 0 0\ntip 0 0 0.4 0.1\n");
  SynthOptions o;
  o.count = count;
  o.classes = classes;
  o.frames = 8;
  o.seed = 9;
  MotionDataset d = synthesize_motions(s, o);
  center_sequences(d);
  return d;
}

TrainConfig quick(std::size_t epochs) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 16;
  t.learning_rate = 3e-3;
  t.kl_warmup_epochs = 20;
  t.seed = 4;
  return t;
}

std::vector<double> flat_params(const GenerativeModel& m) {
  std::vector<double> out;
  for (const auto& p : m.parameters()) out.insert(out.end(), p.value.data().begin(), p.value.data().end());
  return out;
}

double log_normal_sum(const Tensor& x, const Tensor& m, const Tensor& ls, std::size_t b) {
  const std::size_t row = x.size() / x.dim(0);
  const bool shared = m.size() != x.size();
  double s = 0.0;
  for (std::size_t i = 0; i < row; ++i) {
    const double mean = shared ? m[i % m.size()] : m[b * row + i];
    const double log_scale = shared ? ls[i % ls.size()] : ls[b * row + i];
    const double z = (x[b * row + i] - mean) / std::exp(log_scale);
    s += -0.5 * z * z - log_scale - 0.5 * std::log(2.0 * M_PI);
  }
  return s;
}

}  // namespace

TEST(KlWeight, WarmupSchedule) {
  const TrainConfig c;
  EXPECT_DOUBLE_EQ(kl_weight_at(0, c), 0.001);
  EXPECT_DOUBLE_EQ(kl_weight_at(200, c), 1.0);
  EXPECT_DOUBLE_EQ(kl_weight_at(350, c), 1.0);
  EXPECT_NEAR(kl_weight_at(100, c), 0.5005, 1e-15);
  for (std::size_t e = 1; e <= 200; ++e) EXPECT_GT(kl_weight_at(e, c), kl_weight_at(e - 1, c));
}

TEST(TrainConfig, KeyValuesRoundTripAndValidate) {
  TrainConfig c = quick(7);
  c.clip_norm = 50.0;
  TrainConfig back;
  back.apply(c.to_key_values());
  EXPECT_EQ(back.to_key_values(), c.to_key_values());
  back.apply({{"nodes", "54"}});
  EXPECT_EQ(back.to_key_values(), c.to_key_values());
  TrainConfig bad;
  bad.batch_size = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_THROW(back.apply({{"learning_rate", "fast"}}), ConfigError);
}

TEST(Train, ZeroEpochsLeavesParametersUnchanged) {
  HgVae m(tiny_model(), 1);
  const auto before = flat_params(m);
  const Tensor x = encode_dataset(two_joint_data(20), DctCodec(8));
  const TrainLog log = train(m, x, {}, quick(0));
  EXPECT_TRUE(log.epochs.empty());
  EXPECT_EQ(flat_params(m), before);
}

TEST(Train, SameSeedGivesIdenticalLogAndParameters) {
  const Tensor x = encode_dataset(two_joint_data(40), DctCodec(8));
  HgVae a(tiny_model(), 2), b(tiny_model(), 2);
  const TrainLog la = train(a, x, {}, quick(4));
  const TrainLog lb = train(b, x, {}, quick(4));
  EXPECT_EQ(la.to_csv(), lb.to_csv());
  EXPECT_EQ(flat_params(a), flat_params(b));
  TrainConfig other = quick(4);
  other.seed = 5;
  HgVae c(tiny_model(), 2);
  EXPECT_NE(train(c, x, {}, other).to_csv(), la.to_csv());
}

TEST(Train, LogCsvHeaderAndRecords) {
  const Tensor x = encode_dataset(two_joint_data(35), DctCodec(8));
  HgVae m(tiny_model(), 3);
  std::vector<std::size_t> seen;
  TrainCallbacks cb;
  cb.on_epoch = [&](const EpochRecord& r) { seen.push_back(r.epoch); };
  const TrainLog log = train(m, x, {}, quick(3), cb);
  EXPECT_EQ(seen, (std::vector<std::size_t>{1, 2, 3}));
  std::istringstream csv(log.to_csv());
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "epoch,kl_weight,objective,recon,kl_0,kl_1,kl_2,kl_3,grad_norm_mean,grad_norm_max,clipped_norm_max");
  for (const auto& r : log.epochs) {
    EXPECT_DOUBLE_EQ(r.kl_weight, kl_weight_at(r.epoch - 1, quick(3)));
    EXPECT_TRUE(std::isfinite(r.grad_norm_max));
    EXPECT_LE(r.clipped_norm_max, 100.0 + 1e-9);
    EXPECT_LE(r.grad_norm_mean, r.grad_norm_max);
  }
  const auto path = std::filesystem::temp_directory_path() / "hgvae_test_trainer_log.csv";
  log.write(path);
  EXPECT_TRUE(std::filesystem::exists(path.string() + ".timing.csv"));
  std::filesystem::remove(path);
  std::filesystem::remove(path.string() + ".timing.csv");
}

TEST(Train, ClippingBoundsTheStepNorm) {
  const Tensor x = encode_dataset(two_joint_data(16), DctCodec(8));
  HgVae m(tiny_model(), 4);
  TrainConfig c = quick(2);
  c.clip_norm = 1e-3;
  const TrainLog log = train(m, x, {}, c);
  for (const auto& r : log.epochs) {
    EXPECT_GT(r.grad_norm_max, c.clip_norm);
    EXPECT_LE(r.clipped_norm_max, c.clip_norm + 1e-12);
  }
}

TEST(Train, ObjectiveDecreases) {
  const Tensor x = encode_dataset(two_joint_data(64), DctCodec(8));
  HgVae m(tiny_model(), 5);
  const TrainLog log = train(m, x, {}, quick(40));
  double tail = 0.0;
  for (std::size_t i = 30; i < 40; ++i) tail += log.epochs[i].objective;
  EXPECT_LT(tail / 10.0, log.epochs.front().objective);
}

TEST(Train, RejectsMismatchedInputs) {
  HgVae m(tiny_model(), 6);
  EXPECT_THROW(train(m, Tensor::zeros({4, 5, 8}), {}, quick(1)), ShapeError);
  const std::vector<int> labels{0, 1};
  EXPECT_THROW(train(m, Tensor::zeros({4, 6, 8}), labels, quick(1)), std::exception);
  TrainConfig c = quick(2);
  c.checkpoint_every = 1;
  c.checkpoint_path = "/nonexistent-dir/x/model.ckpt";
  EXPECT_THROW(train(m, encode_dataset(two_joint_data(8), DctCodec(8)), {}, c), TrainingError);
}

TEST(Train, ImportanceWeightMatchesDecomposition) {
  HgVae m(tiny_model(), 7);
  const Tensor x = encode_dataset(two_joint_data(3), DctCodec(8));
  Rng a(11), b(11);
  const Tensor w = m.log_importance_weight(x, a);
  const DecodeOutput out = m.decode_posterior(m.encode(x), 1.0, b);
  for (std::size_t i = 0; i < 3; ++i) {
    double ref = log_normal_sum(x, out.observation.mean, out.observation.log_scale, i);
    for (const auto& layer : out.latents.layers) {
      ref += log_normal_sum(layer.sample, layer.prior.mean, layer.prior.log_scale, i);
      ref -= log_normal_sum(layer.sample, layer.posterior.mean, layer.posterior.log_scale, i);
    }
    EXPECT_NEAR(w[i], ref, 1e-9 * std::max(1.0, std::abs(ref)));
  }
}

TEST(Train, ElboIsBelowImportanceWeightedBound) {
  const MotionDataset d = two_joint_data(96);
  const Tensor x = encode_dataset(d, DctCodec(8));
  HgVae m(tiny_model(), 8);
  train(m, x, {}, quick(30));
  const Tensor eval = slice(x, 0, 0, 32);
  // -objective at kl_weight 1 is the batch-mean ELBO; average it over draws.
  double elbo = 0.0;
  Rng noise(12);
  for (int r = 0; r < 20; ++r) elbo -= m.elbo(eval, 1.0, noise).objective.item() / 20.0;
  std::vector<std::vector<double>> w(32);
  for (int k = 0; k < 100; ++k) {
    const Tensor lw = m.log_importance_weight(eval, noise);
    for (std::size_t b = 0; b < 32; ++b) w[b].push_back(lw[b]);
  }
  double iwae = 0.0;
  for (std::size_t b = 0; b < 32; ++b) {
    const double mx = *std::max_element(w[b].begin(), w[b].end());
    double acc = 0.0;
    for (double v : w[b]) acc += std::exp(v - mx);
    iwae += (mx + std::log(acc / 100.0)) / 32.0;
  }
  EXPECT_LE(elbo, iwae);
}
