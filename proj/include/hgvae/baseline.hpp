#pragma once

#include "hgvae/model.hpp"

#include <cstdint>
#include <vector>

namespace hgvae {

struct BaselineConfig {
  std::size_t nodes = 54;
  std::size_t features = 50;
  std::vector<std::size_t> hidden{2000, 1000, 500, 100};  // encoder order; decoder mirrors
  std::size_t latent = 50;
  bool batch_norm = true;
  double batch_norm_momentum = 0.1;
  double batch_norm_epsilon = 1e-5;
  double log_scale_min = -7.0;
  double log_scale_max = 4.0;

  std::size_t input_size() const { return nodes * features; }

  /// Hidden widths divided by `factor` (at least 1 unit each).
  BaselineConfig scaled(std::size_t factor) const;

  void validate() const;
  KeyValues to_key_values() const;
  static BaselineConfig from_key_values(const KeyValues& values);
};

/// Fully-connected Gaussian VAE on flattened DCT graphs with a standard normal
/// prior and a learned per-feature observation log-scale. Hidden layers are
/// linear -> batch norm -> GeLU. Outside training, batch norm uses its running
/// statistics, so scores are per-datapoint deterministic.
class BaselineVae final : public GenerativeModel {
 public:
  BaselineVae(BaselineConfig config, std::uint64_t seed);

  const BaselineConfig& config() const { return config_; }

  std::string kind() const override { return "vae-baseline"; }
  KeyValues describe() const override { return config_.to_key_values(); }
  std::size_t latent_layers() const override { return 1; }
  std::size_t nodes() const override { return config_.nodes; }
  std::size_t features() const override { return config_.features; }
  void set_training(bool training) override { training_ = training; }
  bool training() const { return training_; }

  ElboTerms elbo(const Tensor& x_dct, double kl_weight, Rng& rng, std::span<const int> labels = {}) override;
  /// log p(x, z) at the posterior mean.
  Tensor score(const Tensor& x_dct, std::span<const int> labels = {}) const override;

  GaussianParams posterior(const Tensor& x_flat) const;
  GaussianParams observation(const Tensor& z) const;

 private:
  struct Dense {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out]
    Tensor gamma;   // batch-norm scale, [out]
    Tensor beta;    // batch-norm shift, [out]
    Tensor running_mean;
    Tensor running_var;
  };

  Dense make_dense(std::size_t in, std::size_t out, bool normalized, const std::string& name, Rng& rng);
  Tensor hidden_forward(const Tensor& x, const Dense& layer) const;
  Tensor linear(const Tensor& x, const Dense& layer) const;
  Tensor flatten(const Tensor& x_dct) const;

  BaselineConfig config_;
  bool training_ = false;
  std::vector<Dense> encoder_;
  Dense posterior_mean_, posterior_log_scale_;
  std::vector<Dense> decoder_;
  Dense observation_mean_, observation_log_scale_;
};

}  // namespace hgvae
