#pragma once

#include "hgvae/dct.hpp"
#include "hgvae/gaussian.hpp"
#include "hgvae/graph_conv.hpp"
#include "hgvae/key_value.hpp"
#include "hgvae/tensor.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace hgvae {

/// What `score` evaluates for a datapoint. All variants are deterministic.
enum class ScoreObjective {
  LogJoint,          // log p(x, z) at the posterior means
  Elbo,              // recon at the posterior means minus closed-form KL
  PosteriorDensity,  // sum_l log q_l(z_l) at the posterior means
};

std::string to_string(ScoreObjective objective);
ScoreObjective parse_score_objective(const std::string& text);

struct ElboTerms {
  Tensor objective;         // scalar: mean over the batch of -recon + kl_weight * sum(kl)
  Tensor recon;             // [B] log p(x | z)
  std::vector<Tensor> kl;   // per latent layer, [B]
};

/// Common surface of the hierarchical model and the fully-connected baseline.
/// Inputs are DCT coefficient graphs of shape [B, nodes, features].
class GenerativeModel {
 public:
  virtual ~GenerativeModel() = default;

  virtual std::string kind() const = 0;
  /// Serialized configuration, enough to rebuild an identically shaped model.
  virtual KeyValues describe() const = 0;
  virtual std::size_t latent_layers() const = 0;
  virtual std::size_t nodes() const = 0;
  virtual std::size_t features() const = 0;
  virtual std::size_t condition_classes() const { return 0; }
  virtual void set_training(bool /*training*/) {}

  /// Single-sample reparameterized ELBO terms.
  virtual ElboTerms elbo(const Tensor& x_dct, double kl_weight, Rng& rng, std::span<const int> labels = {}) = 0;
  /// Deterministic per-datapoint score, [B]. Differentiable in x_dct.
  virtual Tensor score(const Tensor& x_dct, std::span<const int> labels = {}) const = 0;

  ParameterList& parameters() { return params_; }
  const ParameterList& parameters() const { return params_; }
  /// Non-learnable state saved alongside parameters (e.g. running statistics).
  ParameterList& buffers() { return buffers_; }
  const ParameterList& buffers() const { return buffers_; }
  std::size_t parameter_count() const;

 protected:
  ParameterList params_;
  ParameterList buffers_;
};

struct LatentShape {
  std::size_t nodes = 0;
  std::size_t features = 0;
};

struct ModelConfig {
  /// Top (z0) to bottom. Node counts strictly increase down the hierarchy.
  std::vector<LatentShape> latents{{1, 256}, {8, 128}, {24, 128}, {54, 128}};
  std::size_t route_width = 256;   // F: features of the deterministic route and encoder
  std::size_t nodes = 54;          // observed graph nodes (3 x joints)
  std::size_t features = 50;       // DCT coefficients per node
  std::size_t gcbs_per_stage = 2;
  std::size_t condition_classes = 0;
  bool rezero_on_branch = false;
  double log_scale_min = -7.0;
  double log_scale_max = 4.0;
  ScoreObjective score_objective = ScoreObjective::LogJoint;

  /// Latents (1x32),(4x16),(12x16),(54x16) with a 64-wide route.
  static ModelConfig desk_scale();

  void validate() const;
  KeyValues to_key_values() const;
  static ModelConfig from_key_values(const KeyValues& values);
};

struct LatentLayer {
  Tensor sample;             // [B, n_l, f_l]
  GaussianParams posterior;  // undefined tensors in prior mode
  GaussianParams prior;
};

struct LatentStack {
  std::vector<LatentLayer> layers;
};

struct ObservationParams {
  Tensor mean;       // [B, nodes, features]
  Tensor log_scale;  // [B, nodes, features]
};

struct DecodeOutput {
  LatentStack latents;
  ObservationParams observation;
};

/// Hierarchical graph-convolutional ladder VAE.
///
/// The encoder contracts the observed graph stage by stage into one feature
/// graph per latent layer. The decoder walks the layers top-down along a
/// deterministic route: each layer reads its prior off the route, forms its
/// posterior from the route concatenated with the matching encoder features,
/// samples, and injects the sample back into the route through a GCL scaled by
/// a zero-initialised gate. The route is then expanded to the next layer's
/// node count, and finally to the observation heads.
class HgVae final : public GenerativeModel {
 public:
  HgVae(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  std::string kind() const override { return "hgvae"; }
  KeyValues describe() const override { return config_.to_key_values(); }
  std::size_t latent_layers() const override { return config_.latents.size(); }
  std::size_t nodes() const override { return config_.nodes; }
  std::size_t features() const override { return config_.features; }
  std::size_t condition_classes() const override { return config_.condition_classes; }

  /// Bottom-up pass. Element l holds the features paired with latent layer l,
  /// shaped [B, n_l, F].
  std::vector<Tensor> encode(const Tensor& x_dct) const;

  DecodeOutput decode_posterior(const std::vector<Tensor>& features, double temperature, Rng& rng,
                                std::span<const int> labels = {}) const;
  DecodeOutput decode_prior(std::size_t count, double temperature, Rng& rng,
                            std::span<const int> labels = {}) const;

  ElboTerms elbo(const Tensor& x_dct, double kl_weight, Rng& rng, std::span<const int> labels = {}) override;
  Tensor score(const Tensor& x_dct, std::span<const int> labels = {}) const override;

  Tensor log_joint_at_posterior_means(const Tensor& x_dct, std::span<const int> labels = {}) const;
  Tensor elbo_at_posterior_means(const Tensor& x_dct, std::span<const int> labels = {}) const;
  Tensor posterior_density_at_means(const Tensor& x_dct, std::span<const int> labels = {}) const;

  /// log p(x, z) - log q(z | x) for one posterior sample, [B].
  Tensor log_importance_weight(const Tensor& x_dct, Rng& rng, std::span<const int> labels = {}) const;

  /// Prior samples decoded to observation means, DCT domain [count, nodes, features].
  Tensor generate_dct(std::size_t count, double temperature, Rng& rng, std::optional<int> class_id = {}) const;
  /// Prior samples as time-domain trajectories [count, nodes, frames].
  Tensor generate(std::size_t count, double temperature, Rng& rng, std::optional<int> class_id = {}) const;

 private:
  struct LayerParams {
    GclParams posterior_mean;
    GclParams posterior_log_scale;
    GclParams prior_mean;  // unused for the top layer
    GclParams prior_log_scale;
    GclParams inject;
    Tensor gate;  // [1], starts at 0
    std::vector<GcbParams> blocks;
    GclParams expand;  // unused for the bottom layer
  };

  enum class Mode { Posterior, Prior };

  DecodeOutput decode(Mode mode, const std::vector<Tensor>* features, std::size_t batch, double temperature,
                      Rng* rng, std::span<const int> labels) const;
  Tensor one_hot(std::span<const int> labels, std::size_t batch) const;
  Tensor clamp_log_scale(const Tensor& t) const;
  Tensor stack_blocks(Tensor h, const std::vector<GcbParams>& blocks) const;
  void check_input(const Tensor& x_dct) const;

  ModelConfig config_;
  DctCodec codec_;
  GclParams stem_;
  std::vector<std::vector<GcbParams>> encoder_blocks_;  // by latent layer
  std::vector<GclParams> contract_;                      // contract_[l]: n_{l+1} -> n_l
  std::vector<LayerParams> layers_;
  GclParams observation_mean_;
  GclParams observation_log_scale_;
};

}  // namespace hgvae
