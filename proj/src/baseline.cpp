#include "hgvae/baseline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace hgvae {

BaselineConfig BaselineConfig::scaled(std::size_t factor) const {
  if (factor == 0) throw ConfigError("baseline scale factor must be positive");
  BaselineConfig c = *this;
  for (auto& w : c.hidden) w = std::max<std::size_t>(1, w / factor);
  return c;
}

void BaselineConfig::validate() const {
  if (nodes == 0 || features == 0 || latent == 0 || hidden.empty()) {
    throw ConfigError("baseline dimensions must be positive");
  }
  for (auto w : hidden) {
    if (w == 0) throw ConfigError("baseline hidden widths must be positive");
  }
  if (!(log_scale_min < log_scale_max)) throw ConfigError("log-scale clamp range is empty");
}

KeyValues BaselineConfig::to_key_values() const {
  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  std::string widths;
  for (std::size_t i = 0; i < hidden.size(); ++i) widths += (i ? "," : "") + std::to_string(hidden[i]);
  return {
      {"model", "vae-baseline"},
      {"nodes", std::to_string(nodes)},
      {"features", std::to_string(features)},
      {"hidden", widths},
      {"latent", std::to_string(latent)},
      {"batch_norm", batch_norm ? "true" : "false"},
      {"batch_norm_momentum", fmt(batch_norm_momentum)},
      {"batch_norm_epsilon", fmt(batch_norm_epsilon)},
      {"log_scale_min", fmt(log_scale_min)},
      {"log_scale_max", fmt(log_scale_max)},
  };
}

BaselineConfig BaselineConfig::from_key_values(const KeyValues& values) {
  BaselineConfig c;
  for (const auto& [key, value] : values) {
    if (key == "model") {
      if (value != "vae-baseline") throw ConfigError("model: expected vae-baseline, got '" + value + "'");
    } else if (key == "nodes") {
      c.nodes = parse_size(key, value);
    } else if (key == "features") {
      c.features = parse_size(key, value);
    } else if (key == "hidden") {
      c.hidden = parse_size_list(key, value);
    } else if (key == "latent") {
      c.latent = parse_size(key, value);
    } else if (key == "batch_norm") {
      c.batch_norm = parse_bool(key, value);
    } else if (key == "batch_norm_momentum") {
      c.batch_norm_momentum = parse_double(key, value);
    } else if (key == "batch_norm_epsilon") {
      c.batch_norm_epsilon = parse_double(key, value);
    } else if (key == "log_scale_min") {
      c.log_scale_min = parse_double(key, value);
    } else if (key == "log_scale_max") {
      c.log_scale_max = parse_double(key, value);
    } else {
      throw ConfigError("unknown baseline key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

BaselineVae::Dense BaselineVae::make_dense(std::size_t in, std::size_t out, bool normalized, const std::string& name,
                                           Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<double> w(in * out);
  for (double& v : w) v = dist(rng);
  Dense d;
  d.weight = Tensor({in, out}, std::move(w), true);
  d.bias = Tensor::zeros({out}, true);
  params_.push_back({name + ".W", d.weight});
  params_.push_back({name + ".b", d.bias});
  if (normalized) {
    d.gamma = Tensor::full({out}, 1.0, true);
    d.beta = Tensor::zeros({out}, true);
    params_.push_back({name + ".bn_gamma", d.gamma});
    params_.push_back({name + ".bn_beta", d.beta});
    d.running_mean = Tensor::zeros({out});
    d.running_var = Tensor::full({out}, 1.0);
    buffers_.push_back({name + ".bn_running_mean", d.running_mean});
    buffers_.push_back({name + ".bn_running_var", d.running_var});
  }
  return d;
}

BaselineVae::BaselineVae(BaselineConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  const bool bn = config_.batch_norm;
  std::size_t width = config_.input_size();
  for (std::size_t i = 0; i < config_.hidden.size(); ++i) {
    encoder_.push_back(make_dense(width, config_.hidden[i], bn, "encoder.dense" + std::to_string(i), rng));
    width = config_.hidden[i];
  }
  posterior_mean_ = make_dense(width, config_.latent, false, "encoder.posterior_mean", rng);
  posterior_log_scale_ = make_dense(width, config_.latent, false, "encoder.posterior_log_scale", rng);
  width = config_.latent;
  for (std::size_t i = config_.hidden.size(); i-- > 0;) {
    decoder_.push_back(make_dense(width, config_.hidden[i], bn, "decoder.dense" + std::to_string(decoder_.size()), rng));
    width = config_.hidden[i];
  }
  observation_mean_ = make_dense(width, config_.input_size(), false, "decoder.observation_mean", rng);
  observation_log_scale_ = make_dense(width, config_.input_size(), false, "decoder.observation_log_scale", rng);
}

Tensor BaselineVae::linear(const Tensor& x, const Dense& layer) const {
  return add(matmul(x, layer.weight), layer.bias);
}

Tensor BaselineVae::hidden_forward(const Tensor& x, const Dense& layer) const {
  Tensor h = linear(x, layer);
  if (layer.gamma.defined()) {
    const double eps = config_.batch_norm_epsilon;
    Tensor normalized;
    if (training_) {
      Tensor mu = mean(h, 0, true);
      Tensor centered = sub(h, mu);
      Tensor var = mean(square(centered), 0, true);
      normalized = mul(centered, exp(scale(log(add_scalar(var, eps)), -0.5)));
      // Running statistics are plain buffers, updated outside the tape.
      const double m = config_.batch_norm_momentum;
      Tensor running_mean = layer.running_mean;
      Tensor running_var = layer.running_var;
      auto rm = running_mean.mutable_data();
      auto rv = running_var.mutable_data();
      for (std::size_t i = 0; i < rm.size(); ++i) {
        rm[i] = (1.0 - m) * rm[i] + m * mu[i];
        rv[i] = (1.0 - m) * rv[i] + m * var[i];
      }
    } else {
      std::vector<double> inv_std(layer.running_var.size());
      for (std::size_t i = 0; i < inv_std.size(); ++i) inv_std[i] = 1.0 / std::sqrt(layer.running_var[i] + eps);
      Tensor inv(layer.running_var.shape(), std::move(inv_std));
      normalized = mul(sub(h, layer.running_mean), inv);
    }
    h = add(mul(normalized, layer.gamma), layer.beta);
  }
  return gelu(h);
}

Tensor BaselineVae::flatten(const Tensor& x_dct) const {
  if (x_dct.rank() != 3 || x_dct.dim(1) != config_.nodes || x_dct.dim(2) != config_.features) {
    throw ShapeError("vae-baseline: expected input [B, " + std::to_string(config_.nodes) + ", " +
                     std::to_string(config_.features) + "], got " + shape_string(x_dct.shape()));
  }
  return reshape(x_dct, {x_dct.dim(0), config_.input_size()});
}

GaussianParams BaselineVae::posterior(const Tensor& x_flat) const {
  Tensor h = x_flat;
  for (const auto& layer : encoder_) h = hidden_forward(h, layer);
  return {linear(h, posterior_mean_),
          clamp(linear(h, posterior_log_scale_), config_.log_scale_min, config_.log_scale_max)};
}

GaussianParams BaselineVae::observation(const Tensor& z) const {
  Tensor h = z;
  for (const auto& layer : decoder_) h = hidden_forward(h, layer);
  return {linear(h, observation_mean_),
          clamp(linear(h, observation_log_scale_), config_.log_scale_min, config_.log_scale_max)};
}

ElboTerms BaselineVae::elbo(const Tensor& x_dct, double kl_weight, Rng& rng, std::span<const int> labels) {
  if (!labels.empty()) throw std::invalid_argument("vae-baseline: model is not class-conditional");
  if (!(kl_weight >= 0.0 && kl_weight <= 1.0)) throw std::invalid_argument("elbo: kl_weight must lie in [0, 1]");
  const Tensor x = flatten(x_dct);
  const GaussianParams q = posterior(x);
  const Tensor z = reparameterize(q, standard_normal(q.mean.shape(), rng), 1.0);
  const GaussianParams obs = observation(z);
  ElboTerms terms;
  try {
    terms.recon = sum(gaussian_log_density(x, obs.mean, obs.log_scale), 1);
  } catch (const NonFiniteError& e) {
    throw NonFiniteError(std::string("elbo: reconstruction term: ") + e.what());
  }
  try {
    terms.kl.push_back(sum(standard_normal_kl(q), 1));
  } catch (const NonFiniteError& e) {
    throw NonFiniteError(std::string("elbo: KL of latent layer 0: ") + e.what());
  }
  terms.objective = mean(add(neg(terms.recon), scale(terms.kl[0], kl_weight)));
  return terms;
}

Tensor BaselineVae::score(const Tensor& x_dct, std::span<const int> labels) const {
  if (!labels.empty()) throw std::invalid_argument("vae-baseline: model is not class-conditional");
  const Tensor x = flatten(x_dct);
  const GaussianParams q = posterior(x);
  const GaussianParams obs = observation(q.mean);
  const Tensor zero = Tensor::zeros({1});
  Tensor log_prior = sum(gaussian_log_density(q.mean, zero, zero), 1);
  return add(sum(gaussian_log_density(x, obs.mean, obs.log_scale), 1), log_prior);
}

}  // namespace hgvae
