#include "hgvae/model.hpp"

#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace hgvae {

std::string to_string(ScoreObjective objective) {
  switch (objective) {
    case ScoreObjective::LogJoint: return "log_joint";
    case ScoreObjective::Elbo: return "elbo";
    case ScoreObjective::PosteriorDensity: return "posterior_density";
  }
  return "log_joint";
}

ScoreObjective parse_score_objective(const std::string& text) {
  if (text == "log_joint") return ScoreObjective::LogJoint;
  if (text == "elbo") return ScoreObjective::Elbo;
  if (text == "posterior_density") return ScoreObjective::PosteriorDensity;
  throw ConfigError("unknown score objective '" + text + "' (log_joint|elbo|posterior_density)");
}

std::size_t GenerativeModel::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : params_) total += p.value.size();
  return total;
}

// ---------------------------------------------------------------------------
// ModelConfig
// ---------------------------------------------------------------------------

namespace {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string format_latents(const std::vector<LatentShape>& latents) {
  std::string out;
  for (std::size_t i = 0; i < latents.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(latents[i].nodes) + "x" + std::to_string(latents[i].features);
  }
  return out;
}

std::vector<LatentShape> parse_latents(const std::string& text) {
  std::vector<LatentShape> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto x = item.find('x');
    if (x == std::string::npos) throw ConfigError("latents: expected NODESxFEATURES, got '" + item + "'");
    out.push_back({parse_size("latents", item.substr(0, x)), parse_size("latents", item.substr(x + 1))});
  }
  return out;
}

}  // namespace

ModelConfig ModelConfig::desk_scale() {
  ModelConfig c;
  c.latents = {{1, 32}, {4, 16}, {12, 16}, {54, 16}};
  c.route_width = 64;
  c.gcbs_per_stage = 1;
  return c;
}

void ModelConfig::validate() const {
  if (latents.empty()) throw ConfigError("model needs at least one latent layer");
  for (std::size_t i = 0; i < latents.size(); ++i) {
    if (latents[i].nodes == 0 || latents[i].features == 0) throw ConfigError("latent shapes must be positive");
    if (i > 0 && latents[i].nodes <= latents[i - 1].nodes) {
      throw ConfigError("latent node counts must strictly increase down the hierarchy");
    }
  }
  if (route_width == 0 || nodes == 0 || features == 0) throw ConfigError("model widths must be positive");
  if (!(log_scale_min < log_scale_max)) throw ConfigError("log-scale clamp range is empty");
}

KeyValues ModelConfig::to_key_values() const {
  return {
      {"model", "hgvae"},
      {"latents", format_latents(latents)},
      {"route_width", std::to_string(route_width)},
      {"nodes", std::to_string(nodes)},
      {"features", std::to_string(features)},
      {"gcbs_per_stage", std::to_string(gcbs_per_stage)},
      {"condition_classes", std::to_string(condition_classes)},
      {"rezero_on_branch", rezero_on_branch ? "true" : "false"},
      {"log_scale_min", format_double(log_scale_min)},
      {"log_scale_max", format_double(log_scale_max)},
      {"score_objective", to_string(score_objective)},
  };
}

ModelConfig ModelConfig::from_key_values(const KeyValues& values) {
  ModelConfig c;
  for (const auto& [key, value] : values) {
    if (key == "model") {
      if (value != "hgvae") throw ConfigError("model: expected hgvae, got '" + value + "'");
    } else if (key == "latents") {
      c.latents = parse_latents(value);
    } else if (key == "route_width") {
      c.route_width = parse_size(key, value);
    } else if (key == "nodes") {
      c.nodes = parse_size(key, value);
    } else if (key == "features") {
      c.features = parse_size(key, value);
    } else if (key == "gcbs_per_stage") {
      c.gcbs_per_stage = parse_size(key, value);
    } else if (key == "condition_classes") {
      c.condition_classes = parse_size(key, value);
    } else if (key == "rezero_on_branch") {
      c.rezero_on_branch = parse_bool(key, value);
    } else if (key == "log_scale_min") {
      c.log_scale_min = parse_double(key, value);
    } else if (key == "log_scale_max") {
      c.log_scale_max = parse_double(key, value);
    } else if (key == "score_objective") {
      c.score_objective = parse_score_objective(value);
    } else {
      throw ConfigError("unknown model key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// HgVae
// ---------------------------------------------------------------------------

HgVae::HgVae(ModelConfig config, std::uint64_t seed) : config_(std::move(config)), codec_(config_.features) {
  config_.validate();
  Rng rng(seed);
  const std::size_t L = config_.latents.size();
  const std::size_t F = config_.route_width;
  auto n = [&](std::size_t l) { return config_.latents[l].nodes; };
  auto f = [&](std::size_t l) { return config_.latents[l].features; };

  auto blocks = [&](std::size_t nodes, const std::string& prefix) {
    std::vector<GcbParams> out;
    for (std::size_t i = 0; i < config_.gcbs_per_stage; ++i) {
      out.push_back(init_gcb(nodes, F, rng));
      register_parameters(params_, prefix + ".gcb" + std::to_string(i), out.back());
    }
    return out;
  };

  stem_ = init_gcl({config_.nodes, config_.features, n(L - 1), F}, rng);
  register_parameters(params_, "encoder.stem", stem_);
  encoder_blocks_.resize(L);
  contract_.resize(L);
  encoder_blocks_[L - 1] = blocks(n(L - 1), "encoder.stage" + std::to_string(L - 1));
  for (std::size_t l = L - 1; l-- > 0;) {
    const std::string prefix = "encoder.stage" + std::to_string(l);
    contract_[l] = init_gcl({n(l + 1), F, n(l), F}, rng);
    register_parameters(params_, prefix + ".contract", contract_[l]);
    encoder_blocks_[l] = blocks(n(l), prefix);
  }

  layers_.resize(L);
  for (std::size_t l = 0; l < L; ++l) {
    const std::string prefix = "decoder.layer" + std::to_string(l);
    LayerParams& p = layers_[l];
    const std::size_t posterior_in = l == 0 ? F : 2 * F;
    p.posterior_mean = init_gcl({n(l), posterior_in, n(l), f(l)}, rng);
    p.posterior_log_scale = init_gcl({n(l), posterior_in, n(l), f(l)}, rng);
    register_parameters(params_, prefix + ".posterior_mean", p.posterior_mean);
    register_parameters(params_, prefix + ".posterior_log_scale", p.posterior_log_scale);
    if (l > 0) {
      p.prior_mean = init_gcl({n(l), F, n(l), f(l)}, rng);
      p.prior_log_scale = init_gcl({n(l), F, n(l), f(l)}, rng);
      register_parameters(params_, prefix + ".prior_mean", p.prior_mean);
      register_parameters(params_, prefix + ".prior_log_scale", p.prior_log_scale);
    }
    const std::size_t inject_in = f(l) + (l == 0 ? config_.condition_classes : 0);
    p.inject = init_gcl({n(l), inject_in, n(l), F}, rng);
    register_parameters(params_, prefix + ".inject", p.inject);
    p.gate = Tensor::zeros({1}, true);
    params_.push_back({prefix + ".gate", p.gate});
    p.blocks = blocks(n(l), prefix);
    if (l + 1 < L) {
      p.expand = init_gcl({n(l), F, n(l + 1), F}, rng);
      register_parameters(params_, prefix + ".expand", p.expand);
    }
  }
  observation_mean_ = init_gcl({n(L - 1), F, config_.nodes, config_.features}, rng);
  observation_log_scale_ = init_gcl({n(L - 1), F, config_.nodes, config_.features}, rng);
  register_parameters(params_, "decoder.observation_mean", observation_mean_);
  register_parameters(params_, "decoder.observation_log_scale", observation_log_scale_);
}

void HgVae::check_input(const Tensor& x_dct) const {
  if (x_dct.rank() != 3 || x_dct.dim(1) != config_.nodes || x_dct.dim(2) != config_.features) {
    throw ShapeError("hgvae: expected input [B, " + std::to_string(config_.nodes) + ", " +
                     std::to_string(config_.features) + "], got " + shape_string(x_dct.shape()));
  }
}

Tensor HgVae::clamp_log_scale(const Tensor& t) const {
  return clamp(t, config_.log_scale_min, config_.log_scale_max);
}

Tensor HgVae::stack_blocks(Tensor h, const std::vector<GcbParams>& blocks) const {
  for (const auto& b : blocks) h = gcb_forward(h, b, config_.rezero_on_branch);
  return h;
}

Tensor HgVae::one_hot(std::span<const int> labels, std::size_t batch) const {
  const std::size_t classes = config_.condition_classes;
  if (labels.size() != batch) {
    throw std::invalid_argument("hgvae: conditional model needs one class label per datapoint");
  }
  std::vector<double> values(batch * classes, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= classes) {
      throw std::invalid_argument("hgvae: class label " + std::to_string(labels[b]) + " outside [0, " +
                                  std::to_string(classes) + ")");
    }
    values[b * classes + static_cast<std::size_t>(labels[b])] = 1.0;
  }
  return Tensor({batch, 1, classes}, std::move(values));
}

std::vector<Tensor> HgVae::encode(const Tensor& x_dct) const {
  check_input(x_dct);
  const std::size_t L = config_.latents.size();
  std::vector<Tensor> features(L);
  Tensor a = stack_blocks(gcl_forward(x_dct, stem_, true), encoder_blocks_[L - 1]);
  features[L - 1] = a;
  for (std::size_t l = L - 1; l-- > 0;) {
    a = stack_blocks(gcl_forward(a, contract_[l], true), encoder_blocks_[l]);
    features[l] = a;
  }
  return features;
}

DecodeOutput HgVae::decode(Mode mode, const std::vector<Tensor>* features, std::size_t batch, double temperature,
                           Rng* rng, std::span<const int> labels) const {
  if (!(temperature >= 0.0)) throw std::invalid_argument("hgvae: temperature must be non-negative");
  if (temperature > 0.0 && rng == nullptr) throw std::invalid_argument("hgvae: sampling needs a random generator");
  const bool conditional = config_.condition_classes > 0;
  if (!conditional && !labels.empty()) {
    throw std::invalid_argument("hgvae: class labels given to an unconditional model");
  }
  const std::size_t L = config_.latents.size();
  if (mode == Mode::Posterior && (features == nullptr || features->size() != L)) {
    throw std::invalid_argument("hgvae: posterior decoding needs encoder features for every layer");
  }

  DecodeOutput out;
  Tensor route;
  for (std::size_t l = 0; l < L; ++l) {
    const LayerParams& p = layers_[l];
    const Shape zshape{batch, config_.latents[l].nodes, config_.latents[l].features};
    LatentLayer layer;
    if (l == 0) {
      layer.prior = {Tensor::zeros(zshape), Tensor::zeros(zshape)};
    } else {
      layer.prior = {gcl_forward(route, p.prior_mean, false),
                     clamp_log_scale(gcl_forward(route, p.prior_log_scale, false))};
    }
    const GaussianParams* source = &layer.prior;
    if (mode == Mode::Posterior) {
      const Tensor input = l == 0 ? (*features)[0] : concat({route, (*features)[l]}, -1);
      layer.posterior = {gcl_forward(input, p.posterior_mean, false),
                         clamp_log_scale(gcl_forward(input, p.posterior_log_scale, false))};
      source = &layer.posterior;
    }
    if (temperature > 0.0) {
      layer.sample = reparameterize(*source, standard_normal(zshape, *rng), temperature);
    } else {
      layer.sample = source->mean;
    }

    Tensor z_in = layer.sample;
    if (l == 0 && conditional) z_in = concat({z_in, one_hot(labels, batch)}, -1);
    Tensor injected = mul(gcl_forward(z_in, p.inject, true), p.gate);
    route = l == 0 ? injected : add(route, injected);
    route = stack_blocks(route, p.blocks);
    if (l + 1 < L) route = gcl_forward(route, p.expand, true);
    out.latents.layers.push_back(std::move(layer));
  }
  out.observation.mean = gcl_forward(route, observation_mean_, false);
  out.observation.log_scale = clamp_log_scale(gcl_forward(route, observation_log_scale_, false));
  return out;
}

DecodeOutput HgVae::decode_posterior(const std::vector<Tensor>& features, double temperature, Rng& rng,
                                     std::span<const int> labels) const {
  if (features.empty()) throw std::invalid_argument("hgvae: no encoder features");
  return decode(Mode::Posterior, &features, features[0].dim(0), temperature, &rng, labels);
}

DecodeOutput HgVae::decode_prior(std::size_t count, double temperature, Rng& rng,
                                 std::span<const int> labels) const {
  if (count == 0) throw std::invalid_argument("hgvae: nothing to decode");
  return decode(Mode::Prior, nullptr, count, temperature, &rng, labels);
}

ElboTerms HgVae::elbo(const Tensor& x_dct, double kl_weight, Rng& rng, std::span<const int> labels) {
  if (!(kl_weight >= 0.0 && kl_weight <= 1.0)) throw std::invalid_argument("elbo: kl_weight must lie in [0, 1]");
  const auto features = encode(x_dct);
  const DecodeOutput dec = decode(Mode::Posterior, &features, x_dct.dim(0), 1.0, &rng, labels);

  ElboTerms terms;
  try {
    terms.recon = sum_per_datapoint(
        gaussian_log_density(x_dct, dec.observation.mean, dec.observation.log_scale));
  } catch (const NonFiniteError& e) {
    throw NonFiniteError(std::string("elbo: reconstruction term: ") + e.what());
  }
  Tensor total_kl;
  for (std::size_t l = 0; l < dec.latents.layers.size(); ++l) {
    const LatentLayer& layer = dec.latents.layers[l];
    try {
      Tensor kl = l == 0 ? standard_normal_kl(layer.posterior) : gaussian_kl(layer.posterior, layer.prior);
      terms.kl.push_back(sum_per_datapoint(kl));
    } catch (const NonFiniteError& e) {
      throw NonFiniteError("elbo: KL of latent layer " + std::to_string(l) + ": " + e.what());
    }
    total_kl = l == 0 ? terms.kl.back() : add(total_kl, terms.kl.back());
  }
  terms.objective = mean(add(neg(terms.recon), scale(total_kl, kl_weight)));
  return terms;
}

Tensor HgVae::log_joint_at_posterior_means(const Tensor& x_dct, std::span<const int> labels) const {
  const auto features = encode(x_dct);
  const DecodeOutput dec = decode(Mode::Posterior, &features, x_dct.dim(0), 0.0, nullptr, labels);
  Tensor total =
      sum_per_datapoint(gaussian_log_density(x_dct, dec.observation.mean, dec.observation.log_scale));
  for (const LatentLayer& layer : dec.latents.layers) {
    total = add(total, sum_per_datapoint(gaussian_log_density(layer.sample, layer.prior.mean, layer.prior.log_scale)));
  }
  return total;
}

Tensor HgVae::elbo_at_posterior_means(const Tensor& x_dct, std::span<const int> labels) const {
  const auto features = encode(x_dct);
  const DecodeOutput dec = decode(Mode::Posterior, &features, x_dct.dim(0), 0.0, nullptr, labels);
  Tensor total =
      sum_per_datapoint(gaussian_log_density(x_dct, dec.observation.mean, dec.observation.log_scale));
  for (std::size_t l = 0; l < dec.latents.layers.size(); ++l) {
    const LatentLayer& layer = dec.latents.layers[l];
    Tensor kl = l == 0 ? standard_normal_kl(layer.posterior) : gaussian_kl(layer.posterior, layer.prior);
    total = sub(total, sum_per_datapoint(kl));
  }
  return total;
}

Tensor HgVae::posterior_density_at_means(const Tensor& x_dct, std::span<const int> labels) const {
  const auto features = encode(x_dct);
  const DecodeOutput dec = decode(Mode::Posterior, &features, x_dct.dim(0), 0.0, nullptr, labels);
  Tensor total;
  for (std::size_t l = 0; l < dec.latents.layers.size(); ++l) {
    const LatentLayer& layer = dec.latents.layers[l];
    Tensor term = sum_per_datapoint(
        gaussian_log_density(layer.sample, layer.posterior.mean, layer.posterior.log_scale));
    total = l == 0 ? term : add(total, term);
  }
  return total;
}

Tensor HgVae::score(const Tensor& x_dct, std::span<const int> labels) const {
  switch (config_.score_objective) {
    case ScoreObjective::LogJoint: return log_joint_at_posterior_means(x_dct, labels);
    case ScoreObjective::Elbo: return elbo_at_posterior_means(x_dct, labels);
    case ScoreObjective::PosteriorDensity: return posterior_density_at_means(x_dct, labels);
  }
  return log_joint_at_posterior_means(x_dct, labels);
}

Tensor HgVae::log_importance_weight(const Tensor& x_dct, Rng& rng, std::span<const int> labels) const {
  const auto features = encode(x_dct);
  const DecodeOutput dec = decode(Mode::Posterior, &features, x_dct.dim(0), 1.0, &rng, labels);
  Tensor total =
      sum_per_datapoint(gaussian_log_density(x_dct, dec.observation.mean, dec.observation.log_scale));
  for (const LatentLayer& layer : dec.latents.layers) {
    Tensor log_p = gaussian_log_density(layer.sample, layer.prior.mean, layer.prior.log_scale);
    Tensor log_q = gaussian_log_density(layer.sample, layer.posterior.mean, layer.posterior.log_scale);
    total = add(total, sum_per_datapoint(sub(log_p, log_q)));
  }
  return total;
}

Tensor HgVae::generate_dct(std::size_t count, double temperature, Rng& rng, std::optional<int> class_id) const {
  std::vector<int> labels;
  if (class_id.has_value()) {
    if (config_.condition_classes == 0) {
      throw std::invalid_argument("generate: class id given but the model is not class-conditional");
    }
    if (*class_id < 0 || static_cast<std::size_t>(*class_id) >= config_.condition_classes) {
      throw std::invalid_argument("generate: class id " + std::to_string(*class_id) + " outside [0, " +
                                  std::to_string(config_.condition_classes) + ")");
    }
    labels.assign(count, *class_id);
  } else if (config_.condition_classes > 0) {
    throw std::invalid_argument("generate: class-conditional model needs a class id");
  }
  return decode_prior(count, temperature, rng, labels).observation.mean;
}

Tensor HgVae::generate(std::size_t count, double temperature, Rng& rng, std::optional<int> class_id) const {
  return codec_.decode(generate_dct(count, temperature, rng, class_id));
}

}  // namespace hgvae
