#include "hgvae/trainer.hpp"

#include "hgvae/checkpoint.hpp"
#include "hgvae/optim.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace hgvae {

namespace {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Distinct streams for shuffling and for reparameterization noise.
constexpr std::uint64_t kShuffleStream = 0x5348554646ULL;
constexpr std::uint64_t kNoiseStream = 0x4e4f495345ULL;

Tensor gather_rows(const Tensor& data, std::span<const std::size_t> rows) {
  const std::size_t row = data.size() / data.dim(0);
  std::vector<double> out(rows.size() * row);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(data.data().begin() + static_cast<std::ptrdiff_t>(rows[i] * row), row,
                out.begin() + static_cast<std::ptrdiff_t>(i * row));
  }
  Shape shape = data.shape();
  shape[0] = rows.size();
  return Tensor(std::move(shape), std::move(out));
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(kl_start >= 0.0 && kl_start <= kl_end)) throw ConfigError("kl warm-up must satisfy 0 <= kl_start <= kl_end");
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
  if (checkpoint_every > 0 && checkpoint_path.empty()) {
    throw ConfigError("checkpoint_every needs a checkpoint path");
  }
}

KeyValues TrainConfig::to_key_values() const {
  return {
      {"learning_rate", format_double(learning_rate)},
      {"batch_size", std::to_string(batch_size)},
      {"epochs", std::to_string(epochs)},
      {"kl_start", format_double(kl_start)},
      {"kl_end", format_double(kl_end)},
      {"kl_warmup_epochs", std::to_string(kl_warmup_epochs)},
      {"clip_norm", format_double(clip_norm)},
      {"seed", std::to_string(seed)},
      {"checkpoint_every", std::to_string(checkpoint_every)},
  };
}

void TrainConfig::apply(const KeyValues& values) {
  for (const auto& [key, value] : values) {
    if (key == "learning_rate") {
      learning_rate = parse_double(key, value);
    } else if (key == "batch_size") {
      batch_size = parse_size(key, value);
    } else if (key == "epochs") {
      epochs = parse_size(key, value);
    } else if (key == "kl_start") {
      kl_start = parse_double(key, value);
    } else if (key == "kl_end") {
      kl_end = parse_double(key, value);
    } else if (key == "kl_warmup_epochs") {
      kl_warmup_epochs = parse_size(key, value);
    } else if (key == "clip_norm") {
      clip_norm = parse_double(key, value);
    } else if (key == "seed") {
      seed = parse_size(key, value);
    } else if (key == "checkpoint_every") {
      checkpoint_every = parse_size(key, value);
    }
  }
}

double kl_weight_at(std::size_t epoch, const TrainConfig& config) {
  if (config.kl_warmup_epochs == 0) return config.kl_end;
  const double t = std::min(1.0, static_cast<double>(epoch) / static_cast<double>(config.kl_warmup_epochs));
  return config.kl_start + (config.kl_end - config.kl_start) * t;
}

std::string TrainLog::to_csv() const {
  std::ostringstream os;
  os << "epoch,kl_weight,objective,recon";
  for (std::size_t l = 0; l < layers; ++l) os << ",kl_" << l;
  os << ",grad_norm_mean,grad_norm_max,clipped_norm_max\n";
  for (const auto& r : epochs) {
    os << r.epoch << ',' << format_double(r.kl_weight) << ',' << format_double(r.objective) << ','
       << format_double(r.recon);
    for (double k : r.kl) os << ',' << format_double(k);
    os << ',' << format_double(r.grad_norm_mean) << ',' << format_double(r.grad_norm_max) << ','
       << format_double(r.clipped_norm_max) << '\n';
  }
  return os.str();
}

std::string TrainLog::timing_csv() const {
  std::ostringstream os;
  os << "epoch,wall_seconds\n";
  for (const auto& r : epochs) os << r.epoch << ',' << format_double(r.wall_seconds) << '\n';
  return os.str();
}

void TrainLog::write(const std::filesystem::path& csv_path) const {
  auto put = [](const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!(out << text)) throw TrainingError("cannot write " + p.string());
  };
  put(csv_path, to_csv());
  put(std::filesystem::path(csv_path.string() + ".timing.csv"), timing_csv());
}

TrainLog train(GenerativeModel& model, const Tensor& data_dct, std::span<const int> labels,
               const TrainConfig& config, const TrainCallbacks& callbacks) {
  config.validate();
  if (!data_dct.defined() || data_dct.rank() != 3 || data_dct.dim(0) == 0) {
    throw ShapeError("train: expected a nonempty [M, nodes, features] dataset");
  }
  if (data_dct.dim(1) != model.nodes() || data_dct.dim(2) != model.features()) {
    throw ShapeError("train: dataset " + shape_string(data_dct.shape()) + " does not match the model's " +
                     std::to_string(model.nodes()) + "x" + std::to_string(model.features()) + " graphs");
  }
  const std::size_t M = data_dct.dim(0);
  if (!labels.empty() && labels.size() != M) throw ShapeError("train: label count does not match the dataset");
  if (model.condition_classes() > 0 && labels.empty()) throw ShapeError("train: conditional model needs labels");

  TrainLog log;
  log.layers = model.latent_layers();
  auto& params = model.parameters();
  for (auto& p : params) p.value.zero_grad();
  AdamState adam;
  Rng noise(config.seed ^ kNoiseStream);
  std::vector<std::size_t> order(M);
  std::vector<int> batch_labels;

  model.set_training(true);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(config.seed ^ kShuffleStream ^ (epoch * 0x9e3779b97f4a7c15ULL));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.kl_weight = kl_weight_at(epoch, config);
    rec.kl.assign(log.layers, 0.0);
    std::size_t steps = 0;

    for (std::size_t begin = 0; begin < M; begin += config.batch_size, ++steps) {
      const std::size_t end = std::min(M, begin + config.batch_size);
      std::span<const std::size_t> rows(order.data() + begin, end - begin);
      const Tensor batch = gather_rows(data_dct, rows);
      batch_labels.clear();
      for (std::size_t r : rows) {
        if (!labels.empty()) batch_labels.push_back(labels[r]);
      }

      double pre = 0.0;
      double post = 0.0;
      try {
        Tape tape;
        ElboTerms terms = model.elbo(batch, rec.kl_weight, noise, batch_labels);
        tape.backward(terms.objective);
        GradientList grads = collect_gradients(params);
        pre = clip_global_norm(grads, config.clip_norm);
        post = global_norm(grads);
        adam_step(params, grads, adam, config.learning_rate);

        const double w = static_cast<double>(rows.size()) / static_cast<double>(M);
        rec.objective += w * terms.objective.item();
        rec.recon += w * sum(terms.recon).item() / static_cast<double>(rows.size());
        for (std::size_t l = 0; l < log.layers; ++l) {
          rec.kl[l] += w * sum(terms.kl[l]).item() / static_cast<double>(rows.size());
        }
      } catch (const NonFiniteError& e) {
        model.set_training(false);
        throw TrainingError("non-finite value at epoch " + std::to_string(epoch + 1) + ", step " +
                            std::to_string(steps + 1) + ": " + e.what());
      }
      for (auto& p : params) p.value.zero_grad();
      rec.grad_norm_mean += pre;
      rec.grad_norm_max = std::max(rec.grad_norm_max, pre);
      rec.clipped_norm_max = std::max(rec.clipped_norm_max, post);
    }
    rec.grad_norm_mean /= static_cast<double>(steps);
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    log.epochs.push_back(rec);
    if (callbacks.on_epoch) callbacks.on_epoch(rec);

    if (config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0) {
      try {
        model.set_training(false);
        save_checkpoint(config.checkpoint_path, model);
        model.set_training(true);
      } catch (const std::exception& e) {
        model.set_training(false);
        throw TrainingError("checkpoint write failed at epoch " + std::to_string(epoch + 1) + ": " + e.what());
      }
    }
  }
  model.set_training(false);
  return log;
}

}  // namespace hgvae
