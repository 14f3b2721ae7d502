#pragma once

#include "hgvae/key_value.hpp"
#include "hgvae/model.hpp"

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hgvae {

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t batch_size = 800;
  std::size_t epochs = 500;
  double kl_start = 0.001;
  double kl_end = 1.0;
  std::size_t kl_warmup_epochs = 200;
  double clip_norm = 100.0;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // 0 disables periodic checkpoints
  std::filesystem::path checkpoint_path;

  void validate() const;
  KeyValues to_key_values() const;
  /// Unknown keys are left alone so one file can hold model and trainer keys.
  void apply(const KeyValues& values);
};

/// Linear warm-up from kl_start at epoch 0 to kl_end at kl_warmup_epochs.
double kl_weight_at(std::size_t epoch, const TrainConfig& config);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double kl_weight = 0.0;
  double objective = 0.0;  // batch-size weighted mean over the epoch
  double recon = 0.0;
  std::vector<double> kl;  // per latent layer
  double grad_norm_mean = 0.0;
  double grad_norm_max = 0.0;     // before clipping
  double clipped_norm_max = 0.0;  // after clipping
  double wall_seconds = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::size_t layers = 0;

  /// Fixed header: epoch,kl_weight,objective,recon,kl_0..kl_{L-1},
  /// grad_norm_mean,grad_norm_max,clipped_norm_max. Wall time is kept out of
  /// this file so identically seeded runs produce identical bytes.
  std::string to_csv() const;
  std::string timing_csv() const;
  void write(const std::filesystem::path& csv_path) const;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainCallbacks {
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Trains `model` in place on DCT coefficient graphs [M, nodes, features].
/// `labels` is empty or holds one class per row.
TrainLog train(GenerativeModel& model, const Tensor& data_dct, std::span<const int> labels,
               const TrainConfig& config, const TrainCallbacks& callbacks = {});

}  // namespace hgvae
