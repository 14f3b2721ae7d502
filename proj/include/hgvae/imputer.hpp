#pragma once

// Occlusion simulation and imputation of missing Cartesian entries.
// Everything here works on time-domain batches [B, nodes, frames]; the model
// sees their DCT coefficients.

#include "hgvae/dataio.hpp"
#include "hgvae/dct.hpp"
#include "hgvae/model.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace hgvae {

struct OcclusionMask {
  std::size_t nodes = 54;
  std::size_t frames = 50;
  std::vector<std::uint8_t> cells;  // [nodes][frames], 1 = missing

  std::size_t size() const { return nodes * frames; }
  std::size_t count() const;
  bool operator()(std::size_t node, std::size_t frame) const { return cells[node * frames + frame] != 0; }
};

/// `count` distinct cells drawn uniformly without replacement.
OcclusionMask make_mask(std::size_t count, std::uint64_t seed, std::size_t nodes = 54, std::size_t frames = 50);

/// Independent masks for `batch` datapoints; datapoint i uses a seed derived
/// from (seed, i), so the mask of a datapoint does not depend on the batch.
std::vector<OcclusionMask> make_masks(std::size_t batch, std::size_t count, std::uint64_t seed,
                                      std::size_t nodes = 54, std::size_t frames = 50);

/// Masked cells replaced by the feature means; x is [B, nodes, frames] and
/// `masks` holds one mask, shared by all rows, or one per row.
Tensor mean_impute(const Tensor& x, std::span<const OcclusionMask> masks, const FeatureMeans& means);

struct ImputeConfig {
  std::size_t max_steps = 10;
  double learning_rate = 1.0;
  std::optional<ScoreObjective> objective;  // unset: the model's own score
  std::size_t batch_size = 800;
};

struct ImputeResult {
  Tensor imputed;                        // [B, nodes, frames]
  std::vector<std::vector<double>> trace;  // trace[step][datapoint]; step 0 is the initialization
  std::vector<std::size_t> best_step;    // per datapoint
  std::vector<double> best_score;        // per datapoint
  bool non_finite = false;               // ascent stopped early on a NaN/Inf score
};

/// Per-datapoint score of time-domain inputs under `objective` (or the
/// model's default). Differentiable in x.
Tensor score_time_domain(const GenerativeModel& model, const DctCodec& codec, const Tensor& x,
                         std::span<const int> labels = {}, std::optional<ScoreObjective> objective = {});

/// Gradient ascent of the score over the masked entries of `x_initial`
/// (already mean-imputed), returning each datapoint's best iterate.
/// Unmasked entries of the result equal the input bit for bit.
ImputeResult map_impute(const GenerativeModel& model, const DctCodec& codec, const Tensor& x_initial,
                        std::span<const OcclusionMask> masks, const ImputeConfig& config,
                        std::span<const int> labels = {});

/// Mean of squared errors over the masked cells of every row; 0 when nothing
/// is masked.
double masked_mse(const Tensor& estimate, const Tensor& truth, std::span<const OcclusionMask> masks);

struct ImputationRow {
  std::size_t datapoint = 0;
  std::size_t count = 0;
  std::string method;  // ground_truth, mean or map
  double score = 0.0;
  double masked_mse = 0.0;
};

struct CurvePoint {
  std::size_t count = 0;
  double truth_mean = 0.0, truth_std = 0.0;
  double degraded_mean = 0.0, degraded_std = 0.0;
  double map_mean = 0.0, map_std = 0.0;
  double mean_mse = 0.0;  // mean imputation, masked cells
  double map_mse = 0.0;
};

struct AnomalyCurve {
  std::vector<CurvePoint> points;
  std::vector<ImputationRow> rows;
};

/// For each occlusion count: degrade, mean-impute, score, MAP-impute and
/// score again. Count 0 reproduces ground-truth scoring.
AnomalyCurve anomaly_curve(const GenerativeModel& model, const DctCodec& codec, const Tensor& x_truth,
                           const FeatureMeans& means, std::span<const std::size_t> counts, std::uint64_t seed,
                           const ImputeConfig& config, std::span<const int> labels = {});

/// Header: datapoint,count,method,score,masked_mse
std::string imputation_csv(std::span<const ImputationRow> rows);
/// Header: count,truth_mean,truth_std,degraded_mean,degraded_std,map_mean,map_std,mean_mse,map_mse
std::string curve_csv(std::span<const CurvePoint> points);

}  // namespace hgvae
