#include "hgvae/imputer.hpp"

#include "hgvae/optim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace hgvae {

namespace {

const OcclusionMask& mask_for(std::span<const OcclusionMask> masks, std::size_t row) {
  return masks.size() == 1 ? masks[0] : masks[row];
}

void check_masks(const Tensor& x, std::span<const OcclusionMask> masks) {
  if (x.rank() != 3) throw ShapeError("expected a [B, nodes, frames] batch, got " + shape_string(x.shape()));
  if (masks.size() != 1 && masks.size() != x.dim(0)) {
    throw ShapeError("expected 1 or " + std::to_string(x.dim(0)) + " masks, got " + std::to_string(masks.size()));
  }
  for (const auto& m : masks) {
    if (m.nodes != x.dim(1) || m.frames != x.dim(2) || m.cells.size() != m.size()) {
      throw ShapeError("mask " + std::to_string(m.nodes) + "x" + std::to_string(m.frames) +
                       " does not match batch " + shape_string(x.shape()));
    }
  }
}

Tensor rows_of(const Tensor& x, std::size_t begin, std::size_t end) {
  if (begin == 0 && end == x.dim(0)) return x;
  return slice(x.detach(), 0, begin, end);
}

std::pair<double, double> mean_std(std::span<const double> v) {
  if (v.empty()) return {0.0, 0.0};
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size()))};
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::size_t OcclusionMask::count() const {
  return static_cast<std::size_t>(std::count(cells.begin(), cells.end(), std::uint8_t{1}));
}

OcclusionMask make_mask(std::size_t count, std::uint64_t seed, std::size_t nodes, std::size_t frames) {
  OcclusionMask m;
  m.nodes = nodes;
  m.frames = frames;
  if (count > m.size()) {
    throw std::out_of_range("occlusion count " + std::to_string(count) + " exceeds the " +
                            std::to_string(m.size()) + " cells of a sequence");
  }
  std::vector<std::size_t> idx(m.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  // Partial Fisher-Yates: the first `count` entries are a uniform sample.
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  m.cells.assign(m.size(), 0);
  for (std::size_t i = 0; i < count; ++i) m.cells[idx[i]] = 1;
  return m;
}

std::vector<OcclusionMask> make_masks(std::size_t batch, std::size_t count, std::uint64_t seed, std::size_t nodes,
                                      std::size_t frames) {
  std::vector<OcclusionMask> out;
  out.reserve(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(i >> 32)};
    std::uint64_t derived = 0;
    std::vector<std::uint32_t> words(2);
    seq.generate(words.begin(), words.end());
    derived = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
    out.push_back(make_mask(count, derived, nodes, frames));
  }
  return out;
}

Tensor mean_impute(const Tensor& x, std::span<const OcclusionMask> masks, const FeatureMeans& means) {
  check_masks(x, masks);
  if (means.nodes != x.dim(1) || means.frames != x.dim(2)) throw ShapeError("feature means do not match the batch");
  const std::size_t cells = x.dim(1) * x.dim(2);
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t b = 0; b < x.dim(0); ++b) {
    const auto& m = mask_for(masks, b);
    for (std::size_t c = 0; c < cells; ++c) {
      if (m.cells[c]) out[b * cells + c] = means.values[c];
    }
  }
  return Tensor(x.shape(), std::move(out));
}

Tensor score_time_domain(const GenerativeModel& model, const DctCodec& codec, const Tensor& x,
                         std::span<const int> labels, std::optional<ScoreObjective> objective) {
  const Tensor coeffs = codec.encode(x);
  if (objective) {
    if (const auto* hg = dynamic_cast<const HgVae*>(&model)) {
      switch (*objective) {
        case ScoreObjective::LogJoint:
          return hg->log_joint_at_posterior_means(coeffs, labels);
        case ScoreObjective::Elbo:
          return hg->elbo_at_posterior_means(coeffs, labels);
        case ScoreObjective::PosteriorDensity:
          return hg->posterior_density_at_means(coeffs, labels);
      }
    }
  }
  return model.score(coeffs, labels);
}

ImputeResult map_impute(const GenerativeModel& model, const DctCodec& codec, const Tensor& x_initial,
                        std::span<const OcclusionMask> masks, const ImputeConfig& config,
                        std::span<const int> labels) {
  check_masks(x_initial, masks);
  if (!(config.learning_rate > 0.0)) throw std::invalid_argument("ascent learning rate must be positive");
  if (config.batch_size == 0) throw std::invalid_argument("ascent batch size must be positive");
  const std::size_t B = x_initial.dim(0);
  const std::size_t cells = x_initial.dim(1) * x_initial.dim(2);
  if (!labels.empty() && labels.size() != B) throw ShapeError("map_impute: label count does not match the batch");

  ImputeResult result;
  result.best_step.assign(B, 0);
  result.best_score.assign(B, -std::numeric_limits<double>::infinity());
  std::vector<double> out(x_initial.data().begin(), x_initial.data().end());
  const double nan = std::numeric_limits<double>::quiet_NaN();

  for (std::size_t begin = 0; begin < B; begin += config.batch_size) {
    const std::size_t end = std::min(B, begin + config.batch_size);
    const std::size_t n = end - begin;
    const Tensor chunk = rows_of(x_initial, begin, end);
    const auto chunk_labels = labels.empty() ? labels : labels.subspan(begin, n);

    std::vector<double> keep(n * cells, 0.0);  // 1 where the entry is free
    bool any_missing = false;
    for (std::size_t b = 0; b < n; ++b) {
      const auto& m = mask_for(masks, begin + b);
      for (std::size_t c = 0; c < cells; ++c) {
        if (m.cells[c]) {
          keep[b * cells + c] = 1.0;
          any_missing = true;
        }
      }
    }
    const std::size_t steps = any_missing ? config.max_steps : 0;

    std::vector<NamedTensor<double>> vars{{"x", Tensor(chunk.shape(), {chunk.data().begin(), chunk.data().end()}, true)}};
    AdamState adam;
    for (std::size_t k = 0; k <= steps; ++k) {
      Tensor& v = vars[0].value;
      std::vector<double> scores;
      GradientList grads;
      try {
        Tape tape;
        const Tensor s = score_time_domain(model, codec, v, chunk_labels, config.objective);
        scores.assign(s.data().begin(), s.data().end());
        if (k < steps) {
          tape.backward(neg(sum(s)));
          grads = collect_gradients(vars);
          for (std::size_t i = 0; i < keep.size(); ++i) grads[0][i] *= keep[i];
        }
      } catch (const NonFiniteError&) {
        result.non_finite = true;
        break;
      }
      v.zero_grad();

      if (result.trace.size() <= k) result.trace.emplace_back(B, nan);
      for (std::size_t b = 0; b < n; ++b) {
        result.trace[k][begin + b] = scores[b];
        if (scores[b] > result.best_score[begin + b]) {
          result.best_score[begin + b] = scores[b];
          result.best_step[begin + b] = k;
          for (std::size_t c = 0; c < cells; ++c) {
            if (keep[b * cells + c] != 0.0) out[(begin + b) * cells + c] = v[b * cells + c];
          }
        }
      }
      if (k == steps) break;
      try {
        adam_step(vars, grads, adam, config.learning_rate);
      } catch (const NonFiniteError&) {
        result.non_finite = true;
        break;
      }
    }
  }
  result.imputed = Tensor(x_initial.shape(), std::move(out));
  return result;
}

double masked_mse(const Tensor& estimate, const Tensor& truth, std::span<const OcclusionMask> masks) {
  if (estimate.shape() != truth.shape()) throw ShapeError("masked_mse: shape mismatch");
  check_masks(truth, masks);
  const std::size_t cells = truth.dim(1) * truth.dim(2);
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t b = 0; b < truth.dim(0); ++b) {
    const auto& m = mask_for(masks, b);
    for (std::size_t c = 0; c < cells; ++c) {
      if (!m.cells[c]) continue;
      const double d = estimate[b * cells + c] - truth[b * cells + c];
      total += d * d;
      ++n;
    }
  }
  return n == 0 ? 0.0 : total / static_cast<double>(n);
}

AnomalyCurve anomaly_curve(const GenerativeModel& model, const DctCodec& codec, const Tensor& x_truth,
                           const FeatureMeans& means, std::span<const std::size_t> counts, std::uint64_t seed,
                           const ImputeConfig& config, std::span<const int> labels) {
  const std::size_t B = x_truth.dim(0);
  const std::size_t cells = x_truth.dim(1) * x_truth.dim(2);
  auto per_row = [&](const Tensor& a, const Tensor& truth, std::span<const OcclusionMask> masks, std::size_t b) {
    return masked_mse(slice(a, 0, b, b + 1), slice(truth, 0, b, b + 1), masks.subspan(b, 1));
  };

  auto chunked_score = [&](const Tensor& x) {
    std::vector<double> out;
    out.reserve(B);
    for (std::size_t begin = 0; begin < B; begin += config.batch_size) {
      const std::size_t end = std::min(B, begin + config.batch_size);
      const auto l = labels.empty() ? labels : labels.subspan(begin, end - begin);
      const Tensor s = score_time_domain(model, codec, rows_of(x, begin, end), l, config.objective);
      out.insert(out.end(), s.data().begin(), s.data().end());
    }
    return out;
  };

  AnomalyCurve curve;
  const std::vector<double> truth_scores = chunked_score(x_truth);
  const auto [truth_mean, truth_std] = mean_std(truth_scores);
  for (std::size_t b = 0; b < B; ++b) curve.rows.push_back({b, 0, "ground_truth", truth_scores[b], 0.0});

  for (std::size_t count : counts) {
    if (count > cells) throw std::out_of_range("occlusion count exceeds the cells of a sequence");
    CurvePoint p;
    p.count = count;
    p.truth_mean = truth_mean;
    p.truth_std = truth_std;
    const auto masks = make_masks(B, count, seed ^ (count * 0x9e3779b97f4a7c15ULL), x_truth.dim(1), x_truth.dim(2));
    const Tensor degraded = mean_impute(x_truth, masks, means);
    const std::vector<double> degraded_scores = chunked_score(degraded);
    const ImputeResult map = map_impute(model, codec, degraded, masks, config, labels);

    std::tie(p.degraded_mean, p.degraded_std) = mean_std(degraded_scores);
    std::tie(p.map_mean, p.map_std) = mean_std(map.best_score);
    p.mean_mse = masked_mse(degraded, x_truth, masks);
    p.map_mse = masked_mse(map.imputed, x_truth, masks);
    for (std::size_t b = 0; b < B; ++b) {
      curve.rows.push_back({b, count, "mean", degraded_scores[b], per_row(degraded, x_truth, masks, b)});
      curve.rows.push_back({b, count, "map", map.best_score[b], per_row(map.imputed, x_truth, masks, b)});
    }
    curve.points.push_back(p);
  }
  return curve;
}

std::string imputation_csv(std::span<const ImputationRow> rows) {
  std::ostringstream os;
  os << "datapoint,count,method,score,masked_mse\n";
  for (const auto& r : rows) {
    os << r.datapoint << ',' << r.count << ',' << r.method << ',' << fmt(r.score) << ',' << fmt(r.masked_mse) << '\n';
  }
  return os.str();
}

std::string curve_csv(std::span<const CurvePoint> points) {
  std::ostringstream os;
  os << "count,truth_mean,truth_std,degraded_mean,degraded_std,map_mean,map_std,mean_mse,map_mse\n";
  for (const auto& p : points) {
    os << p.count << ',' << fmt(p.truth_mean) << ',' << fmt(p.truth_std) << ',' << fmt(p.degraded_mean) << ','
       << fmt(p.degraded_std) << ',' << fmt(p.map_mean) << ',' << fmt(p.map_std) << ',' << fmt(p.mean_mse) << ','
       << fmt(p.map_mse) << '\n';
  }
  return os.str();
}

}  // namespace hgvae
