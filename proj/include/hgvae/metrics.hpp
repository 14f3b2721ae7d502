#pragma once

#include "hgvae/imputer.hpp"
#include "hgvae/tensor.hpp"

#include <map>
#include <span>
#include <string>
#include <vector>

namespace hgvae {

struct PredictionTask {
  std::size_t observed = 50;
  std::size_t horizon = 25;
  std::size_t joints = 18;
};

/// (1 / (J * F)) * sum over frames and joints of the squared distance between
/// predicted and true joint positions. Both tensors are [J, 3, F]. Note the
/// distance is squared, so the result is in square meters.
double mpjpe(const Tensor& pred, const Tensor& truth);

/// mpjpe averaged over a batch of node tensors [B, 3J, F].
double mean_mpjpe(const Tensor& pred, const Tensor& truth);

/// Percent change of `map_mse` relative to `mean_mse`; negative is better.
double mse_reduction(double map_mse, double mean_mse);

/// Repeats the last observed frame `horizon` times. Accepts [..., N] and
/// returns [..., horizon].
Tensor zero_velocity_predict(const Tensor& observed, std::size_t horizon);

struct SvgSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct SvgPlot {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<SvgSeries> series;
  double width = 640;
  double height = 420;
};

/// Standalone SVG document: axes with ticks, one polyline with markers per
/// series and a legend in the top-right corner.
std::string render_svg(const SvgPlot& plot);

struct MethodSummary {
  double score_mean = 0.0;
  double mse_mean = 0.0;
  std::size_t rows = 0;
};

/// Per (count, method) means of imputation CSV rows.
using ImputationSummary = std::map<std::size_t, std::map<std::string, MethodSummary>>;

std::vector<ImputationRow> parse_imputation_csv(const std::string& text);
ImputationSummary summarize(std::span<const ImputationRow> rows);

/// Score against occlusion count (one series per method) and, when both mean
/// and MAP rows are present, the MSE reduction of MAP against mean imputation.
SvgPlot score_plot(const ImputationSummary& summary);
SvgPlot mse_reduction_plot(const ImputationSummary& summary);

/// Header: count,method,rows,score_mean,mse_mean,mse_reduction_percent
std::string summary_csv(const ImputationSummary& summary);

}  // namespace hgvae
