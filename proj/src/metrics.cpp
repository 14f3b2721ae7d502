#include "hgvae/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace hgvae {

namespace {

std::string num(double v, const char* format = "%.6g") {
  char buf[48];
  std::snprintf(buf, sizeof(buf), format, v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// Roughly five "nice" ticks covering [lo, hi].
std::vector<double> ticks(double lo, double hi) {
  const double span = hi - lo;
  const double raw = span / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    if (m * mag >= raw) {
      step = m * mag;
      break;
    }
  }
  std::vector<double> out;
  for (double t = std::ceil(lo / step) * step; t <= hi + 1e-9 * span; t += step) out.push_back(t);
  return out;
}

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

}  // namespace

double mpjpe(const Tensor& pred, const Tensor& truth) {
  if (pred.shape() != truth.shape()) {
    throw ShapeError("mpjpe: " + shape_string(pred.shape()) + " vs " + shape_string(truth.shape()));
  }
  if (pred.rank() != 3 || pred.dim(1) != 3) throw ShapeError("mpjpe: expected [J, 3, F], got " + shape_string(pred.shape()));
  const std::size_t J = pred.dim(0);
  const std::size_t F = pred.dim(2);
  double total = 0.0;
  for (std::size_t j = 0; j < J; ++j) {
    for (std::size_t f = 0; f < F; ++f) {
      for (std::size_t a = 0; a < 3; ++a) {
        const std::size_t i = (j * 3 + a) * F + f;
        const double d = pred[i] - truth[i];
        total += d * d;
      }
    }
  }
  return total / static_cast<double>(J * F);
}

double mean_mpjpe(const Tensor& pred, const Tensor& truth) {
  if (pred.shape() != truth.shape()) {
    throw ShapeError("mean_mpjpe: " + shape_string(pred.shape()) + " vs " + shape_string(truth.shape()));
  }
  if (pred.rank() != 3 || pred.dim(1) % 3 != 0 || pred.dim(0) == 0) {
    throw ShapeError("mean_mpjpe: expected [B, 3J, F], got " + shape_string(pred.shape()));
  }
  const std::size_t B = pred.dim(0);
  const Shape per{pred.dim(1) / 3, 3, pred.dim(2)};
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    total += mpjpe(reshape(slice(pred, 0, b, b + 1), per), reshape(slice(truth, 0, b, b + 1), per));
  }
  return total / static_cast<double>(B);
}

double mse_reduction(double map_mse, double mean_mse) {
  if (mean_mse == 0.0) throw std::domain_error("mse_reduction: mean-imputation MSE is zero");
  return 100.0 * (map_mse - mean_mse) / mean_mse;
}

Tensor zero_velocity_predict(const Tensor& observed, std::size_t horizon) {
  if (observed.rank() == 0 || observed.dim(-1) == 0) throw ShapeError("zero_velocity_predict: no observed frames");
  if (horizon == 0) throw ShapeError("zero_velocity_predict: horizon must be positive");
  const std::size_t N = observed.dim(-1);
  const std::size_t rows = observed.size() / N;
  std::vector<double> out(rows * horizon);
  for (std::size_t r = 0; r < rows; ++r) {
    std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(r * horizon), horizon, observed[r * N + N - 1]);
  }
  Shape shape = observed.shape();
  shape.back() = horizon;
  return Tensor(std::move(shape), std::move(out));
}

std::string render_svg(const SvgPlot& plot) {
  const double left = 80, right = 160, top = 40, bottom = 60;
  const double pw = plot.width - left - right;
  const double ph = plot.height - top - bottom;

  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin;
  for (const auto& s : plot.series) {
    if (s.x.size() != s.y.size()) throw std::invalid_argument("svg series '" + s.label + "' has ragged data");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  }
  if (!std::isfinite(xmin)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (xmax == xmin) xmin -= 0.5, xmax += 0.5;
  if (ymax == ymin) ymin -= 0.5, ymax += 0.5;
  const double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;
  auto px = [&](double x) { return left + pw * (x - xmin) / (xmax - xmin); };
  auto py = [&](double y) { return top + ph * (1.0 - (y - ymin) / (ymax - ymin)); };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << plot.width << "\" height=\"" << plot.height
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << left + pw / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" << escape(plot.title)
     << "</text>\n";
  os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (double t : ticks(xmin, xmax)) {
    os << "<line x1=\"" << px(t) << "\" y1=\"" << top + ph << "\" x2=\"" << px(t) << "\" y2=\"" << top + ph + 5
       << "\" stroke=\"black\"/><text x=\"" << px(t) << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">"
       << num(t) << "</text>\n";
  }
  for (double t : ticks(ymin, ymax)) {
    os << "<line x1=\"" << left - 5 << "\" y1=\"" << py(t) << "\" x2=\"" << left << "\" y2=\"" << py(t)
       << "\" stroke=\"black\"/><text x=\"" << left - 8 << "\" y=\"" << py(t) + 4 << "\" text-anchor=\"end\">"
       << num(t) << "</text>\n";
  }
  os << "<text x=\"" << left + pw / 2 << "\" y=\"" << plot.height - 15 << "\" text-anchor=\"middle\">"
     << escape(plot.x_label) << "</text>\n";
  os << "<text transform=\"translate(18," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
     << escape(plot.y_label) << "</text>\n";

  for (std::size_t k = 0; k < plot.series.size(); ++k) {
    const auto& s = plot.series[k];
    const char* color = kPalette[k % std::size(kPalette)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) os << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
    }
    os << "\"/>\n";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) {
        os << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i]) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
      }
    }
    const double ly = top + 10 + 18 * static_cast<double>(k);
    os << "<line x1=\"" << left + pw + 12 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 32 << "\" y2=\"" << ly
       << "\" stroke=\"" << color << "\" stroke-width=\"2\"/><text x=\"" << left + pw + 38 << "\" y=\"" << ly + 4
       << "\">" << escape(s.label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::vector<ImputationRow> parse_imputation_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("datapoint,count,method,score,masked_mse", 0) != 0) {
    throw std::invalid_argument("imputation csv: missing header datapoint,count,method,score,masked_mse");
  }
  std::vector<ImputationRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream fields(line);
    for (std::string cell; std::getline(fields, cell, ',');) f.push_back(cell);
    if (f.size() != 5) throw std::invalid_argument("imputation csv line " + std::to_string(line_no) + ": expected 5 fields");
    try {
      rows.push_back({std::stoul(f[0]), std::stoul(f[1]), f[2], std::stod(f[3]), std::stod(f[4])});
    } catch (const std::logic_error&) {
      throw std::invalid_argument("imputation csv line " + std::to_string(line_no) + ": malformed number");
    }
  }
  return rows;
}

ImputationSummary summarize(std::span<const ImputationRow> rows) {
  ImputationSummary out;
  for (const auto& r : rows) {
    auto& m = out[r.count][r.method];
    m.score_mean += r.score;
    m.mse_mean += r.masked_mse;
    ++m.rows;
  }
  for (auto& [count, methods] : out) {
    for (auto& [name, m] : methods) {
      m.score_mean /= static_cast<double>(m.rows);
      m.mse_mean /= static_cast<double>(m.rows);
    }
  }
  return out;
}

SvgPlot score_plot(const ImputationSummary& summary) {
  SvgPlot plot{"Score against occlusion", "occluded entries", "mean score", {}};
  std::map<std::string, SvgSeries> by_method;
  for (const auto& [count, methods] : summary) {
    for (const auto& [name, m] : methods) {
      auto& s = by_method[name];
      s.label = name;
      s.x.push_back(static_cast<double>(count));
      s.y.push_back(m.score_mean);
    }
  }
  // Ground truth is scored once; draw it as a flat reference line.
  if (auto gt = by_method.find("ground_truth"); gt != by_method.end() && summary.size() > 1) {
    const double level = gt->second.y.front();
    gt->second.x = {static_cast<double>(summary.begin()->first), static_cast<double>(summary.rbegin()->first)};
    gt->second.y = {level, level};
  }
  for (auto& [name, s] : by_method) plot.series.push_back(std::move(s));
  return plot;
}

SvgPlot mse_reduction_plot(const ImputationSummary& summary) {
  SvgPlot plot{"MAP imputation against mean imputation", "occluded entries", "% change in masked MSE", {}};
  SvgSeries s{"map vs mean", {}, {}};
  for (const auto& [count, methods] : summary) {
    auto mean = methods.find("mean");
    auto map = methods.find("map");
    if (mean == methods.end() || map == methods.end() || mean->second.mse_mean == 0.0) continue;
    s.x.push_back(static_cast<double>(count));
    s.y.push_back(mse_reduction(map->second.mse_mean, mean->second.mse_mean));
  }
  plot.series.push_back(std::move(s));
  return plot;
}

std::string summary_csv(const ImputationSummary& summary) {
  std::ostringstream os;
  os << "count,method,rows,score_mean,mse_mean,mse_reduction_percent\n";
  for (const auto& [count, methods] : summary) {
    const auto mean = methods.find("mean");
    for (const auto& [name, m] : methods) {
      std::string reduction;
      if (name == "map" && mean != methods.end() && mean->second.mse_mean != 0.0) {
        reduction = num(mse_reduction(m.mse_mean, mean->second.mse_mean), "%.17g");
      }
      os << count << ',' << name << ',' << m.rows << ',' << num(m.score_mean, "%.17g") << ','
         << num(m.mse_mean, "%.17g") << ',' << reduction << '\n';
    }
  }
  return os.str();
}

}  // namespace hgvae
