#pragma once

// Diagonal-Gaussian densities and divergences used by both VAEs. Scales are
// always carried as log-scales (log standard deviations).

#include "hgvae/tensor.hpp"

#include <random>

namespace hgvae {

struct GaussianParams {
  Tensor mean;
  Tensor log_scale;
};

/// Elementwise log N(x | mean, exp(log_scale)^2).
Tensor gaussian_log_density(const Tensor& x, const Tensor& mean, const Tensor& log_scale);

/// Elementwise closed-form KL(N(mq, sq) || N(mp, sp)).
Tensor gaussian_kl(const GaussianParams& q, const GaussianParams& p);

/// KL against the standard normal.
Tensor standard_normal_kl(const GaussianParams& q);

/// mean + temperature * exp(log_scale) * noise.
Tensor reparameterize(const GaussianParams& dist, const Tensor& noise, double temperature);

/// Standard normal draws shaped like `shape`.
Tensor standard_normal(const Shape& shape, std::mt19937_64& rng);

/// Sums all axes but the leading batch axis: [B, ...] -> [B].
Tensor sum_per_datapoint(const Tensor& t);

}  // namespace hgvae
