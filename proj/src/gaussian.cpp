#include "hgvae/gaussian.hpp"

#include <cmath>
#include <numbers>

namespace hgvae {

namespace {
const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);
}

Tensor gaussian_log_density(const Tensor& x, const Tensor& mean, const Tensor& log_scale) {
  Tensor z = mul(sub(x, mean), exp(neg(log_scale)));
  return add_scalar(neg(add(log_scale, scale(square(z), 0.5))), -kHalfLog2Pi);
}

Tensor gaussian_kl(const GaussianParams& q, const GaussianParams& p) {
  // log(sp/sq) + (sq^2 + (mq-mp)^2) / (2 sp^2) - 1/2
  Tensor var_ratio = exp(scale(sub(q.log_scale, p.log_scale), 2.0));
  Tensor mean_term = square(mul(sub(q.mean, p.mean), exp(neg(p.log_scale))));
  Tensor kl = add(sub(p.log_scale, q.log_scale), scale(add(var_ratio, mean_term), 0.5));
  return add_scalar(kl, -0.5);
}

Tensor standard_normal_kl(const GaussianParams& q) {
  // -log sq + (sq^2 + mq^2) / 2 - 1/2
  Tensor kl = add(neg(q.log_scale), scale(add(exp(scale(q.log_scale, 2.0)), square(q.mean)), 0.5));
  return add_scalar(kl, -0.5);
}

Tensor reparameterize(const GaussianParams& dist, const Tensor& noise, double temperature) {
  if (temperature == 0.0) return add_scalar(dist.mean, 0.0);
  return add(dist.mean, mul(exp(dist.log_scale), scale(noise, temperature)));
}

Tensor standard_normal(const Shape& shape, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> values(shape_size(shape));
  for (double& v : values) v = normal(rng);
  return Tensor(shape, std::move(values));
}

Tensor sum_per_datapoint(const Tensor& t) {
  const std::size_t batch = t.dim(0);
  Tensor flat = reshape(t, {batch, t.size() / batch});
  return sum(flat, 1);
}

}  // namespace hgvae
