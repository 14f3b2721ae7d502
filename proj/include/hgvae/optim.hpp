#pragma once

#include "hgvae/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace hgvae {

using GradientList = std::vector<std::vector<double>>;

/// Copies the accumulated gradient of every parameter (zeros when none).
GradientList collect_gradients(std::span<const NamedTensor<double>> params);

/// Global L2 norm across all gradient buffers.
double global_norm(const GradientList& grads);

/// Rescales all gradients by max_norm / norm when the global norm exceeds
/// max_norm. Returns the norm measured before clipping.
double clip_global_norm(GradientList& grads, double max_norm);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

/// One bias-corrected Adam update applied in place to `params`.
/// Throws NonFiniteError naming the first parameter with a NaN/Inf gradient;
/// in that case nothing is updated.
void adam_step(std::span<NamedTensor<double>> params, const GradientList& grads, AdamState& state,
               double learning_rate);

}  // namespace hgvae
