#include "hgvae/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace hgvae {

GradientList collect_gradients(std::span<const NamedTensor<double>> params) {
  GradientList grads;
  grads.reserve(params.size());
  for (const auto& p : params) {
    if (p.value.has_grad()) {
      auto g = p.value.grad_data();
      grads.emplace_back(g.begin(), g.end());
    } else {
      grads.emplace_back(p.value.size(), 0.0);
    }
  }
  return grads;
}

double global_norm(const GradientList& grads) {
  double total = 0.0;
  for (const auto& g : grads) {
    for (double v : g) total += v * v;
  }
  return std::sqrt(total);
}

double clip_global_norm(GradientList& grads, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip_global_norm: max_norm must be positive");
  const double norm = global_norm(grads);
  if (!std::isfinite(norm)) throw NonFiniteError("clip_global_norm: gradient norm is not finite");
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& g : grads) {
      for (double& v : g) v *= factor;
    }
  }
  return norm;
}

void adam_step(std::span<NamedTensor<double>> params, const GradientList& grads, AdamState& state,
               double learning_rate) {
  if (grads.size() != params.size()) {
    throw std::invalid_argument("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                                std::to_string(params.size()) + " parameters");
  }
  if (!(learning_rate > 0.0)) throw std::invalid_argument("adam_step: learning rate must be positive");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i].value.size()) {
      throw ShapeError("adam_step: gradient size mismatch for '" + params[i].name + "'");
    }
    for (double v : grads[i]) {
      if (!std::isfinite(v)) throw NonFiniteError("adam_step: non-finite gradient for '" + params[i].name + "'");
    }
  }
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.value.size(), 0.0);
      state.second_moment.emplace_back(p.value.size(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw std::invalid_argument("adam_step: optimizer state belongs to a different parameter set");
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto values = params[i].value.mutable_data();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    const auto& g = grads[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      values[j] -= learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

}  // namespace hgvae
