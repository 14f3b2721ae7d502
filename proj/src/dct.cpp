#include "hgvae/dct.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace hgvae {

namespace {

std::vector<double> build_matrix(std::size_t n, std::size_t kept) {
  std::vector<double> m(kept * n);
  const double norm = std::sqrt(2.0 / static_cast<double>(n));
  for (std::size_t l = 0; l < kept; ++l) {
    const double w = l == 0 ? 1.0 / std::numbers::sqrt2 : 1.0;
    for (std::size_t t = 0; t < n; ++t) {
      const double angle = std::numbers::pi * static_cast<double>((2 * t + 1) * l) / (2.0 * static_cast<double>(n));
      m[l * n + t] = norm * w * std::cos(angle);
    }
  }
  return m;
}

}  // namespace

DctCodec::DctCodec(std::size_t length, std::size_t kept) : length_(length), kept_(kept == 0 ? length : kept) {
  if (length == 0) throw std::invalid_argument("DctCodec: trajectory length must be at least 1");
  if (kept_ > length_) throw std::invalid_argument("DctCodec: cannot keep more coefficients than timepoints");
  matrix_ = Tensor({kept_, length_}, build_matrix(length_, kept_));
  matrix_t_ = transpose(matrix_);
}

std::vector<double> DctCodec::forward(std::span<const double> trajectory) const {
  if (trajectory.size() != length_) {
    throw ShapeError("dct_forward: expected " + std::to_string(length_) + " timepoints, got " +
                     std::to_string(trajectory.size()));
  }
  std::vector<double> out(kept_, 0.0);
  const auto m = matrix_.data();
  for (std::size_t l = 0; l < kept_; ++l) {
    double acc = 0.0;
    for (std::size_t t = 0; t < length_; ++t) acc += m[l * length_ + t] * trajectory[t];
    out[l] = acc;
  }
  return out;
}

std::vector<double> DctCodec::inverse(std::span<const double> coefficients) const {
  if (cropped()) throw std::logic_error("dct_inverse: codec drops frequencies and cannot be inverted");
  if (coefficients.size() != length_) {
    throw ShapeError("dct_inverse: expected " + std::to_string(length_) + " coefficients, got " +
                     std::to_string(coefficients.size()));
  }
  std::vector<double> out(length_, 0.0);
  const auto m = matrix_.data();
  for (std::size_t l = 0; l < length_; ++l) {
    for (std::size_t t = 0; t < length_; ++t) out[t] += m[l * length_ + t] * coefficients[l];
  }
  return out;
}

Tensor DctCodec::encode(const Tensor& trajectories) const {
  if (trajectories.rank() == 1) {
    return reshape(matmul(reshape(trajectories, {1, length_}), matrix_t_), {kept_});
  }
  return matmul(trajectories, matrix_t_);
}

Tensor DctCodec::decode(const Tensor& coefficients) const {
  if (cropped()) throw std::logic_error("dct_inverse: codec drops frequencies and cannot be inverted");
  if (coefficients.rank() == 1) {
    return reshape(matmul(reshape(coefficients, {1, length_}), matrix_), {length_});
  }
  return matmul(coefficients, matrix_);
}

std::vector<double> dct_forward(std::span<const double> trajectory) {
  if (trajectory.empty()) throw std::invalid_argument("dct_forward: empty trajectory");
  return DctCodec(trajectory.size()).forward(trajectory);
}

std::vector<double> dct_inverse(std::span<const double> coefficients) {
  if (coefficients.empty()) throw std::invalid_argument("dct_inverse: empty coefficient vector");
  return DctCodec(coefficients.size()).inverse(coefficients);
}

}  // namespace hgvae
