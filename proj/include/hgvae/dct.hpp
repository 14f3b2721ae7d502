#pragma once

#include "hgvae/tensor.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace hgvae {

/// Orthonormal DCT-II over trajectories of a fixed length.
///
/// Coefficient l (zero-based) of a trajectory x of length N is
///   C_l = sqrt(2/N) * w_l * sum_n x_n cos(pi (2n+1) l / (2N)),
/// with w_0 = 1/sqrt(2) and w_l = 1 otherwise. The transform matrix is
/// orthonormal so the inverse is its transpose.
class DctCodec {
 public:
  /// `kept` limits the encoding to the lowest `kept` frequencies; 0 keeps all.
  explicit DctCodec(std::size_t length, std::size_t kept = 0);

  std::size_t length() const { return length_; }
  std::size_t coefficients() const { return kept_; }
  bool cropped() const { return kept_ != length_; }

  /// Row-major [coefficients, length] transform matrix.
  const Tensor& matrix() const { return matrix_; }

  std::vector<double> forward(std::span<const double> trajectory) const;
  /// Requires an uncropped codec.
  std::vector<double> inverse(std::span<const double> coefficients) const;

  /// Differentiable encoding of the last axis: [..., length] -> [..., coefficients].
  Tensor encode(const Tensor& trajectories) const;
  /// Differentiable decoding of the last axis: [..., coefficients] -> [..., length].
  Tensor decode(const Tensor& coefficients) const;

 private:
  std::size_t length_;
  std::size_t kept_;
  Tensor matrix_;
  Tensor matrix_t_;
};

/// Uncropped forward transform of one trajectory.
std::vector<double> dct_forward(std::span<const double> trajectory);
std::vector<double> dct_inverse(std::span<const double> coefficients);

}  // namespace hgvae
