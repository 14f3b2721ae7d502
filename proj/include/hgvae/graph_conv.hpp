#pragma once

// Graph convolutional layer (GCL) and block (GCB) on graphs stored as
// [nodes, features] matrices, optionally with a leading batch axis.
//
//   GCL(A) = act(S A W + b)
//   GCB(A) = act(S2 act(S1 A W1 + b1) W2 + b2) + alpha * A
//
// S mixes nodes and can change their number, W mixes features. With
// `rezero_on_branch` the block instead computes alpha * branch(A) + A.

#include "hgvae/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>

namespace hgvae {

using Rng = std::mt19937_64;

struct GclShape {
  std::size_t nodes_in = 0;
  std::size_t features_in = 0;
  std::size_t nodes_out = 0;
  std::size_t features_out = 0;

  std::size_t parameter_count() const {
    return nodes_out * nodes_in + features_in * features_out + nodes_out * features_out;
  }
};

struct GclParams {
  Tensor mix;     // S: [nodes_out, nodes_in]
  Tensor weight;  // W: [features_in, features_out]
  Tensor bias;    // b: [nodes_out, features_out]

  GclShape shape() const;
};

struct GcbParams {
  GclParams first;
  GclParams second;
  Tensor alpha;  // [1], starts at exactly 0

  std::size_t nodes() const { return first.mix.dim(0); }
  std::size_t features() const { return first.weight.dim(0); }
};

/// W ~ U(+-sqrt(6/(fan_in+fan_out))), S = truncated identity + U(+-0.01), b = 0.
GclParams init_gcl(const GclShape& shape, Rng& rng);
GclParams init_gcl(const GclShape& shape, std::uint64_t seed);
GcbParams init_gcb(std::size_t nodes, std::size_t features, Rng& rng);
GcbParams init_gcb(std::size_t nodes, std::size_t features, std::uint64_t seed);

Tensor gcl_forward(const Tensor& graph, const GclParams& params, bool activate = true);
Tensor gcb_forward(const Tensor& graph, const GcbParams& params, bool rezero_on_branch = false);

void register_parameters(ParameterList& list, const std::string& prefix, const GclParams& params);
void register_parameters(ParameterList& list, const std::string& prefix, const GcbParams& params);

}  // namespace hgvae
