#include "hgvae/graph_conv.hpp"

#include <cmath>

namespace hgvae {

GclShape GclParams::shape() const {
  return {mix.dim(1), weight.dim(0), mix.dim(0), weight.dim(1)};
}

GclParams init_gcl(const GclShape& shape, Rng& rng) {
  if (shape.nodes_in == 0 || shape.features_in == 0 || shape.nodes_out == 0 || shape.features_out == 0) {
    throw std::invalid_argument("init_gcl: dimensions must be positive");
  }
  const double limit = std::sqrt(6.0 / static_cast<double>(shape.features_in + shape.features_out));
  std::uniform_real_distribution<double> weight_dist(-limit, limit);
  std::uniform_real_distribution<double> mix_noise(-0.01, 0.01);

  std::vector<double> mix(shape.nodes_out * shape.nodes_in);
  for (std::size_t i = 0; i < shape.nodes_out; ++i) {
    for (std::size_t j = 0; j < shape.nodes_in; ++j) {
      mix[i * shape.nodes_in + j] = (i == j ? 1.0 : 0.0) + mix_noise(rng);
    }
  }
  std::vector<double> weight(shape.features_in * shape.features_out);
  for (double& w : weight) w = weight_dist(rng);

  GclParams p;
  p.mix = Tensor({shape.nodes_out, shape.nodes_in}, std::move(mix), true);
  p.weight = Tensor({shape.features_in, shape.features_out}, std::move(weight), true);
  p.bias = Tensor::zeros({shape.nodes_out, shape.features_out}, true);
  return p;
}

GclParams init_gcl(const GclShape& shape, std::uint64_t seed) {
  Rng rng(seed);
  return init_gcl(shape, rng);
}

GcbParams init_gcb(std::size_t nodes, std::size_t features, Rng& rng) {
  const GclShape square{nodes, features, nodes, features};
  GcbParams p;
  p.first = init_gcl(square, rng);
  p.second = init_gcl(square, rng);
  p.alpha = Tensor::zeros({1}, true);
  return p;
}

GcbParams init_gcb(std::size_t nodes, std::size_t features, std::uint64_t seed) {
  Rng rng(seed);
  return init_gcb(nodes, features, rng);
}

Tensor gcl_forward(const Tensor& graph, const GclParams& params, bool activate) {
  if (graph.rank() < 2) throw ShapeError("gcl: graph must be [nodes, features], got " + shape_string(graph.shape()));
  const GclShape s = params.shape();
  if (graph.dim(-2) != s.nodes_in || graph.dim(-1) != s.features_in) {
    throw ShapeError("gcl: graph " + shape_string(graph.shape()) + " does not match S " +
                     shape_string(params.mix.shape()) + " and W " + shape_string(params.weight.shape()));
  }
  // Pick the cheaper association of S A W.
  const std::size_t mix_first = s.nodes_out * s.nodes_in * s.features_in + s.nodes_out * s.features_in * s.features_out;
  const std::size_t weight_first = s.nodes_in * s.features_in * s.features_out + s.nodes_out * s.nodes_in * s.features_out;
  Tensor mixed = mix_first < weight_first ? matmul(matmul(params.mix, graph), params.weight)
                                          : matmul(params.mix, matmul(graph, params.weight));
  Tensor out = add(mixed, params.bias);
  return activate ? gelu(out) : out;
}

Tensor gcb_forward(const Tensor& graph, const GcbParams& params, bool rezero_on_branch) {
  if (params.first.shape().nodes_in != params.first.shape().nodes_out ||
      params.second.shape().nodes_in != params.second.shape().nodes_out ||
      params.first.shape().features_in != params.second.shape().features_out) {
    throw ShapeError("gcb: parameters are not shape-preserving");
  }
  Tensor branch = gcl_forward(gcl_forward(graph, params.first, true), params.second, true);
  if (rezero_on_branch) return add(mul(branch, params.alpha), graph);
  return add(branch, mul(graph, params.alpha));
}

void register_parameters(ParameterList& list, const std::string& prefix, const GclParams& params) {
  list.push_back({prefix + ".S", params.mix});
  list.push_back({prefix + ".W", params.weight});
  list.push_back({prefix + ".b", params.bias});
}

void register_parameters(ParameterList& list, const std::string& prefix, const GcbParams& params) {
  register_parameters(list, prefix + ".l1", params.first);
  register_parameters(list, prefix + ".l2", params.second);
  list.push_back({prefix + ".alpha", params.alpha});
}

}  // namespace hgvae
