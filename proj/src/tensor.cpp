#include "hgvae/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

namespace hgvae {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace {

template <typename T>
using Node = detail::Node<T>;
template <typename T>
using NodePtr = std::shared_ptr<detail::Node<T>>;

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapC = Eigen::Map<const RowMat<T>>;
template <typename T>
using MapM = Eigen::Map<RowMat<T>>;

std::size_t normalize_axis(int axis, std::size_t rank, const char* op) {
  const int r = static_cast<int>(rank);
  if (axis < -r || axis >= r) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  return static_cast<std::size_t>(axis < 0 ? axis + r : axis);
}

template <typename T>
void check_finite(const Buffer<T>& data, const char* op) {
  for (T v : data) {
    if (!std::isfinite(v)) throw NonFiniteError(std::string(op) + ": produced a non-finite value");
  }
}

// Wraps a freshly computed buffer into a tensor and, when a tape is active and
// some input needs gradients, records the backward closure.
template <typename T>
BasicTensor<T> make_result(const char* op, Shape shape, Buffer<T> data,
                           std::vector<NodePtr<T>> inputs,
                           typename GradientTape<T>::Backward backward) {
  check_finite(data, op);
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  auto* tape = GradientTape<T>::active();
  const bool needs = tape != nullptr && std::any_of(inputs.begin(), inputs.end(), [](const NodePtr<T>& n) {
                       return n->requires_grad;
                     });
  if (needs) {
    node->requires_grad = true;
    tape->record({op, node, std::move(inputs), std::move(backward)});
  }
  return BasicTensor<T>(node);
}

// ---------------------------------------------------------------------------
// Broadcasting
// ---------------------------------------------------------------------------

struct BroadcastPlan {
  enum class Mode { Same, ScalarA, ScalarB, SuffixA, SuffixB, General };
  Mode mode = Mode::Same;
  Shape out;
  std::size_t size = 0;
  std::size_t size_a = 0;
  std::size_t size_b = 0;
  std::vector<std::size_t> index_a;  // General mode only
  std::vector<std::size_t> index_b;
};

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

BroadcastPlan make_plan(const Shape& a, const Shape& b, const char* op) {
  BroadcastPlan p;
  const std::size_t rank = std::max(a.size(), b.size());
  p.out.assign(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_string(a) + " with " + shape_string(b));
    }
    p.out[i] = std::max(da, db);
  }
  p.size = shape_size(p.out);
  p.size_a = shape_size(a);
  p.size_b = shape_size(b);
  using M = BroadcastPlan::Mode;
  if (a == b) {
    p.mode = M::Same;
  } else if (p.size_b == 1 && p.size_a == p.size) {
    p.mode = M::ScalarB;
  } else if (p.size_a == 1 && p.size_b == p.size) {
    p.mode = M::ScalarA;
  } else if (p.size_a == p.size && is_suffix(b, p.out)) {
    p.mode = M::SuffixB;
  } else if (p.size_b == p.size && is_suffix(a, p.out)) {
    p.mode = M::SuffixA;
  } else {
    p.mode = M::General;
    std::vector<std::size_t> stride_a(rank, 0), stride_b(rank, 0);
    std::size_t sa = 1, sb = 1;
    for (std::size_t k = rank; k-- > 0;) {
      const std::size_t ia = k + a.size();
      if (ia >= rank) {
        const std::size_t d = a[ia - rank];
        stride_a[k] = d == 1 ? 0 : sa;
        sa *= d;
      }
      const std::size_t ib = k + b.size();
      if (ib >= rank) {
        const std::size_t d = b[ib - rank];
        stride_b[k] = d == 1 ? 0 : sb;
        sb *= d;
      }
    }
    p.index_a.resize(p.size);
    p.index_b.resize(p.size);
    std::vector<std::size_t> counter(rank, 0);
    std::size_t off_a = 0, off_b = 0;
    for (std::size_t i = 0; i < p.size; ++i) {
      p.index_a[i] = off_a;
      p.index_b[i] = off_b;
      for (std::size_t k = rank; k-- > 0;) {
        ++counter[k];
        off_a += stride_a[k];
        off_b += stride_b[k];
        if (counter[k] < p.out[k]) break;
        off_a -= stride_a[k] * counter[k];
        off_b -= stride_b[k] * counter[k];
        counter[k] = 0;
      }
    }
  }
  return p;
}

template <typename F>
void visit(const BroadcastPlan& p, F&& f) {
  using M = BroadcastPlan::Mode;
  switch (p.mode) {
    case M::Same:
      for (std::size_t i = 0; i < p.size; ++i) f(i, i, i);
      break;
    case M::ScalarA:
      for (std::size_t i = 0; i < p.size; ++i) f(i, 0, i);
      break;
    case M::ScalarB:
      for (std::size_t i = 0; i < p.size; ++i) f(i, i, 0);
      break;
    case M::SuffixA:
      for (std::size_t i = 0; i < p.size; ++i) f(i, i % p.size_a, i);
      break;
    case M::SuffixB:
      for (std::size_t i = 0; i < p.size; ++i) f(i, i, i % p.size_b);
      break;
    case M::General:
      for (std::size_t i = 0; i < p.size; ++i) f(i, p.index_a[i], p.index_b[i]);
      break;
  }
}

// Shared skeleton for the four broadcasting arithmetic operations. `fwd`
// computes one output value; `dfa`/`dfb` give the local partials given the
// operand values.
template <typename T, typename Fwd, typename Da, typename Db>
BasicTensor<T> binary_op(const char* op, const BasicTensor<T>& a, const BasicTensor<T>& b, Fwd fwd, Da dfa,
                         Db dfb) {
  auto plan = std::make_shared<BroadcastPlan>(make_plan(a.shape(), b.shape(), op));
  Buffer<T> out(plan->size);
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  visit(*plan, [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = fwd(pa[ia], pb[ib]); });
  auto na = a.node();
  auto nb = b.node();
  return make_result<T>(op, plan->out, std::move(out), {na, nb}, [plan, na, nb, dfa, dfb](Node<T>& o) {
    const T* g = o.grad.data();
    const T* va = na->data.data();
    const T* vb = nb->data.data();
    if (na->requires_grad) {
      T* ga = na->grad_buffer().data();
      visit(*plan, [&](std::size_t i, std::size_t ia, std::size_t ib) { ga[ia] += g[i] * dfa(va[ia], vb[ib]); });
    }
    if (nb->requires_grad) {
      T* gb = nb->grad_buffer().data();
      visit(*plan, [&](std::size_t i, std::size_t ia, std::size_t ib) { gb[ib] += g[i] * dfb(va[ia], vb[ib]); });
    }
  });
}

// Elementwise unary op; `deriv(x, y)` is the local derivative given the input
// value x and output value y.
template <typename T, typename Fwd, typename Deriv>
BasicTensor<T> unary_op(const char* op, const BasicTensor<T>& a, Fwd fwd, Deriv deriv) {
  Buffer<T> out(a.size());
  const T* pa = a.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(pa[i]);
  auto na = a.node();
  return make_result<T>(op, a.shape(), std::move(out), {na}, [na, deriv](Node<T>& o) {
    if (!na->requires_grad) return;
    T* ga = na->grad_buffer().data();
    const T* va = na->data.data();
    const T* vo = o.data.data();
    const T* g = o.grad.data();
    for (std::size_t i = 0; i < o.data.size(); ++i) ga[i] += g[i] * deriv(va[i], vo[i]);
  });
}

struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// BasicTensor
// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data, bool requires_grad) {
  if (shape_size(shape) != data.size()) {
    throw ShapeError("tensor: shape " + shape_string(shape) + " does not hold " + std::to_string(data.size()) +
                     " values");
  }
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor: zero-sized dimension in " + shape_string(shape));
  }
  node_ = std::make_shared<detail::Node<T>>();
  node_->shape = std::move(shape);
  node_->data.assign(data.begin(), data.end());
  node_->requires_grad = requires_grad;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value, bool requires_grad) {
  const std::size_t n = shape_size(shape);
  return BasicTensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value, bool requires_grad) {
  return BasicTensor(Shape{1}, std::vector<T>{value}, requires_grad);
}

template <typename T>
std::size_t BasicTensor<T>::dim(int axis) const {
  return shape()[normalize_axis(axis, rank(), "dim")];
}

template <typename T>
T BasicTensor<T>::item() const {
  if (size() != 1) throw ShapeError("item: tensor of shape " + shape_string(shape()) + " is not a scalar");
  return node_->data[0];
}

template <typename T>
BasicTensor<T> BasicTensor<T>::grad() const {
  if (node_->grad.empty()) return zeros(node_->shape);
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = node_->shape;
  node->data = node_->grad;
  return BasicTensor(std::move(node));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach() const {
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = node_->shape;
  node->data = node_->data;
  return BasicTensor(std::move(node));
}

// ---------------------------------------------------------------------------
// GradientTape
// ---------------------------------------------------------------------------

namespace {
template <typename T>
GradientTape<T>*& active_slot() {
  thread_local GradientTape<T>* slot = nullptr;
  return slot;
}
}  // namespace

template <typename T>
GradientTape<T>::GradientTape() : previous_(active_slot<T>()) {
  active_slot<T>() = this;
}

template <typename T>
GradientTape<T>::~GradientTape() {
  active_slot<T>() = previous_;
}

template <typename T>
GradientTape<T>* GradientTape<T>::active() {
  return active_slot<T>();
}

template <typename T>
void GradientTape<T>::backward(const BasicTensor<T>& loss) {
  if (loss.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  loss.node()->grad_buffer()[0] += T(1);
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->backward(*it->output);
  }
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary_op<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); }, [](T, T) { return T(1); });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary_op<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary_op<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}

template <typename T>
BasicTensor<T> div(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary_op<T>(
      "div", a, b, [](T x, T y) { return x / y; }, [](T, T y) { return T(1) / y; },
      [](T x, T y) { return -x / (y * y); });
}

template <typename T>
BasicTensor<T> neg(const BasicTensor<T>& a) {
  return unary_op<T>("neg", a, [](T x) { return -x; }, [](T, T) { return T(-1); });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
  return unary_op<T>("scale", a, [factor](T x) { return factor * x; }, [factor](T, T) { return factor; });
}

template <typename T>
BasicTensor<T> add_scalar(const BasicTensor<T>& a, T offset) {
  return unary_op<T>("add_scalar", a, [offset](T x) { return x + offset; }, [](T, T) { return T(1); });
}

template <typename T>
BasicTensor<T> exp(const BasicTensor<T>& a) {
  return unary_op<T>("exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
BasicTensor<T> log(const BasicTensor<T>& a) {
  return unary_op<T>("log", a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
BasicTensor<T> square(const BasicTensor<T>& a) {
  return unary_op<T>("square", a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& a) {
  constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  constexpr T inv_sqrt2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
  return unary_op<T>(
      "gelu", a, [](T x) { return T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2)); },
      [](T x, T) {
        const T cdf = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
        return cdf + x * inv_sqrt2pi * std::exp(T(-0.5) * x * x);
      });
}

template <typename T>
BasicTensor<T> clamp(const BasicTensor<T>& a, T lo, T hi) {
  return unary_op<T>(
      "clamp", a, [lo, hi](T x) { return std::clamp(x, lo, hi); },
      [lo, hi](T x, T) { return (x >= lo && x <= hi) ? T(1) : T(0); });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
  T total = 0;
  for (T v : a.data()) total += v;
  auto na = a.node();
  return make_result<T>("sum", Shape{1}, {total}, {na}, [na](Node<T>& o) {
    if (!na->requires_grad) return;
    const T g = o.grad[0];
    for (T& v : na->grad_buffer()) v += g;
  });
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a, int axis, bool keepdim) {
  const std::size_t ax = normalize_axis(axis, a.rank(), "sum");
  const AxisSplit s = split_axis(a.shape(), ax);
  Shape out_shape = a.shape();
  if (keepdim) {
    out_shape[ax] = 1;
  } else {
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
    if (out_shape.empty()) out_shape = {1};
  }
  Buffer<T> out(s.outer * s.inner, T(0));
  const T* pa = a.data().data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t k = 0; k < s.n; ++k) {
      const T* row = pa + (o * s.n + k) * s.inner;
      T* dst = out.data() + o * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += row[i];
    }
  }
  auto na = a.node();
  return make_result<T>("sum_axis", std::move(out_shape), std::move(out), {na}, [na, s](Node<T>& o) {
    if (!na->requires_grad) return;
    T* ga = na->grad_buffer().data();
    for (std::size_t oo = 0; oo < s.outer; ++oo) {
      const T* src = o.grad.data() + oo * s.inner;
      for (std::size_t k = 0; k < s.n; ++k) {
        T* row = ga + (oo * s.n + k) * s.inner;
        for (std::size_t i = 0; i < s.inner; ++i) row[i] += src[i];
      }
    }
  });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& a, int axis, bool keepdim) {
  const std::size_t n = a.dim(axis);
  return scale(sum(a, axis, keepdim), T(1) / static_cast<T>(n));
}

// ---------------------------------------------------------------------------
// Matrix product
// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  auto fail = [&]() {
    throw ShapeError("matmul: incompatible shapes " + shape_string(sa) + " and " + shape_string(sb));
  };
  if (sa.size() < 2 || sb.size() < 2) fail();
  const std::size_t m = sa[sa.size() - 2];
  const std::size_t k = sa.back();
  const std::size_t k2 = sb[sb.size() - 2];
  const std::size_t n = sb.back();
  if (k != k2) fail();

  const Shape lead_a(sa.begin(), sa.end() - 2);
  const Shape lead_b(sb.begin(), sb.end() - 2);
  if (!lead_a.empty() && !lead_b.empty() && lead_a != lead_b) fail();
  const Shape& lead = lead_a.empty() ? lead_b : lead_a;
  const std::size_t batch = shape_size(lead);
  Shape out_shape = lead;
  out_shape.push_back(m);
  out_shape.push_back(n);

  Buffer<T> out(batch * m * n);
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  const bool batched_a = !lead_a.empty();
  const bool batched_b = !lead_b.empty();

  if (!batched_b) {
    // Leading axes of `a` fold into its row count: one GEMM.
    const std::size_t rows = batch * m;
    MapM<T>(out.data(), rows, n).noalias() = MapC<T>(pa, rows, k) * MapC<T>(pb, k, n);
  } else {
    for (std::size_t i = 0; i < batch; ++i) {
      const T* ai = pa + (batched_a ? i * m * k : 0);
      MapM<T>(out.data() + i * m * n, m, n).noalias() = MapC<T>(ai, m, k) * MapC<T>(pb + i * k * n, k, n);
    }
  }

  auto na = a.node();
  auto nb = b.node();
  return make_result<T>(
      "matmul", std::move(out_shape), std::move(out), {na, nb},
      [na, nb, batch, m, k, n, batched_a, batched_b](Node<T>& o) {
        const T* g = o.grad.data();
        const T* va = na->data.data();
        const T* vb = nb->data.data();
        if (!batched_b) {
          const std::size_t rows = batch * m;
          if (na->requires_grad) {
            MapM<T>(na->grad_buffer().data(), rows, k).noalias() +=
                MapC<T>(g, rows, n) * MapC<T>(vb, k, n).transpose();
          }
          if (nb->requires_grad) {
            MapM<T>(nb->grad_buffer().data(), k, n).noalias() +=
                MapC<T>(va, rows, k).transpose() * MapC<T>(g, rows, n);
          }
          return;
        }
        T* ga = na->requires_grad ? na->grad_buffer().data() : nullptr;
        T* gb = nb->requires_grad ? nb->grad_buffer().data() : nullptr;
        for (std::size_t i = 0; i < batch; ++i) {
          const T* gi = g + i * m * n;
          const std::size_t off_a = batched_a ? i * m * k : 0;
          if (ga) {
            MapM<T>(ga + off_a, m, k).noalias() += MapC<T>(gi, m, n) * MapC<T>(vb + i * k * n, k, n).transpose();
          }
          if (gb) {
            MapM<T>(gb + i * k * n, k, n).noalias() += MapC<T>(va + off_a, m, k).transpose() * MapC<T>(gi, m, n);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Structural
// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> concat(std::span<const BasicTensor<T>> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts[0].shape();
  const std::size_t ax = normalize_axis(axis, first.size(), "concat");
  Shape out_shape = first;
  out_shape[ax] = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    Shape probe = p.shape();
    if (probe.size() != first.size()) {
      throw ShapeError("concat: rank mismatch " + shape_string(first) + " vs " + shape_string(probe));
    }
    probe[ax] = first[ax];
    if (probe != first) {
      throw ShapeError("concat: shape mismatch " + shape_string(first) + " vs " + shape_string(p.shape()));
    }
    out_shape[ax] += p.shape()[ax];
  }
  const AxisSplit s = split_axis(out_shape, ax);
  for (const auto& p : parts) widths.push_back(p.shape()[ax] * s.inner);
  const std::size_t row = s.n * s.inner;
  Buffer<T> out(s.outer * row);
  std::vector<NodePtr<T>> nodes;
  std::size_t offset = 0;
  for (std::size_t j = 0; j < parts.size(); ++j) {
    const T* src = parts[j].data().data();
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(src + o * widths[j], widths[j], out.data() + o * row + offset);
    }
    offset += widths[j];
    nodes.push_back(parts[j].node());
  }
  auto inputs = nodes;
  return make_result<T>("concat", std::move(out_shape), std::move(out), std::move(inputs),
                        [nodes, widths, s, row](Node<T>& o) {
                          std::size_t off = 0;
                          for (std::size_t j = 0; j < nodes.size(); ++j) {
                            if (nodes[j]->requires_grad) {
                              T* g = nodes[j]->grad_buffer().data();
                              for (std::size_t oo = 0; oo < s.outer; ++oo) {
                                const T* src = o.grad.data() + oo * row + off;
                                T* dst = g + oo * widths[j];
                                for (std::size_t i = 0; i < widths[j]; ++i) dst[i] += src[i];
                              }
                            }
                            off += widths[j];
                          }
                        });
}

template <typename T>
BasicTensor<T> slice(const BasicTensor<T>& a, int axis, std::size_t begin, std::size_t end) {
  const std::size_t ax = normalize_axis(axis, a.rank(), "slice");
  if (begin >= end || end > a.shape()[ax]) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for shape " + shape_string(a.shape()));
  }
  const AxisSplit s = split_axis(a.shape(), ax);
  Shape out_shape = a.shape();
  out_shape[ax] = end - begin;
  const std::size_t width = (end - begin) * s.inner;
  const std::size_t row = s.n * s.inner;
  const std::size_t start = begin * s.inner;
  Buffer<T> out(s.outer * width);
  const T* pa = a.data().data();
  for (std::size_t o = 0; o < s.outer; ++o) std::copy_n(pa + o * row + start, width, out.data() + o * width);
  auto na = a.node();
  return make_result<T>("slice", std::move(out_shape), std::move(out), {na}, [na, s, width, row, start](Node<T>& o) {
    if (!na->requires_grad) return;
    T* g = na->grad_buffer().data();
    for (std::size_t oo = 0; oo < s.outer; ++oo) {
      const T* src = o.grad.data() + oo * width;
      T* dst = g + oo * row + start;
      for (std::size_t i = 0; i < width; ++i) dst[i] += src[i];
    }
  });
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
  if (a.rank() < 2) throw ShapeError("transpose: needs rank >= 2, got " + shape_string(a.shape()));
  Shape out_shape = a.shape();
  const std::size_t r = out_shape[out_shape.size() - 2];
  const std::size_t c = out_shape.back();
  std::swap(out_shape[out_shape.size() - 2], out_shape.back());
  const std::size_t batch = a.size() / (r * c);
  Buffer<T> out(a.size());
  const T* pa = a.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    MapM<T>(out.data() + b * r * c, c, r) = MapC<T>(pa + b * r * c, r, c).transpose();
  }
  auto na = a.node();
  return make_result<T>("transpose", std::move(out_shape), std::move(out), {na}, [na, batch, r, c](Node<T>& o) {
    if (!na->requires_grad) return;
    T* g = na->grad_buffer().data();
    for (std::size_t b = 0; b < batch; ++b) {
      MapM<T>(g + b * r * c, r, c) += MapC<T>(o.grad.data() + b * r * c, c, r).transpose();
    }
  });
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + shape_string(a.shape()) + " as " + shape_string(shape));
  }
  Buffer<T> out(a.data().begin(), a.data().end());
  auto na = a.node();
  return make_result<T>("reshape", std::move(shape), std::move(out), {na}, [na](Node<T>& o) {
    if (!na->requires_grad) return;
    T* g = na->grad_buffer().data();
    for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
  });
}

template <typename T>
BasicTensor<T> broadcast_to(const BasicTensor<T>& a, const Shape& shape) {
  auto plan = std::make_shared<BroadcastPlan>(make_plan(shape, a.shape(), "broadcast_to"));
  if (plan->out != shape) {
    throw ShapeError("broadcast_to: cannot broadcast " + shape_string(a.shape()) + " to " + shape_string(shape));
  }
  Buffer<T> out(plan->size);
  const T* pa = a.data().data();
  visit(*plan, [&](std::size_t i, std::size_t, std::size_t ib) { out[i] = pa[ib]; });
  auto na = a.node();
  return make_result<T>("broadcast_to", shape, std::move(out), {na}, [na, plan](Node<T>& o) {
    if (!na->requires_grad) return;
    T* g = na->grad_buffer().data();
    const T* go = o.grad.data();
    visit(*plan, [&](std::size_t i, std::size_t, std::size_t ib) { g[ib] += go[i]; });
  });
}

// ---------------------------------------------------------------------------
// Explicit instantiations
// ---------------------------------------------------------------------------

#define HGVAE_INSTANTIATE(T)                                                                  \
  template class BasicTensor<T>;                                                              \
  template class GradientTape<T>;                                                             \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                  \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                  \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                  \
  template BasicTensor<T> div(const BasicTensor<T>&, const BasicTensor<T>&);                  \
  template BasicTensor<T> neg(const BasicTensor<T>&);                                         \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                                    \
  template BasicTensor<T> add_scalar(const BasicTensor<T>&, T);                               \
  template BasicTensor<T> exp(const BasicTensor<T>&);                                         \
  template BasicTensor<T> log(const BasicTensor<T>&);                                         \
  template BasicTensor<T> square(const BasicTensor<T>&);                                      \
  template BasicTensor<T> gelu(const BasicTensor<T>&);                                        \
  template BasicTensor<T> clamp(const BasicTensor<T>&, T, T);                                 \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                         \
  template BasicTensor<T> sum(const BasicTensor<T>&, int, bool);                              \
  template BasicTensor<T> mean(const BasicTensor<T>&);                                        \
  template BasicTensor<T> mean(const BasicTensor<T>&, int, bool);                             \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);               \
  template BasicTensor<T> concat(std::span<const BasicTensor<T>>, int);                       \
  template BasicTensor<T> slice(const BasicTensor<T>&, int, std::size_t, std::size_t);        \
  template BasicTensor<T> transpose(const BasicTensor<T>&);                                   \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                              \
  template BasicTensor<T> broadcast_to(const BasicTensor<T>&, const Shape&);

HGVAE_INSTANTIATE(double)
HGVAE_INSTANTIATE(float)

#undef HGVAE_INSTANTIATE

}  // namespace hgvae
