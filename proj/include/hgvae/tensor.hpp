#pragma once

// Dense row-major tensors with a tape-based reverse-mode differentiator.
//
// A tensor is a cheap handle onto a shared node. Operations evaluate eagerly;
// when a GradientTape is active on the calling thread and any input requires
// gradients, the operation is appended to that tape together with a closure
// that propagates the output gradient back to its inputs.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <new>
#include <vector>

namespace hgvae {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a forward result contains NaN or Inf.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Allocator handing out 64-byte aligned storage. Vectorised kernels pick
/// their code path from the buffer alignment, so a fixed alignment keeps
/// results independent of where the heap happens to place a tensor.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  Buffer<T> data;
  Buffer<T> grad;  // empty until something flows into it
  bool requires_grad = false;

  Buffer<T>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

template <typename T>
class BasicTensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  BasicTensor() = default;
  BasicTensor(Shape shape, std::vector<T> data, bool requires_grad = false);
  explicit BasicTensor(NodePtr node) : node_(std::move(node)) {}

  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor full(Shape shape, T value, bool requires_grad = false);
  static BasicTensor scalar(T value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->data.size(); }
  /// Size of one axis; negative indices count from the back.
  std::size_t dim(int axis) const;

  std::span<const T> data() const { return node_->data; }
  /// Direct write access, meant for optimizers updating leaf parameters.
  std::span<T> mutable_data() { return node_->data; }
  T operator[](std::size_t i) const { return node_->data[i]; }
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }

  bool has_grad() const { return !node_->grad.empty(); }
  /// Accumulated gradient; all zeros when nothing reached this tensor.
  BasicTensor grad() const;
  std::span<const T> grad_data() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  /// Fresh leaf holding a copy of the values.
  BasicTensor detach() const;

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

using Tensor = BasicTensor<double>;
using TensorF = BasicTensor<float>;

template <typename T>
struct NamedTensor {
  std::string name;
  BasicTensor<T> value;
};

using ParameterList = std::vector<NamedTensor<double>>;

/// Ordered record of operations for one backward pass.
///
/// Constructing a tape makes it the active tape of the current thread for
/// its lifetime (tapes nest; the previous one is restored on destruction).
template <typename T>
class GradientTape {
 public:
  using Backward = std::function<void(detail::Node<T>& output)>;

  struct Entry {
    std::string op;
    std::shared_ptr<detail::Node<T>> output;
    std::vector<std::shared_ptr<detail::Node<T>>> inputs;
    Backward backward;
  };

  GradientTape();
  ~GradientTape();
  GradientTape(const GradientTape&) = delete;
  GradientTape& operator=(const GradientTape&) = delete;

  static GradientTape* active();

  void record(Entry entry) { entries_.push_back(std::move(entry)); }
  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }

  /// Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. Gradients
  /// accumulate into every reachable tensor that requires them.
  void backward(const BasicTensor<T>& loss);

  void clear() { entries_.clear(); }

 private:
  std::vector<Entry> entries_;
  GradientTape* previous_ = nullptr;
};

using Tape = GradientTape<double>;

// ---------------------------------------------------------------------------
// Primitives. Binary elementwise operations broadcast with right-aligned
// rules: trailing axes must match or be 1, missing leading axes count as 1.
// ---------------------------------------------------------------------------

template <typename T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> div(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T> BasicTensor<T> neg(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> scale(const BasicTensor<T>& a, T factor);
template <typename T> BasicTensor<T> add_scalar(const BasicTensor<T>& a, T offset);
template <typename T> BasicTensor<T> exp(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> log(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> square(const BasicTensor<T>& a);
/// Exact GeLU, x * Phi(x) with the Gaussian CDF.
template <typename T> BasicTensor<T> gelu(const BasicTensor<T>& a);
/// Gradient is passed through inside [lo, hi] and zero outside.
template <typename T> BasicTensor<T> clamp(const BasicTensor<T>& a, T lo, T hi);

template <typename T> BasicTensor<T> sum(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> sum(const BasicTensor<T>& a, int axis, bool keepdim = false);
template <typename T> BasicTensor<T> mean(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> mean(const BasicTensor<T>& a, int axis, bool keepdim = false);

/// Matrix product over the last two axes. Supported operand ranks:
///   [M,K] x [K,N], [...,M,K] x [K,N], [M,K] x [...,K,N], and
///   [...,M,K] x [...,K,N] with identical leading axes.
template <typename T> BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T> BasicTensor<T> concat(std::span<const BasicTensor<T>> parts, int axis);
template <typename T>
BasicTensor<T> concat(std::initializer_list<BasicTensor<T>> parts, int axis) {
  std::vector<BasicTensor<T>> v(parts);
  return concat(std::span<const BasicTensor<T>>(v), axis);
}
template <typename T>
BasicTensor<T> slice(const BasicTensor<T>& a, int axis, std::size_t begin, std::size_t end);
/// Swaps the last two axes.
template <typename T> BasicTensor<T> transpose(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape);
template <typename T> BasicTensor<T> broadcast_to(const BasicTensor<T>& a, const Shape& shape);

template <typename T> BasicTensor<T> operator+(const BasicTensor<T>& a, const BasicTensor<T>& b) { return add(a, b); }
template <typename T> BasicTensor<T> operator-(const BasicTensor<T>& a, const BasicTensor<T>& b) { return sub(a, b); }
template <typename T> BasicTensor<T> operator*(const BasicTensor<T>& a, const BasicTensor<T>& b) { return mul(a, b); }
template <typename T> BasicTensor<T> operator/(const BasicTensor<T>& a, const BasicTensor<T>& b) { return div(a, b); }
template <typename T> BasicTensor<T> operator-(const BasicTensor<T>& a) { return neg(a); }

}  // namespace hgvae
