#pragma once

// Dense double-precision tensors with tape-based reverse-mode differentiation.
//
// Every differentiable primitive records a closure on the calling thread's
// tape when grad mode is enabled and at least one input requires a gradient.
// backward() replays the tape in reverse and then clears it.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace itpn {

using Scalar = double;
using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<Scalar> data;
  std::vector<Scalar> grad;  // empty until a gradient arrives
  bool requires_grad = false;
  bool is_leaf = true;

  void accumulate_grad(std::size_t i, Scalar g);
  std::vector<Scalar>& ensure_grad();
};

using ImplPtr = std::shared_ptr<TensorImpl>;

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<Scalar> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Scalar value, bool requires_grad = false);
  static Tensor scalar(Scalar value, bool requires_grad = false);
  static Tensor eye(std::size_t n, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t extent(std::size_t axis) const;
  std::size_t numel() const;
  // Leading extent of a 2-D view that keeps the last axis intact.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<Scalar> data();
  std::span<const Scalar> data() const;
  Scalar item() const;
  Scalar at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const Scalar> grad() const;
  void zero_grad();

  // New leaf holding a copy of the values; never connected to the tape.
  Tensor detach() const;
  // Deep copy that keeps the requires_grad flag (as a fresh leaf).
  Tensor clone() const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  const detail::ImplPtr& impl() const { return impl_; }
  explicit Tensor(detail::ImplPtr impl) : impl_(std::move(impl)) {}

 private:
  detail::ImplPtr impl_;
};

// Ordered log of recorded primitives. One per thread.
class Tape {
 public:
  struct Entry {
    std::string op;
    std::vector<detail::ImplPtr> inputs;
    detail::ImplPtr output;
    std::function<void()> backward;
  };

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  void clear() { entries_.clear(); }
  const std::vector<Entry>& entries() const { return entries_; }

  void record(Entry entry) { entries_.push_back(std::move(entry)); }

  // Indices of the entries whose backward ran during the last replay, in
  // visiting order.
  const std::vector<std::size_t>& last_replay_order() const { return replay_order_; }

  void backward(const Tensor& loss);

 private:
  std::vector<Entry> entries_;
  std::vector<std::size_t> replay_order_;
};

Tape& current_tape();

bool grad_mode_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Accumulates d(loss)/d(leaf) into every reachable differentiable leaf and
// consumes the current tape. loss must be a single-element tensor.
void backward(const Tensor& loss);

// ---- primitives -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);

// b's shape must equal a's shape or a trailing suffix of it.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Scalar factor);
Tensor gelu(const Tensor& x);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Scalar eps);

// q, k, v: [t x d]; d split into `heads` contiguous slices.
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads);

// Row gather; repeated indices are allowed and their gradients accumulate.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices);
// Gather of visible tokens. Indices must be unique and in range.
Tensor select_tokens(const Tensor& x, std::span<const std::size_t> indices);
// Scatter x's rows to `indices` of a [total x d] grid, remaining rows = fill.
Tensor place_tokens(const Tensor& x, std::span<const std::size_t> indices, const Tensor& fill,
                    std::size_t total);

Tensor reshape(const Tensor& x, Shape shape);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Mean of squared differences; target may be a constant.
Tensor mse(const Tensor& prediction, const Tensor& target);
// Mean softmax cross-entropy over rows of [n x classes] logits.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

// exact erf form
Scalar gelu_scalar(Scalar x);

}  // namespace itpn
