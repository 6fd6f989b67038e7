#include "itpn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "itpn/error.hpp"

namespace itpn {

using detail::ImplPtr;
using detail::TensorImpl;

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

const char* to_string(LoadErrorKind kind) {
  switch (kind) {
    case LoadErrorKind::io: return "io error";
    case LoadErrorKind::bad_magic: return "bad magic";
    case LoadErrorKind::version_mismatch: return "version mismatch";
    case LoadErrorKind::truncated: return "truncated file";
    case LoadErrorKind::size_mismatch: return "size mismatch";
    case LoadErrorKind::shape_mismatch: return "shape mismatch";
    case LoadErrorKind::missing_tensor: return "missing tensor";
    case LoadErrorKind::unsupported_dtype: return "unsupported dtype";
    case LoadErrorKind::out_of_range: return "value out of range";
    case LoadErrorKind::parse: return "parse error";
  }
  return "load error";
}

namespace detail {

std::vector<Scalar>& TensorImpl::ensure_grad() {
  if (grad.empty() && !data.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

void TensorImpl::accumulate_grad(std::size_t i, Scalar g) { ensure_grad()[i] += g; }

}  // namespace detail

// ---- Tensor ---------------------------------------------------------------

Tensor::Tensor(Shape shape, std::vector<Scalar> values, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " holds " +
                         std::to_string(shape_numel(shape)) + " elements but buffer has " +
                         std::to_string(values.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, Scalar value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<Scalar>(n, value), requires_grad);
}

Tensor Tensor::scalar(Scalar value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

Tensor Tensor::eye(std::size_t n, bool requires_grad) {
  std::vector<Scalar> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  return Tensor({n, n}, std::move(v), requires_grad);
}

const Shape& Tensor::shape() const { return impl_->shape; }

std::size_t Tensor::extent(std::size_t axis) const {
  if (axis >= rank()) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  return shape()[axis];
}

std::size_t Tensor::numel() const { return impl_->data.size(); }

std::size_t Tensor::cols() const { return rank() == 0 ? 1 : shape().back(); }

std::size_t Tensor::rows() const {
  const auto c = cols();
  return c == 0 ? 0 : numel() / c;
}

std::span<Scalar> Tensor::data() { return impl_->data; }
std::span<const Scalar> Tensor::data() const { return impl_->data; }

Scalar Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

Scalar Tensor::at(std::size_t row, std::size_t col) const { return impl_->data[row * cols() + col]; }

bool Tensor::requires_grad() const { return impl_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
  impl_->requires_grad = value;
  if (!value) impl_->grad.clear();
}

bool Tensor::is_leaf() const { return impl_->is_leaf; }

bool Tensor::has_grad() const { return !impl_->grad.empty(); }

std::span<const Scalar> Tensor::grad() const { return impl_->grad; }

void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::detach() const { return Tensor(shape(), impl_->data, false); }

Tensor Tensor::clone() const { return Tensor(shape(), impl_->data, requires_grad()); }

// ---- tape -----------------------------------------------------------------

namespace {

thread_local Tape tape_instance;
thread_local bool grad_enabled = true;

bool wants_grad(std::initializer_list<const Tensor*> inputs) {
  if (!grad_enabled) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

Tensor make_result(Shape shape, std::vector<Scalar> values) { return Tensor(std::move(shape), std::move(values)); }

// Marks `out` as produced by the tape and appends its backward closure.
void record(const char* op, std::vector<ImplPtr> inputs, const Tensor& out, std::function<void()> fn) {
  out.impl()->requires_grad = true;
  out.impl()->is_leaf = false;
  tape_instance.record({op, std::move(inputs), out.impl(), std::move(fn)});
}

void require_rank2(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw DimensionError(std::string(what) + " must be rank 2, got " + shape_str(t.shape()));
}

// Broadcast check for binary elementwise ops: b equals a or a trailing suffix.
void check_broadcast(const Tensor& a, const Tensor& b, const char* op) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  bool ok = sb.size() <= sa.size() && std::equal(sb.rbegin(), sb.rend(), sa.rbegin());
  if (!ok) {
    throw DimensionError(std::string(op) + ": shapes " + shape_str(sa) + " and " + shape_str(sb) +
                         " are not trailing-broadcast compatible");
  }
}

constexpr Scalar kInvSqrt2 = 0.70710678118654752440;

}  // namespace

Tape& current_tape() { return tape_instance; }

bool grad_mode_enabled() { return grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(grad_enabled) { grad_enabled = false; }
NoGradGuard::~NoGradGuard() { grad_enabled = previous_; }

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("undefined tensor")));
  }
  if (entries_.empty()) throw ContractError("backward() called with an empty tape");
  replay_order_.clear();
  loss.impl()->accumulate_grad(0, 1.0);
  for (std::size_t i = entries_.size(); i-- > 0;) {
    auto& e = entries_[i];
    if (e.output->grad.empty()) continue;
    e.backward();
    replay_order_.push_back(i);
  }
  entries_.clear();
}

void backward(const Tensor& loss) { tape_instance.backward(loss); }

// ---- primitives -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul lhs");
  require_rank2(b, "matmul rhs");
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  if (b.extent(0) != k) {
    throw DimensionError("matmul: inner extents disagree for " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  std::vector<Scalar> out(m * n, 0.0);
  const Scalar* pa = a.data().data();
  const Scalar* pb = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    Scalar* row = out.data() + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const Scalar s = pa[i * k + kk];
      const Scalar* brow = pb + kk * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += s * brow[j];
    }
  }
  Tensor result = make_result({m, n}, std::move(out));
  if (wants_grad({&a, &b})) {
    auto ai = a.impl(), bi = b.impl(), oi = result.impl();
    record("matmul", {ai, bi}, result, [ai, bi, oi, m, k, n] {
      const Scalar* g = oi->grad.data();
      if (ai->requires_grad) {
        auto& da = ai->ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t kk = 0; kk < k; ++kk) {
            const Scalar* brow = bi->data.data() + kk * n;
            const Scalar* grow = g + i * n;
            Scalar acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            da[i * k + kk] += acc;
          }
        }
      }
      if (bi->requires_grad) {
        auto& db = bi->ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t kk = 0; kk < k; ++kk) {
            const Scalar s = ai->data[i * k + kk];
            Scalar* dbrow = db.data() + kk * n;
            const Scalar* grow = g + i * n;
            for (std::size_t j = 0; j < n; ++j) dbrow[j] += s * grow[j];
          }
        }
      }
    });
  }
  return result;
}

namespace {

enum class Binary { add, sub, mul };

Tensor binary(const Tensor& a, const Tensor& b, Binary kind, const char* name) {
  check_broadcast(a, b, name);
  const std::size_t n = a.numel(), nb = b.numel();
  std::vector<Scalar> out(n);
  const auto pa = a.data();
  const auto pb = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    const Scalar y = pb[nb ? i % nb : 0];
    switch (kind) {
      case Binary::add: out[i] = pa[i] + y; break;
      case Binary::sub: out[i] = pa[i] - y; break;
      case Binary::mul: out[i] = pa[i] * y; break;
    }
  }
  Tensor result = make_result(a.shape(), std::move(out));
  if (wants_grad({&a, &b})) {
    auto ai = a.impl(), bi = b.impl(), oi = result.impl();
    record(name, {ai, bi}, result, [ai, bi, oi, n, nb, kind] {
      const auto& g = oi->grad;
      if (ai->requires_grad) {
        auto& da = ai->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) da[i] += kind == Binary::mul ? g[i] * bi->data[i % nb] : g[i];
      }
      if (bi->requires_grad) {
        auto& db = bi->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          switch (kind) {
            case Binary::add: db[i % nb] += g[i]; break;
            case Binary::sub: db[i % nb] -= g[i]; break;
            case Binary::mul: db[i % nb] += g[i] * ai->data[i]; break;
          }
        }
      }
    });
  }
  return result;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::mul, "mul"); }

Tensor scale(const Tensor& a, Scalar factor) {
  std::vector<Scalar> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  Tensor result = make_result(a.shape(), std::move(out));
  if (wants_grad({&a})) {
    auto ai = a.impl(), oi = result.impl();
    record("scale", {ai}, result, [ai, oi, factor] {
      auto& da = ai->ensure_grad();
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += factor * oi->grad[i];
    });
  }
  return result;
}

Scalar gelu_scalar(Scalar x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

Tensor gelu(const Tensor& x) {
  std::vector<Scalar> out(x.numel());
  const auto px = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_scalar(px[i]);
  Tensor result = make_result(x.shape(), std::move(out));
  if (wants_grad({&x})) {
    auto xi = x.impl(), oi = result.impl();
    record("gelu", {xi}, result, [xi, oi] {
      constexpr Scalar inv_sqrt_2pi = 0.39894228040143267794;
      auto& dx = xi->ensure_grad();
      for (std::size_t i = 0; i < dx.size(); ++i) {
        const Scalar v = xi->data[i];
        const Scalar cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const Scalar pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
        dx[i] += oi->grad[i] * (cdf + v * pdf);
      }
    });
  }
  return result;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Scalar eps) {
  if (!(eps > 0.0)) throw ConfigError("layer_norm: eps must be positive");
  const std::size_t d = x.cols();
  if (gamma.numel() != d || beta.numel() != d || x.rank() == 0) {
    throw DimensionError("layer_norm: input " + shape_str(x.shape()) + " with gamma " + shape_str(gamma.shape()) +
                         " and beta " + shape_str(beta.shape()));
  }
  const std::size_t rows = x.rows();
  std::vector<Scalar> out(x.numel()), xhat(x.numel()), rstd(rows);
  const auto px = x.data();
  const auto pg = gamma.data();
  const auto pb = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const Scalar* row = px.data() + r * d;
    Scalar mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<Scalar>(d);
    Scalar var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<Scalar>(d);
    const Scalar rs = 1.0 / std::sqrt(var + eps);
    rstd[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const Scalar h = (row[j] - mu) * rs;
      xhat[r * d + j] = h;
      out[r * d + j] = h * pg[j] + pb[j];
    }
  }
  Tensor result = make_result(x.shape(), std::move(out));
  if (wants_grad({&x, &gamma, &beta})) {
    auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), oi = result.impl();
    record("layer_norm", {xi, gi, bi}, result,
           [xi, gi, bi, oi, xhat = std::move(xhat), rstd = std::move(rstd), rows, d] {
             const auto& g = oi->grad;
             if (gi->requires_grad) {
               auto& dg = gi->ensure_grad();
               for (std::size_t r = 0; r < rows; ++r)
                 for (std::size_t j = 0; j < d; ++j) dg[j] += g[r * d + j] * xhat[r * d + j];
             }
             if (bi->requires_grad) {
               auto& db = bi->ensure_grad();
               for (std::size_t r = 0; r < rows; ++r)
                 for (std::size_t j = 0; j < d; ++j) db[j] += g[r * d + j];
             }
             if (xi->requires_grad) {
               auto& dx = xi->ensure_grad();
               std::vector<Scalar> dh(d);
               for (std::size_t r = 0; r < rows; ++r) {
                 Scalar mean_dh = 0.0, mean_dh_h = 0.0;
                 for (std::size_t j = 0; j < d; ++j) {
                   dh[j] = g[r * d + j] * gi->data[j];
                   mean_dh += dh[j];
                   mean_dh_h += dh[j] * xhat[r * d + j];
                 }
                 mean_dh /= static_cast<Scalar>(d);
                 mean_dh_h /= static_cast<Scalar>(d);
                 for (std::size_t j = 0; j < d; ++j)
                   dx[r * d + j] += rstd[r] * (dh[j] - mean_dh - xhat[r * d + j] * mean_dh_h);
               }
             }
           });
  }
  return result;
}

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads) {
  require_rank2(q, "attention q");
  if (q.shape() != k.shape() || q.shape() != v.shape()) {
    throw DimensionError("attention: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) + ", v " +
                         shape_str(v.shape()) + " must agree");
  }
  const std::size_t t = q.extent(0), d = q.extent(1);
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("attention: width " + std::to_string(d) + " not divisible by " + std::to_string(heads) +
                      " heads");
  }
  const std::size_t dh = d / heads;
  const Scalar sc = 1.0 / std::sqrt(static_cast<Scalar>(dh));
  std::vector<Scalar> probs(heads * t * t);
  std::vector<Scalar> out(t * d, 0.0);
  const auto pq = q.data(), pk = k.data(), pv = v.data();
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    for (std::size_t i = 0; i < t; ++i) {
      Scalar* p = probs.data() + (h * t + i) * t;
      Scalar mx = -std::numeric_limits<Scalar>::infinity();
      for (std::size_t j = 0; j < t; ++j) {
        Scalar s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += pq[i * d + off + c] * pk[j * d + off + c];
        p[j] = s * sc;
        mx = std::max(mx, p[j]);
      }
      Scalar z = 0.0;
      for (std::size_t j = 0; j < t; ++j) {
        p[j] = std::exp(p[j] - mx);
        z += p[j];
      }
      for (std::size_t j = 0; j < t; ++j) p[j] /= z;
      Scalar* o = out.data() + i * d + off;
      for (std::size_t j = 0; j < t; ++j) {
        const Scalar w = p[j];
        for (std::size_t c = 0; c < dh; ++c) o[c] += w * pv[j * d + off + c];
      }
    }
  }
  Tensor result = make_result({t, d}, std::move(out));
  if (wants_grad({&q, &k, &v})) {
    auto qi = q.impl(), ki = k.impl(), vi = v.impl(), oi = result.impl();
    record("attention", {qi, ki, vi}, result,
           [qi, ki, vi, oi, probs = std::move(probs), t, d, dh, heads, sc] {
             const auto& g = oi->grad;
             std::vector<Scalar> dp(t), ds(t);
             auto* dq = qi->requires_grad ? &qi->ensure_grad() : nullptr;
             auto* dk = ki->requires_grad ? &ki->ensure_grad() : nullptr;
             auto* dv = vi->requires_grad ? &vi->ensure_grad() : nullptr;
             for (std::size_t h = 0; h < heads; ++h) {
               const std::size_t off = h * dh;
               for (std::size_t i = 0; i < t; ++i) {
                 const Scalar* p = probs.data() + (h * t + i) * t;
                 const Scalar* gi = g.data() + i * d + off;
                 Scalar dot = 0.0;
                 for (std::size_t j = 0; j < t; ++j) {
                   Scalar s = 0.0;
                   for (std::size_t c = 0; c < dh; ++c) s += gi[c] * vi->data[j * d + off + c];
                   dp[j] = s;
                   dot += p[j] * s;
                   if (dv) {
                     for (std::size_t c = 0; c < dh; ++c) (*dv)[j * d + off + c] += p[j] * gi[c];
                   }
                 }
                 for (std::size_t j = 0; j < t; ++j) ds[j] = p[j] * (dp[j] - dot) * sc;
                 for (std::size_t j = 0; j < t; ++j) {
                   if (dq) {
                     for (std::size_t c = 0; c < dh; ++c) (*dq)[i * d + off + c] += ds[j] * ki->data[j * d + off + c];
                   }
                   if (dk) {
                     for (std::size_t c = 0; c < dh; ++c) (*dk)[j * d + off + c] += ds[j] * qi->data[i * d + off + c];
                   }
                 }
               }
             }
           });
  }
  return result;
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices) {
  if (x.rank() == 0) throw DimensionError("gather_rows on a scalar");
  const std::size_t rows = x.rows(), d = x.cols();
  std::vector<Scalar> out(indices.size() * d);
  const auto px = x.data();
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= rows) {
      throw IndexError("row index " + std::to_string(indices[r]) + " out of range for " + std::to_string(rows) +
                       " rows");
    }
    std::copy_n(px.begin() + static_cast<std::ptrdiff_t>(indices[r] * d), d, out.begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  Tensor result = make_result({indices.size(), d}, std::move(out));
  if (wants_grad({&x})) {
    auto xi = x.impl(), oi = result.impl();
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    record("gather_rows", {xi}, result, [xi, oi, idx = std::move(idx), d] {
      auto& dx = xi->ensure_grad();
      for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t j = 0; j < d; ++j) dx[idx[r] * d + j] += oi->grad[r * d + j];
    });
  }
  return result;
}

namespace {

void check_unique(std::span<const std::size_t> indices, std::size_t limit, const char* op) {
  std::vector<char> seen(limit, 0);
  for (auto i : indices) {
    if (i >= limit) {
      throw IndexError(std::string(op) + ": index " + std::to_string(i) + " out of range [0, " +
                       std::to_string(limit) + ")");
    }
    if (seen[i]) throw IndexError(std::string(op) + ": duplicate index " + std::to_string(i));
    seen[i] = 1;
  }
}

}  // namespace

Tensor select_tokens(const Tensor& x, std::span<const std::size_t> indices) {
  check_unique(indices, x.rows(), "select_tokens");
  return gather_rows(x, indices);
}

Tensor place_tokens(const Tensor& x, std::span<const std::size_t> indices, const Tensor& fill, std::size_t total) {
  const std::size_t d = fill.numel();
  if (x.rank() != 2 || x.extent(1) != d || x.extent(0) != indices.size()) {
    throw DimensionError("place_tokens: rows " + shape_str(x.shape()) + " for " + std::to_string(indices.size()) +
                         " indices with fill " + shape_str(fill.shape()));
  }
  check_unique(indices, total, "place_tokens");
  std::vector<char> placed(total, 0);
  for (auto i : indices) placed[i] = 1;
  std::vector<Scalar> out(total * d);
  const auto px = x.data();
  const auto pf = fill.data();
  for (std::size_t r = 0; r < total; ++r)
    if (!placed[r]) std::copy(pf.begin(), pf.end(), out.begin() + static_cast<std::ptrdiff_t>(r * d));
  for (std::size_t r = 0; r < indices.size(); ++r)
    std::copy_n(px.begin() + static_cast<std::ptrdiff_t>(r * d), d, out.begin() + static_cast<std::ptrdiff_t>(indices[r] * d));
  Tensor result = make_result({total, d}, std::move(out));
  if (wants_grad({&x, &fill})) {
    auto xi = x.impl(), fi = fill.impl(), oi = result.impl();
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    record("place_tokens", {xi, fi}, result,
           [xi, fi, oi, idx = std::move(idx), placed = std::move(placed), d, total] {
             const auto& g = oi->grad;
             if (xi->requires_grad) {
               auto& dx = xi->ensure_grad();
               for (std::size_t r = 0; r < idx.size(); ++r)
                 for (std::size_t j = 0; j < d; ++j) dx[r * d + j] += g[idx[r] * d + j];
             }
             if (fi->requires_grad) {
               auto& df = fi->ensure_grad();
               for (std::size_t r = 0; r < total; ++r)
                 if (!placed[r])
                   for (std::size_t j = 0; j < d; ++j) df[j] += g[r * d + j];
             }
           });
  }
  return result;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  Tensor result = make_result(std::move(shape), std::vector<Scalar>(x.data().begin(), x.data().end()));
  if (wants_grad({&x})) {
    auto xi = x.impl(), oi = result.impl();
    record("reshape", {xi}, result, [xi, oi] {
      auto& dx = xi->ensure_grad();
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += oi->grad[i];
    });
  }
  return result;
}

Tensor sum(const Tensor& x) {
  Scalar s = 0.0;
  for (auto v : x.data()) s += v;
  Tensor result = Tensor::scalar(s);
  if (wants_grad({&x})) {
    auto xi = x.impl(), oi = result.impl();
    record("sum", {xi}, result, [xi, oi] {
      auto& dx = xi->ensure_grad();
      for (auto& v : dx) v += oi->grad[0];
    });
  }
  return result;
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) return Tensor::scalar(0.0);
  return scale(sum(x), 1.0 / static_cast<Scalar>(x.numel()));
}

Tensor mse(const Tensor& prediction, const Tensor& target) {
  if (prediction.shape() != target.shape()) {
    throw DimensionError("mse: prediction " + shape_str(prediction.shape()) + " vs target " +
                         shape_str(target.shape()));
  }
  const std::size_t n = prediction.numel();
  if (n == 0) return Tensor::scalar(0.0);
  Scalar s = 0.0;
  const auto pp = prediction.data(), pt = target.data();
  for (std::size_t i = 0; i < n; ++i) s += (pp[i] - pt[i]) * (pp[i] - pt[i]);
  Tensor result = Tensor::scalar(s / static_cast<Scalar>(n));
  if (wants_grad({&prediction, &target})) {
    auto pi = prediction.impl(), ti = target.impl(), oi = result.impl();
    record("mse", {pi, ti}, result, [pi, ti, oi, n] {
      const Scalar c = 2.0 * oi->grad[0] / static_cast<Scalar>(n);
      if (pi->requires_grad) {
        auto& dp = pi->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) dp[i] += c * (pi->data[i] - ti->data[i]);
      }
      if (ti->requires_grad) {
        auto& dt = ti->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) dt[i] -= c * (pi->data[i] - ti->data[i]);
      }
    });
  }
  return result;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_rank2(logits, "cross_entropy logits");
  const std::size_t n = logits.extent(0), c = logits.extent(1);
  if (labels.size() != n) {
    throw DimensionError("cross_entropy: " + std::to_string(n) + " rows but " + std::to_string(labels.size()) +
                         " labels");
  }
  std::vector<Scalar> softmax(n * c);
  Scalar loss = 0.0;
  const auto pl = logits.data();
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw IndexError("cross_entropy: label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(c) + ")");
    }
    const Scalar* row = pl.data() + i * c;
    const Scalar mx = *std::max_element(row, row + c);
    Scalar z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      softmax[i * c + j] = std::exp(row[j] - mx);
      z += softmax[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) softmax[i * c + j] /= z;
    loss += -(row[labels[i]] - mx - std::log(z));
  }
  Tensor result = Tensor::scalar(n ? loss / static_cast<Scalar>(n) : 0.0);
  if (n && wants_grad({&logits})) {
    auto li = logits.impl(), oi = result.impl();
    std::vector<int> lab(labels.begin(), labels.end());
    record("cross_entropy", {li}, result, [li, oi, softmax = std::move(softmax), lab = std::move(lab), n, c] {
      auto& dl = li->ensure_grad();
      const Scalar s = oi->grad[0] / static_cast<Scalar>(n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j)
          dl[i * c + j] += s * (softmax[i * c + j] - (static_cast<int>(j) == lab[i] ? 1.0 : 0.0));
    });
  }
  return result;
}

}  // namespace itpn
