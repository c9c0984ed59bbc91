#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace framecast {

using Extents = std::vector<std::size_t>;

inline constexpr std::size_t kMaxRank = 5;

namespace detail {

inline std::string dims_str(const Extents& dims) {
  std::string s = "(";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(dims[i]);
  }
  s += ")";
  return s;
}

inline std::size_t checked_volume(const Extents& dims, const char* who) {
  if (dims.empty() || dims.size() > kMaxRank)
    throw std::invalid_argument(std::string(who) + ": rank must be 1.." +
                                std::to_string(kMaxRank) + ", got " +
                                std::to_string(dims.size()));
  std::size_t n = 1;
  for (std::size_t d : dims) {
    if (d == 0)
      throw std::invalid_argument(std::string(who) + ": zero extent in " + dims_str(dims));
    n *= d;
  }
  return n;
}

}  // namespace detail

/// Dense row-major tensor of rank 1..5. The single value carrier of the
/// library; immutable extents, mutable elements.
template <typename Real>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Extents dims, Real fill = Real(0)) {
    const std::size_t n = detail::checked_volume(dims, "Tensor");
    dims_ = std::move(dims);
    data_.assign(n, fill);
  }

  static Tensor from_data(Extents dims, std::vector<Real> data) {
    const std::size_t n = detail::checked_volume(dims, "Tensor");
    if (data.size() != n)
      throw std::invalid_argument("Tensor: data length " + std::to_string(data.size()) +
                                  " does not match dims " + detail::dims_str(dims));
    Tensor t;
    t.dims_ = std::move(dims);
    t.data_ = std::move(data);
    return t;
  }

  const Extents& dims() const { return dims_; }
  std::size_t rank() const { return dims_.size(); }
  std::size_t extent(std::size_t axis) const { return dims_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  Real* data() { return data_.data(); }
  const Real* data() const { return data_.data(); }

  Real& operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }

  template <typename... Is>
  Real& operator()(Is... is) {
    return data_[flat(is...)];
  }
  template <typename... Is>
  Real operator()(Is... is) const {
    return data_[flat(is...)];
  }

  bool same_dims(const Tensor& o) const { return dims_ == o.dims_; }

 private:
  template <typename... Is>
  std::size_t flat(Is... is) const {
    const std::size_t idx[] = {static_cast<std::size_t>(is)...};
    std::size_t off = 0;
    for (std::size_t a = 0; a < sizeof...(is); ++a) off = off * dims_[a] + idx[a];
    return off;
  }

  Extents dims_;
  std::vector<Real> data_;
};

template <typename Real>
Tensor<Real> zeros_like(const Tensor<Real>& t) {
  return Tensor<Real>(t.dims());
}

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
  std::vector<To> out(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = static_cast<To>(t[i]);
  return Tensor<To>::from_data(t.dims(), std::move(out));
}

namespace detail {

template <typename Real>
void require_same_dims(const Tensor<Real>& a, const Tensor<Real>& b, const char* who) {
  if (!a.same_dims(b))
    throw std::invalid_argument(std::string(who) + ": dims mismatch " + dims_str(a.dims()) +
                                " vs " + dims_str(b.dims()));
}

}  // namespace detail

// ---- scalar activations ----------------------------------------------------

template <typename Real>
Real sigmoid_scalar(Real x) {
  return Real(1) / (Real(1) + std::exp(-x));
}

template <typename Real>
Real d_sigmoid_scalar(Real x) {
  const Real s = sigmoid_scalar(x);
  return s * (Real(1) - s);
}

template <typename Real>
Real d_tanh_scalar(Real x) {
  const Real t = std::tanh(x);
  return Real(1) - t * t;
}

// ---- elementwise -----------------------------------------------------------

enum class Elementwise { add, sub, hadamard, sigmoid, tanh, relu, d_sigmoid, d_tanh, d_relu };

template <typename Real, typename F>
Tensor<Real> map(const Tensor<Real>& a, F f) {
  Tensor<Real> out(a.dims());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

template <typename Real, typename F>
Tensor<Real> zip(const Tensor<Real>& a, const Tensor<Real>& b, F f, const char* who) {
  detail::require_same_dims(a, b, who);
  Tensor<Real> out(a.dims());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  return zip(a, b, [](Real x, Real y) { return x + y; }, "add");
}

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  return zip(a, b, [](Real x, Real y) { return x - y; }, "sub");
}

template <typename Real>
Tensor<Real> hadamard(const Tensor<Real>& a, const Tensor<Real>& b) {
  return zip(a, b, [](Real x, Real y) { return x * y; }, "hadamard");
}

template <typename Real>
Tensor<Real> sigmoid(const Tensor<Real>& a) {
  return map(a, [](Real x) { return sigmoid_scalar(x); });
}

template <typename Real>
Tensor<Real> tanh(const Tensor<Real>& a) {
  return map(a, [](Real x) { return std::tanh(x); });
}

template <typename Real>
Tensor<Real> relu(const Tensor<Real>& a) {
  return map(a, [](Real x) { return x > Real(0) ? x : Real(0); });
}

template <typename Real>
Tensor<Real> d_sigmoid(const Tensor<Real>& a) {
  return map(a, [](Real x) { return d_sigmoid_scalar(x); });
}

template <typename Real>
Tensor<Real> d_tanh(const Tensor<Real>& a) {
  return map(a, [](Real x) { return d_tanh_scalar(x); });
}

template <typename Real>
Tensor<Real> d_relu(const Tensor<Real>& a) {
  return map(a, [](Real x) { return x > Real(0) ? Real(1) : Real(0); });
}

template <typename Real>
Tensor<Real> elementwise(Elementwise kind, const Tensor<Real>& a,
                         const Tensor<Real>* b = nullptr) {
  const bool binary = kind == Elementwise::add || kind == Elementwise::sub ||
                      kind == Elementwise::hadamard;
  if (binary && b == nullptr)
    throw std::invalid_argument("elementwise: binary kind needs a second operand");
  if (!binary && b != nullptr)
    throw std::invalid_argument("elementwise: unary kind takes one operand");
  switch (kind) {
    case Elementwise::add: return add(a, *b);
    case Elementwise::sub: return sub(a, *b);
    case Elementwise::hadamard: return hadamard(a, *b);
    case Elementwise::sigmoid: return sigmoid(a);
    case Elementwise::tanh: return tanh(a);
    case Elementwise::relu: return relu(a);
    case Elementwise::d_sigmoid: return d_sigmoid(a);
    case Elementwise::d_tanh: return d_tanh(a);
    case Elementwise::d_relu: return d_relu(a);
  }
  throw std::invalid_argument("elementwise: unknown kind");
}

/// dst += src
template <typename Real>
void accumulate(Tensor<Real>& dst, const Tensor<Real>& src) {
  detail::require_same_dims(dst, src, "accumulate");
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename Real>
void scale_inplace(Tensor<Real>& t, Real s) {
  for (std::size_t i = 0; i < t.size(); ++i) t[i] *= s;
}

template <typename Real>
void fill(Tensor<Real>& t, Real v) {
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = v;
}

// ---- matrix products -------------------------------------------------------

namespace detail {

template <typename Real>
void require_rank2(const Tensor<Real>& t, const char* who) {
  if (t.rank() != 2)
    throw std::invalid_argument(std::string(who) + ": expected rank-2 tensor, got rank " +
                                std::to_string(t.rank()));
}

}  // namespace detail

/// (m x k) . (k x n) -> (m x n)
template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  if (b.extent(0) != k)
    throw std::invalid_argument("matmul: inner extents disagree " + detail::dims_str(a.dims()) +
                                " vs " + detail::dims_str(b.dims()));
  Tensor<Real> c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    Real* crow = c.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const Real aip = a[i * k + p];
      const Real* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  return c;
}

/// (m x k) . (n x k)^T -> (m x n)
template <typename Real>
Tensor<Real> matmul_nt(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require_rank2(a, "matmul_nt");
  detail::require_rank2(b, "matmul_nt");
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(0);
  if (b.extent(1) != k)
    throw std::invalid_argument("matmul_nt: inner extents disagree " +
                                detail::dims_str(a.dims()) + " vs " + detail::dims_str(b.dims()));
  Tensor<Real> c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const Real* arow = a.data() + i * k;
    Real* crow = c.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const Real* brow = b.data() + j * k;
      Real acc = Real(0);
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] = acc;
    }
  }
  return c;
}

/// (k x m)^T . (k x n) -> (m x n)
template <typename Real>
Tensor<Real> matmul_tn(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require_rank2(a, "matmul_tn");
  detail::require_rank2(b, "matmul_tn");
  const std::size_t k = a.extent(0), m = a.extent(1), n = b.extent(1);
  if (b.extent(0) != k)
    throw std::invalid_argument("matmul_tn: inner extents disagree " +
                                detail::dims_str(a.dims()) + " vs " + detail::dims_str(b.dims()));
  Tensor<Real> c({m, n});
  for (std::size_t p = 0; p < k; ++p) {
    const Real* arow = a.data() + p * m;
    const Real* brow = b.data() + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const Real aip = arow[i];
      Real* crow = c.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  return c;
}

/// A (m x n) . x (n) -> (m)
template <typename Real>
Tensor<Real> matvec(const Tensor<Real>& a, const Tensor<Real>& x) {
  detail::require_rank2(a, "matvec");
  if (x.rank() != 1 || x.extent(0) != a.extent(1))
    throw std::invalid_argument("matvec: vector extent does not match " +
                                detail::dims_str(a.dims()));
  const std::size_t m = a.extent(0), n = a.extent(1);
  Tensor<Real> y({m});
  for (std::size_t i = 0; i < m; ++i) {
    const Real* arow = a.data() + i * n;
    Real acc = Real(0);
    for (std::size_t j = 0; j < n; ++j) acc += arow[j] * x[j];
    y[i] = acc;
  }
  return y;
}

/// A^T (m x n) . x (m) -> (n)
template <typename Real>
Tensor<Real> matvec_t(const Tensor<Real>& a, const Tensor<Real>& x) {
  detail::require_rank2(a, "matvec_t");
  if (x.rank() != 1 || x.extent(0) != a.extent(0))
    throw std::invalid_argument("matvec_t: vector extent does not match " +
                                detail::dims_str(a.dims()));
  const std::size_t m = a.extent(0), n = a.extent(1);
  Tensor<Real> y({n});
  for (std::size_t i = 0; i < m; ++i) {
    const Real* arow = a.data() + i * n;
    const Real xi = x[i];
    for (std::size_t j = 0; j < n; ++j) y[j] += arow[j] * xi;
  }
  return y;
}

/// a (m) outer b (n) -> (m x n)
template <typename Real>
Tensor<Real> outer(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.rank() != 1 || b.rank() != 1)
    throw std::invalid_argument("outer: expects two rank-1 tensors");
  const std::size_t m = a.extent(0), n = b.extent(0);
  Tensor<Real> c({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) c[i * n + j] = a[i] * b[j];
  return c;
}

// ---- reshape & block access ------------------------------------------------

template <typename Real>
Tensor<Real> reshape(const Tensor<Real>& t, Extents new_dims) {
  const std::size_t n = detail::checked_volume(new_dims, "reshape");
  if (n != t.size())
    throw std::invalid_argument("reshape: element count mismatch, " + std::to_string(t.size()) +
                                " -> " + detail::dims_str(new_dims));
  std::vector<Real> data(t.data(), t.data() + t.size());
  return Tensor<Real>::from_data(std::move(new_dims), std::move(data));
}

template <typename Real>
Tensor<Real> reshape(Tensor<Real>&& t, Extents new_dims) {
  const std::size_t n = detail::checked_volume(new_dims, "reshape");
  if (n != t.size())
    throw std::invalid_argument("reshape: element count mismatch, " + std::to_string(t.size()) +
                                " -> " + detail::dims_str(new_dims));
  std::vector<Real> data(t.size());
  std::copy(t.data(), t.data() + t.size(), data.begin());
  return Tensor<Real>::from_data(std::move(new_dims), std::move(data));
}

/// Extracts the contiguous sub-tensor at fixed leading indices, e.g.
/// slice_leading(x[B,T,C,H,W], {b,t}) -> [C,H,W].
template <typename Real>
Tensor<Real> slice_leading(const Tensor<Real>& t, std::span<const std::size_t> idx) {
  if (idx.empty() || idx.size() >= t.rank())
    throw std::invalid_argument("slice_leading: bad index count");
  std::size_t off = 0;
  for (std::size_t a = 0; a < idx.size(); ++a) {
    if (idx[a] >= t.extent(a)) throw std::out_of_range("slice_leading: index out of range");
    off = off * t.extent(a) + idx[a];
  }
  Extents sub(t.dims().begin() + idx.size(), t.dims().end());
  std::size_t vol = 1;
  for (std::size_t d : sub) vol *= d;
  std::vector<Real> data(t.data() + off * vol, t.data() + (off + 1) * vol);
  return Tensor<Real>::from_data(std::move(sub), std::move(data));
}

template <typename Real>
Tensor<Real> slice_leading(const Tensor<Real>& t, std::initializer_list<std::size_t> idx) {
  return slice_leading(t, std::span<const std::size_t>(idx.begin(), idx.size()));
}

/// Writes src into the contiguous block of dst at fixed leading indices.
template <typename Real>
void write_leading(Tensor<Real>& dst, std::span<const std::size_t> idx, const Tensor<Real>& src) {
  if (idx.empty() || idx.size() >= dst.rank())
    throw std::invalid_argument("write_leading: bad index count");
  std::size_t off = 0;
  for (std::size_t a = 0; a < idx.size(); ++a) {
    if (idx[a] >= dst.extent(a)) throw std::out_of_range("write_leading: index out of range");
    off = off * dst.extent(a) + idx[a];
  }
  std::size_t vol = 1;
  for (std::size_t a = idx.size(); a < dst.rank(); ++a) vol *= dst.extent(a);
  if (src.size() != vol)
    throw std::invalid_argument("write_leading: block size mismatch");
  std::copy(src.data(), src.data() + vol, dst.data() + off * vol);
}

template <typename Real>
void write_leading(Tensor<Real>& dst, std::initializer_list<std::size_t> idx,
                   const Tensor<Real>& src) {
  write_leading(dst, std::span<const std::size_t>(idx.begin(), idx.size()), src);
}

template <typename Real>
bool all_finite(const Tensor<Real>& t) {
  for (std::size_t i = 0; i < t.size(); ++i)
    if (!std::isfinite(t[i])) return false;
  return true;
}

}  // namespace framecast
