#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "chef/error.hpp"
#include "chef/rng.hpp"

namespace chef {

inline std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

inline std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

// Dense row-major n-d array. float carries training state; double is used by
// the gradient-check path.
template <class T>
struct TensorT {
  std::vector<std::size_t> shape;
  std::vector<T> data;

  TensorT() = default;
  TensorT(std::vector<std::size_t> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_numel(shape) != data.size())
      throw DimError("tensor: shape " + shape_str(shape) + " does not match " +
                     std::to_string(data.size()) + " values");
    for (std::size_t dim : shape)
      if (dim == 0) throw DimError("tensor: zero dimension in " + shape_str(shape));
  }

  static TensorT zeros(std::vector<std::size_t> s) {
    TensorT t;
    t.shape = std::move(s);
    t.data.assign(shape_numel(t.shape), T{0});
    return t;
  }

  static TensorT full(std::vector<std::size_t> s, T v) {
    TensorT t = zeros(std::move(s));
    for (T& x : t.data) x = v;
    return t;
  }

  static TensorT scalar(T v) { return TensorT({1}, {v}); }

  static TensorT randn(std::vector<std::size_t> s, Rng& rng, double stddev) {
    TensorT t = zeros(std::move(s));
    for (T& x : t.data) x = static_cast<T>(rng.normal(0.0, stddev));
    return t;
  }

  // +/- 1/sqrt(fan_in), the default linear-layer initializer.
  static TensorT rand_uniform(std::vector<std::size_t> s, Rng& rng, double bound) {
    TensorT t = zeros(std::move(s));
    for (T& x : t.data) x = static_cast<T>(rng.uniform(-bound, bound));
    return t;
  }

  std::size_t numel() const { return data.size(); }
  std::size_t ndim() const { return shape.size(); }
  bool same_shape(const TensorT& o) const { return shape == o.shape; }

  std::size_t rows() const {
    if (shape.size() != 2) throw DimError("tensor: expected 2-d, got " + shape_str(shape));
    return shape[0];
  }
  std::size_t cols() const {
    if (shape.size() != 2) throw DimError("tensor: expected 2-d, got " + shape_str(shape));
    return shape[1];
  }

  T& at(std::size_t i) { return data[i]; }
  T at(std::size_t i) const { return data[i]; }
  T& at(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
  T at(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }

  const T* row_ptr(std::size_t i) const { return data.data() + i * shape[1]; }
  T* row_ptr(std::size_t i) { return data.data() + i * shape[1]; }

  template <class U>
  TensorT<U> cast() const {
    TensorT<U> out;
    out.shape = shape;
    out.data.reserve(data.size());
    for (T v : data) out.data.push_back(static_cast<U>(v));
    return out;
  }

  bool all_finite() const {
    for (T v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

template <class T>
void require_finite(const TensorT<T>& t, const char* op) {
  if (!t.all_finite()) throw NumericError(std::string(op) + ": non-finite value produced");
}

// ---------------------------------------------------------------------------
// Raw matmul kernels. `acc` accumulates into dst (dst += ...), which is what
// the backward pass needs at fan-out.
// ---------------------------------------------------------------------------

// dst[p x s] (+)= a[p x q] * b[q x s]
template <class T>
void mm_nn(const T* a, const T* b, T* dst, std::size_t p, std::size_t q, std::size_t s, bool acc) {
  for (std::size_t i = 0; i < p; ++i) {
    T* __restrict__ drow = dst + i * s;
    if (!acc)
      for (std::size_t j = 0; j < s; ++j) drow[j] = T{0};
    const T* arow = a + i * q;
    for (std::size_t k = 0; k < q; ++k) {
      const T aik = arow[k];
      const T* __restrict__ brow = b + k * s;
      for (std::size_t j = 0; j < s; ++j) drow[j] += aik * brow[j];
    }
  }
}

// dst[p x s] (+)= a[p x q] * b[s x q]^T  (dot products over contiguous rows).
// Eight independent accumulators keep the reduction vectorizable while the
// summation order stays fixed, so results are reproducible run to run.
template <class T>
void mm_nt(const T* a, const T* b, T* dst, std::size_t p, std::size_t q, std::size_t s, bool acc) {
  constexpr std::size_t kLanes = 8;
  for (std::size_t i = 0; i < p; ++i) {
    const T* arow = a + i * q;
    T* drow = dst + i * s;
    for (std::size_t j = 0; j < s; ++j) {
      const T* __restrict__ brow = b + j * q;
      T lanes[kLanes] = {};
      std::size_t k = 0;
      for (; k + kLanes <= q; k += kLanes)
        for (std::size_t u = 0; u < kLanes; ++u) lanes[u] += arow[k + u] * brow[k + u];
      T sum = ((lanes[0] + lanes[4]) + (lanes[1] + lanes[5])) +
              ((lanes[2] + lanes[6]) + (lanes[3] + lanes[7]));
      for (; k < q; ++k) sum += arow[k] * brow[k];
      drow[j] = acc ? drow[j] + sum : sum;
    }
  }
}

// dst[q x s] (+)= a[p x q]^T * b[p x s]
template <class T>
void mm_tn(const T* a, const T* b, T* dst, std::size_t p, std::size_t q, std::size_t s, bool acc) {
  if (!acc)
    for (std::size_t i = 0; i < q * s; ++i) dst[i] = T{0};
  for (std::size_t k = 0; k < p; ++k) {
    const T* arow = a + k * q;
    const T* __restrict__ brow = b + k * s;
    for (std::size_t i = 0; i < q; ++i) {
      const T aki = arow[i];
      T* __restrict__ drow = dst + i * s;
      for (std::size_t j = 0; j < s; ++j) drow[j] += aki * brow[j];
    }
  }
}

// ---------------------------------------------------------------------------
// Public tensor ops
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.rows())
    throw DimError("matmul: incompatible shapes " + shape_str(a.shape) + " and " +
                   shape_str(b.shape));
  TensorT<T> out = TensorT<T>::zeros({a.rows(), b.cols()});
  mm_nn(a.data.data(), b.data.data(), out.data.data(), a.rows(), a.cols(), b.cols(), false);
  require_finite(out, "matmul");
  return out;
}

// Softmax over the last axis (any leading shape), max-subtracted.
template <class T>
TensorT<T> softmax(const TensorT<T>& x) {
  if (x.ndim() < 1) throw DimError("softmax: expected at least 1-d, got " + shape_str(x.shape));
  if (!x.all_finite()) throw NumericError("softmax: non-finite input");
  TensorT<T> out = TensorT<T>::zeros(x.shape);
  const std::size_t n = x.shape.back();
  const std::size_t rows = x.numel() / n;
  for (std::size_t i = 0; i < rows; ++i) {
    const T* src = x.data.data() + i * n;
    T* dst = out.data.data() + i * n;
    T mx = src[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, src[j]);
    T sum{0};
    for (std::size_t j = 0; j < n; ++j) {
      dst[j] = std::exp(src[j] - mx);
      sum += dst[j];
    }
    for (std::size_t j = 0; j < n; ++j) dst[j] /= sum;
  }
  require_finite(out, "softmax");
  return out;
}

template <class T>
double dot(const TensorT<T>& a, const TensorT<T>& b) {
  if (!a.same_shape(b))
    throw DimError("dot: shapes " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  double s = 0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    s += static_cast<double>(a.data[i]) * static_cast<double>(b.data[i]);
  return s;
}

template <class T>
double norm2(const TensorT<T>& a) {
  return std::sqrt(dot(a, a));
}

template <class T>
double cosine(const TensorT<T>& a, const TensorT<T>& b) {
  const double na = norm2(a), nb = norm2(b);
  if (na == 0.0 || nb == 0.0) throw NumericError("cosine: zero-norm vector");
  double c = dot(a, b) / (na * nb);
  if (c > 1.0) c = 1.0;
  if (c < -1.0) c = -1.0;
  return c;
}

}  // namespace chef
