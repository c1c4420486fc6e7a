#pragma once

#include <cmath>
#include <cstdint>

#include "chef/tensor.hpp"

namespace chef {

struct AdamHyper {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
};

// Per-parameter optimizer state; shapes always match the parameter.
template <class T>
struct AdamStateT {
  TensorT<T> m;
  TensorT<T> v;
  std::uint64_t t = 0;

  static AdamStateT fresh(const std::vector<std::size_t>& shape) {
    return AdamStateT{TensorT<T>::zeros(shape), TensorT<T>::zeros(shape), 0};
  }
};

using AdamState = AdamStateT<float>;

// Bias-corrected Adam update, in place. Deterministic: same inputs give
// bit-identical outputs.
template <class T>
void adam_step(TensorT<T>& param, const TensorT<T>& grad, AdamStateT<T>& state,
               const AdamHyper& hp) {
  if (!param.same_shape(grad))
    throw DimError("adam_step: param " + shape_str(param.shape) + " vs grad " +
                   shape_str(grad.shape));
  if (!param.same_shape(state.m) || !param.same_shape(state.v))
    throw DimError("adam_step: state shape mismatch for param " + shape_str(param.shape));
  state.t += 1;
  const double b1 = hp.beta1, b2 = hp.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < param.numel(); ++i) {
    const double g = static_cast<double>(grad.data[i]);
    const double m = b1 * static_cast<double>(state.m.data[i]) + (1.0 - b1) * g;
    const double v = b2 * static_cast<double>(state.v.data[i]) + (1.0 - b2) * g * g;
    state.m.data[i] = static_cast<T>(m);
    state.v.data[i] = static_cast<T>(v);
    const double mhat = m / bc1;
    const double vhat = v / bc2;
    param.data[i] = static_cast<T>(static_cast<double>(param.data[i]) -
                                   hp.lr * mhat / (std::sqrt(vhat) + hp.eps));
  }
  require_finite(param, "adam_step");
}

}  // namespace chef
