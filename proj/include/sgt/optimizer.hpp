// SPDX-License-Identifier: Apache-2.0
//
// AdamW with decoupled weight decay and global-norm gradient clipping.

#pragma once

#include "sgt/weights.hpp"

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace sgt {

struct AdamWConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.1;
};

template <typename Scalar>
struct AdamState {
  ParamStore<Scalar> m;
  ParamStore<Scalar> v;
  std::int64_t t = 0;

  static AdamState zeros(const ParamStore<Scalar>& params) { return {zeros_like(params), zeros_like(params), 0}; }
};

/// Norm gain vectors are not decayed.
inline bool decays(const std::string& name) { return name.find("norm") == std::string::npos; }

/// Global L2 norm of all gradients, accumulated in double.
template <typename Scalar>
double global_grad_norm(const ParamStore<Scalar>& grads) {
  double sq = 0.0;
  visit_weights(grads, [&sq](const std::string&, const Matrix<Scalar>& g) {
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      const double x = static_cast<double>(g.data()[i]);
      sq += x * x;
    }
  });
  return std::sqrt(sq);
}

/// Rescales grads so their global norm is at most max_norm; returns the
/// pre-clip norm.
template <typename Scalar>
double clip_grad_norm(ParamStore<Scalar>& grads, double max_norm) {
  const double norm = global_grad_norm(grads);
  if (max_norm > 0 && norm > max_norm) {
    const auto s = static_cast<Scalar>(max_norm / (norm + 1e-6));
    visit_weights(grads, [s](const std::string&, Matrix<Scalar>& g) { g *= s; });
  }
  return norm;
}

template <typename Scalar>
void adamw_step(ParamStore<Scalar>& params, const ParamStore<Scalar>& grads, AdamState<Scalar>& state,
                const AdamWConfig& cfg) {
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  std::vector<Matrix<Scalar>*> p, m, v;
  std::vector<const Matrix<Scalar>*> g;
  std::vector<bool> decay;
  visit_weights(params, [&](const std::string& name, Matrix<Scalar>& x) {
    p.push_back(&x);
    decay.push_back(decays(name));
  });
  visit_weights(grads, [&](const std::string&, const Matrix<Scalar>& x) { g.push_back(&x); });
  visit_weights(state.m, [&](const std::string&, Matrix<Scalar>& x) { m.push_back(&x); });
  visit_weights(state.v, [&](const std::string&, Matrix<Scalar>& x) { v.push_back(&x); });
  const auto b1 = static_cast<Scalar>(cfg.beta1);
  const auto b2 = static_cast<Scalar>(cfg.beta2);
  const auto lr = static_cast<Scalar>(cfg.lr);
  const auto wd = static_cast<Scalar>(cfg.lr * cfg.weight_decay);
  const auto eps = static_cast<Scalar>(cfg.eps);
  const auto c1 = static_cast<Scalar>(1.0 / bc1);
  const auto c2 = static_cast<Scalar>(1.0 / bc2);
  for (std::size_t k = 0; k < p.size(); ++k) {
    auto& mk = *m[k];
    auto& vk = *v[k];
    const auto& gk = *g[k];
    mk = b1 * mk + (Scalar(1) - b1) * gk;
    vk = b2 * vk + (Scalar(1) - b2) * gk.cwiseProduct(gk);
    if (decay[k]) *p[k] -= wd * *p[k];
    *p[k] -= (lr * (mk * c1).array() / ((vk * c2).array().sqrt() + eps)).matrix();
  }
}

}  // namespace sgt
