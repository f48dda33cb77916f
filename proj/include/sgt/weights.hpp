// SPDX-License-Identifier: Apache-2.0
//
// Parameter layout of the decoder. The same shape-generic structure holds raw
// matrices (ParamStore), graph leaves (BoundParams), gradients and optimizer
// moments, so every consumer walks parameters in one fixed order.

#pragma once

#include "sgt/model_config.hpp"
#include "sgt/rng.hpp"
#include "sgt/tensor.hpp"

#include <cmath>
#include <cstddef>
#include <cstring>
#include <string>
#include <vector>

namespace sgt {

/// Per-head projections: query/key/value are d_model x d_head, output is
/// d_head x d_model.
template <typename T>
struct HeadWeights {
  T wq, wk, wv, wo;
};

template <typename T>
struct LayerWeights {
  std::vector<HeadWeights<T>> heads;
  T attn_norm;  // 1 x d_model
  T ffn_norm;   // 1 x d_model
  T w_gate;     // d_model x d_ff
  T w_up;       // d_model x d_ff
  T w_down;     // d_ff x d_model
};

template <typename T>
struct Weights {
  std::vector<LayerWeights<T>> layers;
  T embedding;   // vocab x d_model
  T final_norm;  // 1 x d_model
  T output;      // d_model x vocab
};

/// Calls fn(name, member) for every parameter in canonical order.
template <typename W, typename Fn>
void visit_weights(W& w, Fn&& fn) {
  fn(std::string("embedding"), w.embedding);
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    auto& layer = w.layers[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    for (std::size_t h = 0; h < layer.heads.size(); ++h) {
      const std::string hp = p + "head" + std::to_string(h) + ".";
      fn(hp + "wq", layer.heads[h].wq);
      fn(hp + "wk", layer.heads[h].wk);
      fn(hp + "wv", layer.heads[h].wv);
      fn(hp + "wo", layer.heads[h].wo);
    }
    fn(p + "attn_norm", layer.attn_norm);
    fn(p + "ffn_norm", layer.ffn_norm);
    fn(p + "w_gate", layer.w_gate);
    fn(p + "w_up", layer.w_up);
    fn(p + "w_down", layer.w_down);
  }
  fn(std::string("final_norm"), w.final_norm);
  fn(std::string("output"), w.output);
}

/// Maps every member through fn, preserving structure.
template <typename Out, typename In, typename Fn>
Weights<Out> map_weights(const Weights<In>& in, Fn&& fn) {
  Weights<Out> out;
  out.embedding = fn(in.embedding);
  out.final_norm = fn(in.final_norm);
  out.output = fn(in.output);
  out.layers.resize(in.layers.size());
  for (std::size_t l = 0; l < in.layers.size(); ++l) {
    const auto& src = in.layers[l];
    auto& dst = out.layers[l];
    dst.heads.resize(src.heads.size());
    for (std::size_t h = 0; h < src.heads.size(); ++h) {
      dst.heads[h] = {fn(src.heads[h].wq), fn(src.heads[h].wk), fn(src.heads[h].wv), fn(src.heads[h].wo)};
    }
    dst.attn_norm = fn(src.attn_norm);
    dst.ffn_norm = fn(src.ffn_norm);
    dst.w_gate = fn(src.w_gate);
    dst.w_up = fn(src.w_up);
    dst.w_down = fn(src.w_down);
  }
  return out;
}

template <typename Scalar>
using ParamStore = Weights<Matrix<Scalar>>;

template <typename Scalar>
using BoundParams = Weights<Tensor<Scalar>>;

/// Wraps every matrix as a graph leaf.
template <typename Scalar>
BoundParams<Scalar> bind(const ParamStore<Scalar>& store, bool requires_grad) {
  return map_weights<Tensor<Scalar>>(
      store, [requires_grad](const Matrix<Scalar>& m) { return Tensor<Scalar>(m, requires_grad); });
}

/// Gradients held by the leaves, zeros where nothing flowed.
template <typename Scalar>
ParamStore<Scalar> collect_grads(const BoundParams<Scalar>& bound) {
  return map_weights<Matrix<Scalar>>(bound, [](const Tensor<Scalar>& t) { return t.grad(); });
}

template <typename Scalar>
ParamStore<Scalar> zeros_like(const ParamStore<Scalar>& store) {
  return map_weights<Matrix<Scalar>>(
      store, [](const Matrix<Scalar>& m) { return Matrix<Scalar>::Zero(m.rows(), m.cols()).eval(); });
}

template <typename To, typename From>
ParamStore<To> cast_params(const ParamStore<From>& store) {
  return map_weights<Matrix<To>>(store, [](const Matrix<From>& m) { return m.template cast<To>().eval(); });
}

template <typename Scalar>
std::size_t parameter_count(const ParamStore<Scalar>& store) {
  std::size_t n = 0;
  visit_weights(store, [&n](const std::string&, const Matrix<Scalar>& m) {
    n += static_cast<std::size_t>(m.size());
  });
  return n;
}

template <typename Scalar>
bool bit_identical(const ParamStore<Scalar>& a, const ParamStore<Scalar>& b) {
  std::vector<const Matrix<Scalar>*> lhs, rhs;
  visit_weights(a, [&](const std::string&, const Matrix<Scalar>& m) { lhs.push_back(&m); });
  visit_weights(b, [&](const std::string&, const Matrix<Scalar>& m) { rhs.push_back(&m); });
  if (lhs.size() != rhs.size()) return false;
  for (std::size_t i = 0; i < lhs.size(); ++i) {
    if (lhs[i]->rows() != rhs[i]->rows() || lhs[i]->cols() != rhs[i]->cols()) return false;
    if (std::memcmp(lhs[i]->data(), rhs[i]->data(), sizeof(Scalar) * static_cast<std::size_t>(lhs[i]->size())) != 0) {
      return false;
    }
  }
  return true;
}

namespace detail {

template <typename Scalar>
Matrix<Scalar> normal_matrix(std::uint64_t seed, const std::string& name, Eigen::Index rows,
                             Eigen::Index cols, double stddev) {
  CounterRng rng(seed, "init:" + name);
  Matrix<Scalar> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(stddev * rng.normal());
  return m;
}

}  // namespace detail

/// Deterministic initialization. Projections draw from N(0, 1/fan_in); the
/// residual-writing projections (per-head output, FFN down) are further scaled
/// by 1/sqrt(2 * n_layer). Norm gains start at one.
template <typename Scalar>
ParamStore<Scalar> init_parameters(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  const Eigen::Index d = config.d_model;
  const Eigen::Index dh = config.d_head;
  const Eigen::Index dff = config.d_ff;
  const double depth_scale = 1.0 / std::sqrt(2.0 * config.n_layer);
  auto normal = [seed](const std::string& name, Eigen::Index r, Eigen::Index c, double sd) {
    return detail::normal_matrix<Scalar>(seed, name, r, c, sd);
  };
  ParamStore<Scalar> p;
  p.embedding = normal("embedding", config.vocab_size, d, 1.0);
  p.final_norm = Matrix<Scalar>::Ones(1, d);
  p.output = normal("output", d, config.vocab_size, 1.0 / std::sqrt(double(d)));
  p.layers.resize(static_cast<std::size_t>(config.n_layer));
  for (int l = 0; l < config.n_layer; ++l) {
    auto& layer = p.layers[static_cast<std::size_t>(l)];
    const std::string lp = "layer" + std::to_string(l) + ".";
    layer.heads.resize(static_cast<std::size_t>(config.n_head));
    for (int h = 0; h < config.n_head; ++h) {
      const std::string hp = lp + "head" + std::to_string(h) + ".";
      auto& head = layer.heads[static_cast<std::size_t>(h)];
      head.wq = normal(hp + "wq", d, dh, 1.0 / std::sqrt(double(d)));
      head.wk = normal(hp + "wk", d, dh, 1.0 / std::sqrt(double(d)));
      head.wv = normal(hp + "wv", d, dh, 1.0 / std::sqrt(double(d)));
      head.wo = normal(hp + "wo", dh, d, depth_scale / std::sqrt(double(config.d_model)));
    }
    layer.attn_norm = Matrix<Scalar>::Ones(1, d);
    layer.ffn_norm = Matrix<Scalar>::Ones(1, d);
    layer.w_gate = normal(lp + "w_gate", d, dff, 1.0 / std::sqrt(double(d)));
    layer.w_up = normal(lp + "w_up", d, dff, 1.0 / std::sqrt(double(d)));
    layer.w_down = normal(lp + "w_down", dff, d, depth_scale / std::sqrt(double(dff)));
  }
  return p;
}

}  // namespace sgt
