// SPDX-License-Identifier: Apache-2.0
//
// Attention heads and the two half-blocks of a pre-norm decoder layer.
//
//   Attn_i(X)  = (A_i X W_V^i) W_O^i,   A_i = causal_softmax(Q_i K_i^T / sqrt(d_h))
//   MHA_S(H)   = sum_{i in S} Attn_i(rms_norm(H))
//   FFN(H)     = (gate(x W_gate) * (x W_up)) W_down,   x = rms_norm(H)
//
// Per-head outputs are summed straight into the residual stream; there is no
// joint output projection.

#pragma once

#include "sgt/model_config.hpp"
#include "sgt/tensor.hpp"
#include "sgt/weights.hpp"

#include <algorithm>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace sgt {

template <typename Scalar>
struct HeadObservation {
  int layer;
  int head;
  int loop_index;  // 0 for the base pass, k for the k-th loop iteration
  const Matrix<Scalar>& attention;
  const Matrix<Scalar>& values;
};

template <typename Scalar>
using AttentionObserver = std::function<void(const HeadObservation<Scalar>&)>;

template <typename Scalar>
struct ForwardContext {
  const ModelConfig& config;
  const AttentionObserver<Scalar>* observer = nullptr;
  Eigen::Index position_offset = 0;
  double divergence_factor = 1e4;  // <= 0 disables the loop divergence guard
};

template <typename Scalar>
struct HeadForward {
  Tensor<Scalar> output;     // N x d_model
  Tensor<Scalar> attention;  // N x N
  Tensor<Scalar> values;     // N x d_head
};

/// One causal attention head applied to `x` (already normalized by the caller).
template <typename Scalar>
HeadForward<Scalar> attention_head_forward(const Tensor<Scalar>& x, const HeadWeights<Tensor<Scalar>>& head,
                                           const ModelConfig& config, Eigen::Index position_offset = 0) {
  auto q = rotary(matmul(x, head.wq), position_offset, config.rope_base);
  auto k = rotary(matmul(x, head.wk), position_offset, config.rope_base);
  auto v = matmul(x, head.wv);
  const auto logit_scale = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(config.d_head)));
  auto attn = causal_softmax(matmul_transposed(q, k), logit_scale);
  auto out = matmul(matmul(attn, v), head.wo);
  return {out, attn, v};
}

/// Attention row of the last query position.
template <typename Scalar>
std::vector<double> last_row(const Matrix<Scalar>& attention) {
  std::vector<double> row(static_cast<std::size_t>(attention.cols()));
  const Eigen::Index r = attention.rows() - 1;
  for (Eigen::Index c = 0; c < attention.cols(); ++c) row[static_cast<std::size_t>(c)] = attention(r, c);
  return row;
}

/// Sum of the listed heads' outputs on rms_norm(h); nullopt for an empty list.
template <typename Scalar>
std::optional<Tensor<Scalar>> attention_sublayer(const Tensor<Scalar>& h, const LayerWeights<Tensor<Scalar>>& layer,
                                                 std::span<const int> heads, const ForwardContext<Scalar>& ctx,
                                                 int layer_index, int loop_index) {
  if (heads.empty()) return std::nullopt;
  auto x = rms_norm(h, layer.attn_norm, static_cast<Scalar>(ctx.config.norm_eps));
  std::vector<Tensor<Scalar>> outs;
  outs.reserve(heads.size());
  for (int i : heads) {
    if (i < 0 || i >= static_cast<int>(layer.heads.size())) throw std::out_of_range("head index out of range");
    auto hf = attention_head_forward(x, layer.heads[static_cast<std::size_t>(i)], ctx.config, ctx.position_offset);
    if (ctx.observer && *ctx.observer) {
      (*ctx.observer)(HeadObservation<Scalar>{layer_index, i, loop_index, hf.attention.value(), hf.values.value()});
    }
    outs.push_back(std::move(hf.output));
  }
  return add_n(std::span<const Tensor<Scalar>>(outs));
}

template <typename Scalar>
Tensor<Scalar> ffn_sublayer(const Tensor<Scalar>& h, const LayerWeights<Tensor<Scalar>>& layer,
                            const ModelConfig& config) {
  auto x = rms_norm(h, layer.ffn_norm, static_cast<Scalar>(config.norm_eps));
  auto pre = matmul(x, layer.w_gate);
  auto gate = config.ffn_gate == FfnGate::kGelu ? gelu(pre) : silu(pre);
  return matmul(hadamard(gate, matmul(x, layer.w_up)), layer.w_down);
}

/// Every head index of a layer not in `excluded` (sorted input).
inline std::vector<int> heads_except(int n_head, std::span<const int> excluded) {
  std::vector<int> out;
  for (int i = 0; i < n_head; ++i) {
    if (std::find(excluded.begin(), excluded.end(), i) == excluded.end()) out.push_back(i);
  }
  return out;
}

/// H + MHA(H) over the unmasked heads.
template <typename Scalar>
Tensor<Scalar> attention_residual(const Tensor<Scalar>& h, const LayerWeights<Tensor<Scalar>>& layer,
                                  std::span<const int> masked, const ForwardContext<Scalar>& ctx, int layer_index,
                                  int loop_index) {
  const auto active = heads_except(static_cast<int>(layer.heads.size()), masked);
  auto mha = attention_sublayer(h, layer, std::span<const int>(active), ctx, layer_index, loop_index);
  return mha ? add(h, *mha) : h;
}

/// Plain decoder layer: attention half-block then FFN half-block, each with
/// its residual.
template <typename Scalar>
Tensor<Scalar> vanilla_block(const Tensor<Scalar>& h, const LayerWeights<Tensor<Scalar>>& layer,
                             const ForwardContext<Scalar>& ctx, int layer_index, int loop_index = 0,
                             std::span<const int> masked = {}) {
  auto post = attention_residual(h, layer, masked, ctx, layer_index, loop_index);
  return add(post, ffn_sublayer(post, layer, ctx.config));
}

}  // namespace sgt
