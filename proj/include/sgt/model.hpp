// SPDX-License-Identifier: Apache-2.0
//
// Decoder-only causal transformer with per-layer loop directives.

#pragma once

#include "sgt/layers.hpp"
#include "sgt/loop.hpp"
#include "sgt/weights.hpp"

#include <span>
#include <stdexcept>
#include <vector>

namespace sgt {

/// H_post = H + MHA(H); then the directive's loop; then the FFN half-block.
/// A block-loop directive reapplies the whole block K more times.
template <typename Scalar>
Tensor<Scalar> block_forward(const Tensor<Scalar>& h, const LayerWeights<Tensor<Scalar>>& layer,
                             const LoopDirective& directive, const ForwardContext<Scalar>& ctx, int layer_index) {
  directive.validate(static_cast<int>(layer.heads.size()));
  using Mode = LoopDirective::Mode;
  const std::span<const int> masked =
      directive.mode == Mode::kMask ? std::span<const int>(directive.heads) : std::span<const int>();
  Tensor<Scalar> post = attention_residual(h, layer, masked, ctx, layer_index, 0);
  if (directive.mode == Mode::kHeadLoop && directive.depth > 0 && !directive.heads.empty()) {
    post = looped_attention_forward(post, layer, std::span<const int>(directive.heads), directive.depth, ctx,
                                    layer_index);
  }
  Tensor<Scalar> out = add(post, ffn_sublayer(post, layer, ctx.config));
  if (directive.mode == Mode::kBlockLoop) out = block_loop_forward(out, layer, directive.depth, ctx, layer_index);
  return out;
}

template <typename Scalar>
struct ForwardResult {
  Tensor<Scalar> logits;  // N x vocab
  Tensor<Scalar> loss;    // 1 x 1 mean cross-entropy in nats
  double loss_nats = 0;   // the same mean, accumulated in double
  int supervised_positions = 0;
};

struct ForwardOptions {
  Eigen::Index position_offset = 0;
  double divergence_factor = 1e4;
};

/// Summed next-token negative log-likelihood in nats, computed in double.
template <typename Scalar>
double next_token_nll(const Matrix<Scalar>& logits, std::span<const int> ids) {
  double total = 0.0;
  for (std::size_t t = 0; t + 1 < ids.size(); ++t) {
    const auto r = static_cast<Eigen::Index>(t);
    const double row_max = static_cast<double>(logits.row(r).maxCoeff());
    double z = 0.0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) z += std::exp(static_cast<double>(logits(r, c)) - row_max);
    total += std::log(z) + row_max - static_cast<double>(logits(r, ids[t + 1]));
  }
  return total;
}

/// Hidden states after the last block (before the final norm).
template <typename Scalar>
Tensor<Scalar> hidden_forward(const BoundParams<Scalar>& params, const ModelConfig& config, std::span<const int> ids,
                              const LoopPlan& plan, const AttentionObserver<Scalar>* observer = nullptr,
                              const ForwardOptions& options = {}) {
  if (ids.empty()) throw std::invalid_argument("model_forward: empty sequence");
  if (static_cast<int>(plan.size()) != config.n_layer) throw std::invalid_argument("loop plan needs one entry per layer");
  ForwardContext<Scalar> ctx{config, observer, options.position_offset, options.divergence_factor};
  Tensor<Scalar> h = embedding(params.embedding, ids);
  for (int l = 0; l < config.n_layer; ++l) {
    h = block_forward(h, params.layers[static_cast<std::size_t>(l)], plan[static_cast<std::size_t>(l)], ctx, l);
  }
  return h;
}

/// Logits for every position and the shifted next-token loss over the
/// ids.size() - 1 supervised positions.
template <typename Scalar>
ForwardResult<Scalar> model_forward(const BoundParams<Scalar>& params, const ModelConfig& config,
                                    std::span<const int> ids, const LoopPlan& plan,
                                    const AttentionObserver<Scalar>* observer = nullptr,
                                    const ForwardOptions& options = {}) {
  if (ids.size() < 2) throw std::invalid_argument("model_forward: need at least two tokens for a supervised position");
  for (int id : ids) {
    if (id < 0 || id >= config.vocab_size) throw std::out_of_range("model_forward: token id out of range");
  }
  auto h = hidden_forward(params, config, ids, plan, observer, options);
  auto logits = matmul(rms_norm(h, params.final_norm, static_cast<Scalar>(config.norm_eps)), params.output);
  std::vector<int> targets(ids.size(), -1);
  for (std::size_t t = 0; t + 1 < ids.size(); ++t) targets[t] = ids[t + 1];
  auto loss = cross_entropy(logits, std::span<const int>(targets));
  const int supervised = static_cast<int>(ids.size()) - 1;
  return {logits, loss, next_token_nll(logits.value(), ids) / supervised, supervised};
}

}  // namespace sgt
