// SPDX-License-Identifier: Apache-2.0
//
// Selective head looping, the block-loop baseline, head masking and the
// weighted attention contribution used by the analysis tools.

#pragma once

#include "sgt/layers.hpp"

#include <algorithm>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sgt {

/// A loop iterate grew past the divergence guard.
class DivergenceError : public NumericError {
 public:
  DivergenceError(int layer, int iteration, double ratio)
      : NumericError("loop diverged at layer " + std::to_string(layer) + ", iteration " +
                     std::to_string(iteration) + " (max-abs grew " + std::to_string(ratio) + "x)"),
        layer_(layer),
        iteration_(iteration) {}
  int layer() const { return layer_; }
  int iteration() const { return iteration_; }

 private:
  int layer_;
  int iteration_;
};

struct HeadSet {
  int layer = 0;
  std::vector<int> members;  // sorted, unique

  int size() const { return static_cast<int>(members.size()); }
};

struct LoopDirective {
  enum class Mode { kNone, kHeadLoop, kBlockLoop, kMask };

  Mode mode = Mode::kNone;
  std::vector<int> heads;  // loop set for kHeadLoop, masked heads for kMask
  int depth = 0;           // K

  static LoopDirective none() { return {}; }
  static LoopDirective head_loop(std::vector<int> set, int k) { return {Mode::kHeadLoop, sorted(std::move(set)), k}; }
  static LoopDirective block_loop(int k) { return {Mode::kBlockLoop, {}, k}; }
  static LoopDirective mask(std::vector<int> masked) { return {Mode::kMask, sorted(std::move(masked)), 0}; }

  void validate(int n_head) const {
    if (depth < 0) throw std::invalid_argument("loop depth must be non-negative");
    for (std::size_t i = 0; i < heads.size(); ++i) {
      if (heads[i] < 0 || heads[i] >= n_head) throw std::out_of_range("loop directive head out of range");
      if (i > 0 && heads[i] == heads[i - 1]) throw std::invalid_argument("loop directive heads must be unique");
    }
    if (mode == Mode::kBlockLoop && depth < 1) throw std::invalid_argument("block loop needs K >= 1");
  }

  friend bool operator==(const LoopDirective&, const LoopDirective&) = default;

 private:
  static std::vector<int> sorted(std::vector<int> v) {
    std::sort(v.begin(), v.end());
    return v;
  }
};

using LoopPlan = std::vector<LoopDirective>;

inline LoopPlan vanilla_plan(int n_layer) { return LoopPlan(static_cast<std::size_t>(n_layer)); }

namespace detail {

inline HeadSet select_extreme(std::span<const double> entropies, int h, int layer, bool highest) {
  if (h < 1) throw std::invalid_argument("select_heads: h must be >= 1");
  if (h > static_cast<int>(entropies.size())) throw std::invalid_argument("select_heads: h exceeds head count");
  for (double e : entropies) {
    if (!std::isfinite(e)) throw std::invalid_argument("select_heads: non-finite entropy");
  }
  std::vector<int> idx(entropies.size());
  std::iota(idx.begin(), idx.end(), 0);
  // Stable sort keeps the lower index first among ties.
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return highest ? entropies[a] > entropies[b] : entropies[a] < entropies[b];
  });
  idx.resize(static_cast<std::size_t>(h));
  std::sort(idx.begin(), idx.end());
  return {layer, idx};
}

}  // namespace detail

/// The h highest-entropy heads; ties go to the lower head index.
inline HeadSet select_heads(std::span<const double> entropies, int h, int layer = 0) {
  return detail::select_extreme(entropies, h, layer, true);
}

/// The h lowest-entropy heads (low-entropy ablation arm); ties go to the lower index.
inline HeadSet select_lowest_heads(std::span<const double> entropies, int h, int layer = 0) {
  return detail::select_extreme(entropies, h, layer, false);
}

namespace detail {

template <typename Scalar>
void guard_divergence(const Tensor<Scalar>& input, const Tensor<Scalar>& iterate, double factor, int layer,
                      int iteration) {
  if (factor <= 0) return;
  const double base = static_cast<double>(input.value().cwiseAbs().maxCoeff());
  const double now = static_cast<double>(iterate.value().cwiseAbs().maxCoeff());
  if (base > 0 && now > factor * base) throw DivergenceError(layer, iteration, now / base);
}

}  // namespace detail

/// H^(k) = H^(k-1) + sum_{i in S} Attn_i(H^(k-1)) for k = 1..K, with queries,
/// keys and values recomputed from each iterate and the head weights shared
/// across iterations.
template <typename Scalar>
Tensor<Scalar> looped_attention_forward(const Tensor<Scalar>& h0, const LayerWeights<Tensor<Scalar>>& layer,
                                        std::span<const int> loop_set, int depth, const ForwardContext<Scalar>& ctx,
                                        int layer_index) {
  if (depth < 0) throw std::invalid_argument("looped_attention_forward: K must be >= 0");
  Tensor<Scalar> h = h0;
  if (loop_set.empty()) return h;
  for (int k = 1; k <= depth; ++k) {
    auto update = attention_sublayer(h, layer, loop_set, ctx, layer_index, k);
    h = add(h, *update);
    detail::guard_divergence(h0, h, ctx.divergence_factor, layer_index, k);
  }
  return h;
}

/// Applies the whole block K more times with shared weights.
template <typename Scalar>
Tensor<Scalar> block_loop_forward(const Tensor<Scalar>& h, const LayerWeights<Tensor<Scalar>>& layer, int depth,
                                  const ForwardContext<Scalar>& ctx, int layer_index) {
  if (depth < 1) throw std::invalid_argument("block_loop_forward: K must be >= 1");
  Tensor<Scalar> out = h;
  for (int k = 1; k <= depth; ++k) {
    out = vanilla_block(out, layer, ctx, layer_index, k);
    detail::guard_divergence(h, out, ctx.divergence_factor, layer_index, k);
  }
  return out;
}

struct HeadRef {
  int layer;
  int head;
};

/// Plan in which the listed heads contribute nothing to their layer's sum.
inline LoopPlan mask_heads(int n_layer, int n_head, std::span<const HeadRef> masked) {
  std::vector<std::vector<int>> per_layer(static_cast<std::size_t>(n_layer));
  for (const auto& ref : masked) {
    if (ref.layer < 0 || ref.layer >= n_layer || ref.head < 0 || ref.head >= n_head) {
      throw std::out_of_range("mask_heads: head out of range");
    }
    auto& v = per_layer[static_cast<std::size_t>(ref.layer)];
    if (std::find(v.begin(), v.end(), ref.head) == v.end()) v.push_back(ref.head);
  }
  LoopPlan plan(static_cast<std::size_t>(n_layer));
  for (int l = 0; l < n_layer; ++l) {
    auto& v = per_layer[static_cast<std::size_t>(l)];
    if (!v.empty()) plan[static_cast<std::size_t>(l)] = LoopDirective::mask(v);
  }
  return plan;
}

/// C_j = A_{N,j} * ||V_j||_2 for the last query row.
template <typename Scalar>
std::vector<double> weighted_attention_contribution(std::span<const double> row, const Matrix<Scalar>& values) {
  if (static_cast<Eigen::Index>(row.size()) != values.rows()) {
    throw ShapeError("weighted_attention_contribution: one value row per position required");
  }
  std::vector<double> c(row.size());
  for (std::size_t j = 0; j < row.size(); ++j) {
    c[j] = row[j] * static_cast<double>(values.row(static_cast<Eigen::Index>(j)).template cast<double>().norm());
  }
  return c;
}

}  // namespace sgt
