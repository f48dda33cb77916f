// SPDX-License-Identifier: Apache-2.0
#include "sgt/flops.hpp"

#include "sgt/layers.hpp"

#include <stdexcept>

namespace sgt {

FlopsBreakdown& FlopsBreakdown::operator+=(const FlopsBreakdown& o) {
  qkv += o.qkv;
  out_proj += o.out_proj;
  scores += o.scores;
  mix += o.mix;
  ffn += o.ffn;
  output_head += o.output_head;
  return *this;
}

namespace {

FlopsBreakdown times(FlopsBreakdown f, double k) {
  f.qkv *= k;
  f.out_proj *= k;
  f.scores *= k;
  f.mix *= k;
  f.ffn *= k;
  f.output_head *= k;
  return f;
}

}  // namespace

FlopsBreakdown head_flops(const ModelConfig& config, std::int64_t n) {
  const double nn = static_cast<double>(n);
  const double d = config.d_model;
  const double dh = config.d_head;
  FlopsBreakdown f;
  f.qkv = 3.0 * 2.0 * nn * d * dh;
  f.scores = 2.0 * nn * nn * dh;
  f.mix = 2.0 * nn * nn * dh;
  f.out_proj = 2.0 * nn * dh * d;
  return f;
}

FlopsBreakdown ffn_flops(const ModelConfig& config, std::int64_t n) {
  FlopsBreakdown f;
  f.ffn = 3.0 * 2.0 * static_cast<double>(n) * config.d_model * config.d_ff;
  return f;
}

FlopsBreakdown layer_flops(const ModelConfig& config, std::int64_t n, const LoopDirective& directive) {
  directive.validate(config.n_head);
  using Mode = LoopDirective::Mode;
  const auto head = head_flops(config, n);
  const int masked = directive.mode == Mode::kMask ? static_cast<int>(directive.heads.size()) : 0;
  FlopsBreakdown f = times(head, config.n_head - masked);
  f += ffn_flops(config, n);
  if (directive.mode == Mode::kHeadLoop) {
    f += times(head, static_cast<double>(directive.depth) * static_cast<double>(directive.heads.size()));
  } else if (directive.mode == Mode::kBlockLoop) {
    FlopsBreakdown block = times(head, config.n_head);
    block += ffn_flops(config, n);
    f += times(block, directive.depth);
  }
  return f;
}

FlopsBreakdown forward_flops(const ModelConfig& config, std::int64_t n, const LoopPlan& plan) {
  if (static_cast<int>(plan.size()) != config.n_layer) throw std::invalid_argument("forward_flops: plan size");
  FlopsBreakdown f;
  for (const auto& directive : plan) f += layer_flops(config, n, directive);
  f.output_head = 2.0 * static_cast<double>(n) * config.d_model * config.vocab_size;
  return f;
}

double training_flops_per_step(const ModelConfig& config, std::int64_t n, std::int64_t batch, const LoopPlan& plan) {
  return kTrainingMultiplier * static_cast<double>(batch) * forward_flops(config, n, plan).total();
}

void FlopsLedger::record(double step_flops) {
  if (!(step_flops >= 0)) throw std::invalid_argument("FlopsLedger: negative step FLOPs");
  if (steps_ == 0 || step_flops != per_step_) ++changes_;
  per_step_ = step_flops;
  cumulative_ += step_flops;
  ++steps_;
}

void FlopsLedger::restore(double per_step, double cumulative, std::int64_t steps, std::int64_t changes) {
  per_step_ = per_step;
  cumulative_ = cumulative;
  steps_ = steps;
  changes_ = changes;
}

}  // namespace sgt
