// SPDX-License-Identifier: Apache-2.0
#include "test_support.hpp"

#include "sgt/flops.hpp"
#include "sgt/growth.hpp"

#include <gtest/gtest.h>

using namespace sgt;
using namespace sgt::testing;

namespace {

std::uint64_t instrumented(const ModelConfig& cfg, const LoopPlan& plan, int n, std::uint64_t seed) {
  const auto p = bind(init_parameters<double>(cfg, seed), false);
  std::vector<int> ids;
  for (int i = 0; i < n; ++i) ids.push_back((i * 7 + 3) % cfg.vocab_size);
  FlopCounterScope scope;
  model_forward(p, cfg, ids, plan);
  return scope.count();
}

double overhead(const ModelConfig& cfg, const LoopPlan& plan) {
  const double base = training_flops_per_step(cfg, cfg.max_seq_len, 1, vanilla_plan(cfg.n_layer));
  return training_flops_per_step(cfg, cfg.max_seq_len, 1, plan) / base - 1.0;
}

}  // namespace

TEST(Flops, HeadAndFfnTerms) {
  const auto cfg = tiny_config(16, 4, 1, 10, 8);
  const auto h = head_flops(cfg, 8);
  EXPECT_EQ(h.qkv, 3.0 * 2 * 8 * 16 * 4);
  EXPECT_EQ(h.scores, 2.0 * 8 * 8 * 4);
  EXPECT_EQ(h.mix, 2.0 * 8 * 8 * 4);
  EXPECT_EQ(h.out_proj, 2.0 * 8 * 4 * 16);
  EXPECT_EQ(ffn_flops(cfg, 8).ffn, 3.0 * 2 * 8 * 16 * 32);
  EXPECT_EQ(forward_flops(cfg, 8, vanilla_plan(1)).output_head, 2.0 * 8 * 16 * 10);
  EXPECT_EQ(training_flops_per_step(cfg, 8, 4, vanilla_plan(1)),
            kTrainingMultiplier * 4 * forward_flops(cfg, 8, vanilla_plan(1)).total());
}

TEST(Flops, EmptyLoopSetCountsAsVanilla) {
  const auto cfg = ModelConfig::reference_573m();
  EXPECT_EQ(layer_flops(cfg, 4096, LoopDirective::head_loop({}, 3)).total(),
            layer_flops(cfg, 4096, LoopDirective::none()).total());
  EXPECT_EQ(layer_flops(cfg, 4096, LoopDirective::head_loop({1, 2}, 0)).total(),
            layer_flops(cfg, 4096, LoopDirective::none()).total());
}

TEST(Flops, AnalyticMatchesInstrumentedCounter) {
  struct Case {
    ModelConfig cfg;
    int n;
    std::vector<LoopPlan> plans;
  };
  const std::vector<Case> cases = {
      {tiny_config(12, 3, 2, 17, 8), 7,
       {vanilla_plan(2), {LoopDirective::head_loop({0, 2}, 2), LoopDirective::none()},
        {LoopDirective::mask({1}), LoopDirective::block_loop(1)}}},
      {tiny_config(16, 2, 3, 9, 6), 5,
       {vanilla_plan(3), {LoopDirective::none(), LoopDirective::head_loop({1}, 3), LoopDirective::head_loop({0, 1}, 1)},
        {LoopDirective::block_loop(2), LoopDirective::mask({0, 1}), LoopDirective::none()}}},
      {tiny_config(8, 4, 1, 30, 6), 6,
       {vanilla_plan(1), {LoopDirective::head_loop({3}, 1)}, {LoopDirective::mask({0, 2, 3})}}},
  };
  std::uint64_t seed = 40;
  for (const auto& c : cases) {
    for (const auto& plan : c.plans) {
      const double analytic = forward_flops(c.cfg, c.n, plan).total();
      EXPECT_EQ(static_cast<double>(instrumented(c.cfg, plan, c.n, seed++)), analytic);
    }
  }
}

TEST(Flops, OneExtraBlockIsOneSixteenthOfTheBody) {
  const auto cfg = ModelConfig::reference_573m();
  const auto vanilla = forward_flops(cfg, 4096, vanilla_plan(16));
  const double body = vanilla.total() - vanilla.output_head;
  const double extra = layer_flops(cfg, 4096, LoopDirective::block_loop(1)).total() -
                       layer_flops(cfg, 4096, LoopDirective::none()).total();
  EXPECT_NEAR(extra / body, 1.0 / 16.0, 1e-12);
}

TEST(Flops, ReferenceShapedOverheadBands) {
  const auto cfg = ModelConfig::reference_573m();
  LoopPlan sgt = vanilla_plan(16), block = vanilla_plan(16);
  for (int l : {15, 14, 13}) {
    sgt[static_cast<std::size_t>(l)] = LoopDirective::head_loop({0, 1}, 3);
    block[static_cast<std::size_t>(l)] = LoopDirective::block_loop(1);
  }
  const double o_sgt = overhead(cfg, sgt);
  const double o_block = overhead(cfg, block);
  EXPECT_GE(o_sgt, 0.01);
  EXPECT_LE(o_sgt, 0.04);
  EXPECT_GE(o_block, 0.15);
  EXPECT_LE(o_block, 0.21);
}

TEST(FlopsLedger, ChangesOnlyWhenThePlanMoves) {
  const auto cfg = tiny_config(16, 4, 4, 11, 8);
  GrowthConfig g;
  g.t_start = 5;
  g.interval = 5;
  g.target_layers = 2;
  g.max_depth = 2;
  auto state = ArchState::empty(4);
  FlopsLedger ledger;
  std::vector<std::int64_t> change_steps;
  double last_cum = 0, last_step = -1;
  const std::vector<double> layers{0.1, 0.2, 0.6, 0.9};
  const std::vector<std::vector<double>> heads(4, std::vector<double>{0.4, 0.3, 0.2, 0.1});
  for (std::int64_t t = 1; t <= 40; ++t) {
    ledger.record(training_flops_per_step(cfg, 8, 2, state.plan()));
    EXPECT_GE(ledger.cumulative(), last_cum);
    if (ledger.per_step() != last_step) change_steps.push_back(t);
    last_step = ledger.per_step();
    last_cum = ledger.cumulative();
    if (is_decision_step(t, g)) state = growth_decide(t, layers, heads, g, state).state;
  }
  // Decisions at 5, 10, 15, 20 take effect one step later; the schedule is fixed after 20.
  EXPECT_EQ(change_steps, (std::vector<std::int64_t>{1, 6, 11, 16, 21}));
  EXPECT_EQ(ledger.changes(), 5);
  EXPECT_EQ(ledger.steps(), 40);
  EXPECT_THROW(ledger.record(-1), std::invalid_argument);
}
