// SPDX-License-Identifier: Apache-2.0
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <numeric>

using namespace sgt;
using namespace sgt::testing;

namespace {

// Recorded from the first verified run of this configuration.
constexpr double kGoldenLoss = 3.3806444759378174;

BoundParams<double> bound(const ModelConfig& cfg, std::uint64_t seed) {
  return bind(init_parameters<double>(cfg, seed), false);
}

}  // namespace

TEST(AttentionHead, SingleTokenAttendsToItself) {
  const auto cfg = tiny_config(4, 1, 1, 5, 4);
  const auto layer = random_layer(cfg, 1);
  const Matrix<double> x = random_matrix(1, 4, 1, "x");
  const auto b = bind_head(layer.heads[0]);
  const auto hf = attention_head_forward(Tensor<double>(x), b, cfg);
  ASSERT_EQ(hf.attention.rows(), 1);
  EXPECT_EQ(hf.attention.value()(0, 0), 1.0);
  const Matrix<double> expect = x * layer.heads[0].wv * layer.heads[0].wo;
  EXPECT_LT((hf.output.value() - expect).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(AttentionHead, ZeroQueryWeightsGiveUniformCausalRows) {
  const auto cfg = tiny_config(4, 1, 1, 5, 6);
  auto head = random_layer(cfg, 2).heads[0];
  head.wq.setZero();
  const auto hf = attention_head_forward(Tensor<double>(random_matrix(6, 4, 2, "x")), bind_head(head), cfg);
  for (Eigen::Index r = 0; r < 6; ++r) {
    for (Eigen::Index c = 0; c <= r; ++c) EXPECT_NEAR(hf.attention.value()(r, c), 1.0 / static_cast<double>(r + 1), 1e-15);
  }
}

TEST(AttentionHead, MatchesStraightLineOracle) {
  const auto cfg = tiny_config(4, 1, 1, 5, 3);
  const auto head = random_layer(cfg, 3, 1.0).heads[0];
  const auto x = random_matrix(3, 4, 3, "x");
  const auto hf = attention_head_forward(Tensor<double>(x), bind_head(head), cfg);
  const auto ref = ref_head(x, head, cfg.rope_base);
  EXPECT_LT((hf.output.value() - ref.out).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((hf.attention.value() - ref.attn).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(AttentionHead, PerHeadSumEqualsConcatenateThenProject) {
  const auto cfg = tiny_config(12, 3, 1, 5, 5);
  const auto layer = random_layer(cfg, 4, 1.0);
  const auto x = random_matrix(5, 12, 4, "x");
  Matrix<double> summed = Matrix<double>::Zero(5, 12);
  Matrix<double> concat(5, 12), stacked_wo(12, 12);
  for (int i = 0; i < 3; ++i) {
    const auto& h = layer.heads[static_cast<std::size_t>(i)];
    const auto hf = attention_head_forward(Tensor<double>(x), bind_head(h), cfg);
    summed += hf.output.value();
    concat.middleCols(i * 4, 4) = hf.attention.value() * x * h.wv;
    stacked_wo.middleRows(i * 4, 4) = h.wo;
  }
  EXPECT_LT((summed - concat * stacked_wo).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(BlockForward, EmptyLoopIsBitIdenticalToVanilla) {
  const auto cfg = tiny_config(8, 4, 1, 5, 6);
  const auto layer = bind_layer(random_layer(cfg, 5));
  const Tensor<double> h(random_matrix(6, 8, 5, "h"));
  ForwardContext<double> ctx{cfg};
  const auto vanilla = vanilla_block(h, layer, ctx, 0).value();
  for (const auto& d : {LoopDirective::none(), LoopDirective::head_loop({0, 2}, 0), LoopDirective::head_loop({}, 5)}) {
    const auto out = block_forward(h, layer, d, ctx, 0).value();
    EXPECT_EQ(0, std::memcmp(out.data(), vanilla.data(), sizeof(double) * out.size()));
  }
}

TEST(BlockForward, AllHeadsOnceEqualsExplicitDoubleMha) {
  const auto cfg = tiny_config(8, 4, 1, 5, 6);
  const auto raw = random_layer(cfg, 6);
  const auto h = random_matrix(6, 8, 6, "h");
  ForwardContext<double> ctx{cfg};
  const auto out = block_forward(Tensor<double>(h), bind_layer(raw), LoopDirective::head_loop(all_heads(4), 1), ctx, 0);
  const auto all = all_heads(4);
  const Matrix<double> once = h + ref_mha(h, raw, cfg, all);
  const Matrix<double> twice = once + ref_mha(once, raw, cfg, all);
  const Matrix<double> expect = twice + ref_ffn(twice, raw, cfg);
  EXPECT_LT((out.value() - expect).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(ModelForward, ZeroOutputHeadGivesLogVocab) {
  const auto cfg = tiny_config(8, 2, 2, 13, 8);
  auto store = init_parameters<double>(cfg, 7);
  store.output.setZero();
  const std::vector<int> ids{1, 5, 2, 8, 3};
  const auto r = model_forward(bind(store, false), cfg, ids, vanilla_plan(cfg.n_layer));
  EXPECT_NEAR(r.loss.item(), std::log(13.0), 1e-12);
  EXPECT_NEAR(r.loss_nats, std::log(13.0), 1e-12);
}

TEST(ModelForward, TwoTokensSuperviseOnePosition) {
  const auto cfg = tiny_config();
  const std::vector<int> ids{3, 4};
  const auto r = model_forward(bound(cfg, 1), cfg, ids, vanilla_plan(cfg.n_layer));
  EXPECT_EQ(r.supervised_positions, 1);
  EXPECT_EQ(r.logits.rows(), 2);
  const double direct = next_token_nll(r.logits.value(), ids);
  EXPECT_NEAR(r.loss_nats, direct, 1e-15);
}

TEST(ModelForward, RejectsEmptyAndOutOfRange) {
  const auto cfg = tiny_config();
  const auto p = bound(cfg, 1);
  EXPECT_THROW(model_forward(p, cfg, std::vector<int>{}, vanilla_plan(cfg.n_layer)), std::invalid_argument);
  EXPECT_THROW(model_forward(p, cfg, std::vector<int>{1}, vanilla_plan(cfg.n_layer)), std::invalid_argument);
  EXPECT_THROW(model_forward(p, cfg, std::vector<int>{1, 11}, vanilla_plan(cfg.n_layer)), std::out_of_range);
}

TEST(ModelForward, GoldenLoss) {
  const auto cfg = tiny_config(16, 4, 2, 17, 8);
  const std::vector<int> ids{0, 3, 9, 16, 4, 4, 11, 2};
  const auto r = model_forward(bound(cfg, 20260101), cfg, ids, vanilla_plan(cfg.n_layer));
  EXPECT_NEAR(r.loss_nats, kGoldenLoss, 1e-12);
}

TEST(ModelForward, CausalityOfLogits) {
  const auto cfg = tiny_config(8, 2, 2, 11, 8);
  const auto p = bound(cfg, 3);
  std::vector<int> ids{1, 2, 3, 4, 5, 6, 7, 8};
  const auto plan = LoopPlan{LoopDirective::head_loop({1}, 2), LoopDirective::none()};
  const auto base = model_forward(p, cfg, ids, plan).logits.value();
  for (int t = 0; t < 7; ++t) {
    auto changed = ids;
    for (int s = t + 1; s < 8; ++s) changed[static_cast<std::size_t>(s)] = (changed[static_cast<std::size_t>(s)] + 5) % 11;
    const auto other = model_forward(p, cfg, changed, plan).logits.value();
    EXPECT_LT((other.topRows(t + 1) - base.topRows(t + 1)).cwiseAbs().maxCoeff(), 1e-12) << "t=" << t;
  }
}

TEST(ModelForward, ObservedAttentionRowsAreSimplexRows) {
  const auto cfg = tiny_config(8, 2, 2, 11, 8);
  int seen = 0;
  AttentionObserver<double> obs = [&](const HeadObservation<double>& o) {
    ++seen;
    const auto row = last_row(o.attention);
    double s = 0;
    for (double a : row) {
      EXPECT_GE(a, 0.0);
      s += a;
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  };
  const std::vector<int> ids{1, 2, 3, 4, 5, 6};
  model_forward(bound(cfg, 4), cfg, ids, vanilla_plan(cfg.n_layer), &obs);
  EXPECT_EQ(seen, cfg.n_layer * cfg.n_head);
}

TEST(InitParameters, SameSeedIsBitIdentical) {
  const auto cfg = tiny_config();
  EXPECT_TRUE(bit_identical(init_parameters<float>(cfg, 5), init_parameters<float>(cfg, 5)));
  EXPECT_FALSE(bit_identical(init_parameters<float>(cfg, 5), init_parameters<float>(cfg, 6)));
}

TEST(InitParameters, PurposeTagsGiveIndependentStreams) {
  const auto a = detail::normal_matrix<double>(1, "alpha", 100, 100, 1.0);
  const auto b = detail::normal_matrix<double>(1, "beta", 100, 100, 1.0);
  const Eigen::Map<const Eigen::VectorXd> x(a.data(), a.size()), y(b.data(), b.size());
  const double mx = x.mean(), my = y.mean();
  const double corr = ((x.array() - mx) * (y.array() - my)).sum() /
                      std::sqrt(((x.array() - mx).square().sum()) * ((y.array() - my).square().sum()));
  EXPECT_LT(std::abs(corr), 0.1);
}

TEST(InitParameters, ScalesAndGains) {
  auto cfg = tiny_config(64, 4, 2, 32, 8);
  const auto p = init_parameters<double>(cfg, 1);
  EXPECT_EQ(p.final_norm, Matrix<double>::Ones(1, 64));
  EXPECT_EQ(p.layers[1].attn_norm, Matrix<double>::Ones(1, 64));
  const double sd = std::sqrt(p.layers[0].w_up.array().square().mean());
  EXPECT_NEAR(sd, 1.0 / 8.0, 0.01);
  EXPECT_EQ(parameter_count(p), static_cast<std::size_t>(32 * 64 * 2 + 64 + 2 * (4 * 4 * 64 * 16 + 2 * 64 + 3 * 64 * 128)));
}

TEST(ModelConfig, RejectsInvalidShapes) {
  auto c = ModelConfig::desk();
  EXPECT_NO_THROW(c.validate());
  c.n_head = 7;
  EXPECT_THROW(init_parameters<float>(c, 1), ConfigError);
  c = ModelConfig::desk();
  c.d_head = 16;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig::desk();
  c.max_seq_len = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_NO_THROW(ModelConfig::reference_573m().validate());
}
