// SPDX-License-Identifier: Apache-2.0
#include "sgt/entropy.hpp"
#include "sgt/rng.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <vector>

using namespace sgt;

namespace {

// Independent evaluation in long double with an explicit support filter.
double oracle_entropy(const std::vector<double>& row) {
  long double s = 0;
  for (double a : row) {
    if (a > 0) s -= static_cast<long double>(a) * std::log(static_cast<long double>(a));
  }
  return static_cast<double>(s / std::log(static_cast<long double>(row.size())));
}

std::vector<double> random_simplex(std::uint64_t seed, std::uint64_t index, int n) {
  CounterRng rng(seed, "simplex", index);
  std::vector<double> row(static_cast<std::size_t>(n));
  double s = 0;
  for (auto& a : row) s += (a = rng.uniform() + 1e-3);
  for (auto& a : row) a /= s;
  return row;
}

}  // namespace

TEST(HeadEntropy, UniformRowIsOne) {
  for (int n : {2, 3, 7, 64}) {
    EXPECT_NEAR(head_entropy(std::vector<double>(static_cast<std::size_t>(n), 1.0 / n)), 1.0, 1e-12) << n;
  }
}

TEST(HeadEntropy, OneHotRowIsZero) {
  EXPECT_EQ(head_entropy(std::vector<double>{0.0, 1.0, 0.0, 0.0}), 0.0);
}

TEST(HeadEntropy, SkewedFourPositionRow) {
  const std::vector<double> row{0.7, 0.1, 0.1, 0.1};
  const double oracle = oracle_entropy(row);
  EXPECT_NEAR(head_entropy(row), oracle, 1e-12);
  // -(0.7 ln 0.7 + 0.3 ln 0.1) / ln 4, evaluated by hand.
  EXPECT_NEAR(oracle, 0.6783898, 1e-7);
}

TEST(HeadEntropy, Errors) {
  EXPECT_THROW(head_entropy(std::vector<double>{1.0}), std::invalid_argument);
  EXPECT_THROW(head_entropy(std::vector<double>{1.2, -0.2}), std::invalid_argument);
  EXPECT_THROW(head_entropy(std::vector<double>{0.5, 0.4}), std::invalid_argument);
  EXPECT_THROW(head_entropy(std::vector<double>{0.5, std::nan("")}), std::invalid_argument);
}

TEST(HeadEntropy, PermutationInvariant) {
  for (std::uint64_t i = 0; i < 20; ++i) {
    auto row = random_simplex(1, i, 9);
    const double e = head_entropy(row);
    CounterRng rng(1, "perm", i);
    for (std::size_t j = row.size() - 1; j > 0; --j) std::swap(row[j], row[rng.below(j + 1)]);
    EXPECT_NEAR(head_entropy(row), e, 1e-12);
  }
}

TEST(HeadEntropy, StrictBounds) {
  for (std::uint64_t i = 0; i < 50; ++i) {
    const auto row = random_simplex(2, i, 2 + static_cast<int>(i % 10));
    const double e = head_entropy(row);
    EXPECT_LT(e, 1.0 - 1e-9);
    EXPECT_GT(e, 1e-9);
    EXPECT_NEAR(e, oracle_entropy(row), 1e-12);
  }
  EXPECT_GT(head_entropy(std::vector<double>{1.0 - 1e-6, 1e-6}), 1e-9);
  EXPECT_LT(head_entropy(std::vector<double>{0.5 + 1e-4, 0.5 - 1e-4}), 1.0 - 1e-9);
}

TEST(LayerEntropy, Means) {
  EXPECT_DOUBLE_EQ(layer_entropy(std::vector<double>(4, 0.5), 4), 0.5);
  EXPECT_DOUBLE_EQ(layer_entropy(std::vector<double>{0.0, 1.0}, 2), 0.5);
  EXPECT_THROW(layer_entropy(std::vector<double>{0.2, 0.3}, 3), std::invalid_argument);
}

TEST(LayerEntropy, EightRandomHeadsMatchNaiveResummation) {
  std::vector<double> e;
  for (std::uint64_t h = 0; h < 8; ++h) e.push_back(head_entropy(random_simplex(3, h, 12)));
  long double s = 0;
  for (std::uint64_t h = 0; h < 8; ++h) s += oracle_entropy(random_simplex(3, h, 12));
  EXPECT_NEAR(layer_entropy(e, 8), static_cast<double>(s / 8), 1e-12);
}

TEST(IntraLayerVariance, Examples) {
  EXPECT_EQ(intra_layer_variance(std::vector<double>(5, 0.3)), 0.0);
  EXPECT_DOUBLE_EQ(intra_layer_variance(std::vector<double>{0.0, 1.0}), 0.25);
  EXPECT_THROW(intra_layer_variance(std::vector<double>{0.4}), std::invalid_argument);
}

TEST(IntraLayerVariance, MatchesTwoPassOracle) {
  CounterRng rng(4, "variance");
  std::vector<double> v(16);
  for (auto& x : v) x = rng.uniform();
  long double mean = 0;
  for (double x : v) mean += x;
  mean /= 16;
  long double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  EXPECT_NEAR(intra_layer_variance(v), static_cast<double>(ss / 16), 1e-12);
}

TEST(EntropyWindow, SingleAndTwoBatches) {
  EntropyWindow w(2, 2);
  const std::vector<double> e1{0.1, 0.2, 0.3, 0.4}, e2{0.5, 0.6, 0.7, 0.0};
  w.update(e1);
  EXPECT_EQ(w.count(), 1);
  EXPECT_DOUBLE_EQ(w.head_mean(1, 0), 0.3);
  w.update(e2);
  EXPECT_EQ(w.count(), 2);
  for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(w.head_mean(i / 2, i % 2), (e1[i] + e2[i]) / 2);
  w.reset();
  EXPECT_EQ(w.count(), 0);
  EXPECT_THROW(w.update(std::vector<double>{0.1, 0.2, 0.3}), std::invalid_argument);
  EXPECT_THROW(w.update(std::vector<double>{0.1, 0.2, 0.3, 1.5}), std::invalid_argument);
}

TEST(EntropyWindow, ReplayOfHundredBatchesMatchesOfflineMeans) {
  const int L = 3, H = 4, B = 2;
  EntropyWindow w(L, H);
  std::vector<BatchTraces> stored;
  for (std::uint64_t b = 0; b < 100; ++b) {
    BatchTraces batch(B);
    for (int s = 0; s < B; ++s) {
      for (int l = 0; l < L; ++l) {
        for (int h = 0; h < H; ++h) {
          AttentionTrace t{l, h, random_simplex(5, b * 1000 + static_cast<std::uint64_t>(s * 100 + l * 10 + h), 6), 0};
          t.entropy = head_entropy(t.row);
          batch[static_cast<std::size_t>(s)].push_back(std::move(t));
        }
      }
    }
    w.update(batch);
    stored.push_back(std::move(batch));
  }
  EXPECT_EQ(w.count(), 100);
  for (int l = 0; l < L; ++l) {
    long double layer_sum = 0;
    for (int h = 0; h < H; ++h) {
      long double s = 0;
      for (const auto& batch : stored) {
        long double per_batch = 0;
        for (const auto& sample : batch) per_batch += oracle_entropy(sample[static_cast<std::size_t>(l * H + h)].row);
        s += per_batch / B;
      }
      const double offline = static_cast<double>(s / 100);
      EXPECT_NEAR(w.head_mean(l, h), offline, 1e-12);
      layer_sum += offline;
    }
    EXPECT_NEAR(w.layer_mean(l), static_cast<double>(layer_sum / H), 1e-12);
    EXPECT_NEAR(w.layer_mean(l), layer_entropy(w.head_means(l), H), 1e-12);
  }
}

TEST(EntropyWindow, RejectsInconsistentTraceSets) {
  EntropyWindow w(1, 2);
  BatchTraces missing{{AttentionTrace{0, 0, {0.5, 0.5}, 1.0}}};
  EXPECT_THROW(w.update(missing), std::invalid_argument);
  BatchTraces swapped{{AttentionTrace{0, 1, {0.5, 0.5}, 1.0}, AttentionTrace{0, 0, {0.5, 0.5}, 1.0}}};
  EXPECT_THROW(w.update(swapped), std::invalid_argument);
  EXPECT_THROW(w.update(BatchTraces{}), std::invalid_argument);
  EXPECT_EQ(w.count(), 0);
}

TEST(EntropyCsv, FixedColumnsAndNineSignificantDigits) {
  EntropyWindow w(2, 2);
  w.update(std::vector<double>{1.0 / 3.0, 0.25, 0.0, 1.0});
  std::ostringstream heads, layers;
  write_head_entropy_rows(heads, 50, w);
  write_layer_entropy_rows(layers, 50, w);
  EXPECT_EQ(heads.str(), "50,0,0,0.333333333\n50,0,1,0.25\n50,1,0,0\n50,1,1,1\n");
  EXPECT_EQ(layers.str(), "50,0,0.291666667,0.00173611111\n50,1,0.5,0.25\n");
  EXPECT_STREQ(kHeadEntropyHeader, "step,layer,head,entropy_mean");
  EXPECT_STREQ(kLayerEntropyHeader, "step,layer,layer_entropy,intra_layer_variance");
}
