// SPDX-License-Identifier: Apache-2.0
#include "sgt/theory.hpp"

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <sstream>

using namespace sgt::theory;

namespace {

Mat uniform_causal(int n) {
  Mat a = Mat::Zero(n, n);
  for (int i = 0; i < n; ++i) a.row(i).head(i + 1).setConstant(1.0 / (i + 1));
  return a;
}

Mat random_causal(int n, std::uint64_t seed) { return causal_softmax_rows(causal_logits(n, seed, 0), 1.0); }

// Characteristic polynomial by Faddeev-LeVerrier, roots from the companion matrix.
std::vector<double> char_poly_roots(const Mat& m) {
  const int n = static_cast<int>(m.rows());
  std::vector<double> c(static_cast<std::size_t>(n + 1));
  c[static_cast<std::size_t>(n)] = 1.0;
  Mat mk = Mat::Zero(n, n);
  for (int k = 1; k <= n; ++k) {
    mk = m * mk + c[static_cast<std::size_t>(n - k + 1)] * Mat::Identity(n, n);
    c[static_cast<std::size_t>(n - k)] = -(m * mk).trace() / k;
  }
  Mat companion = Mat::Zero(n, n);
  for (int i = 1; i < n; ++i) companion(i, i - 1) = 1.0;
  for (int i = 0; i < n; ++i) companion(i, n - 1) = -c[static_cast<std::size_t>(i)];
  Eigen::EigenSolver<Mat> solver(companion);
  std::vector<double> roots;
  for (int i = 0; i < n; ++i) {
    EXPECT_LT(std::abs(solver.eigenvalues()[i].imag()), 1e-6);
    roots.push_back(solver.eigenvalues()[i].real());
  }
  std::sort(roots.begin(), roots.end());
  return roots;
}

}  // namespace

TEST(MixingMatrix, BetaOneAndIdentity) {
  const Mat a = random_causal(6, 1);
  EXPECT_EQ(build_mixing_matrix(a, 1.0).m(), a);
  for (double beta : {0.1, 0.5, 1.0}) EXPECT_LT((build_mixing_matrix(Mat::Identity(5, 5), beta).m() - Mat::Identity(5, 5)).cwiseAbs().maxCoeff(), 1e-15);
  const Mat m = build_mixing_matrix(a, 0.3).m();
  EXPECT_LT((m.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-12);
  EXPECT_LT(m.triangularView<Eigen::StrictlyUpper>().toDenseMatrix().cwiseAbs().maxCoeff(), 1e-300);
}

TEST(MixingMatrix, RejectsInvalidSources) {
  Mat upper = uniform_causal(3);
  upper(0, 2) = 0.5;
  EXPECT_THROW(build_mixing_matrix(upper, 0.5), std::invalid_argument);
  Mat not_stochastic = uniform_causal(3);
  not_stochastic(2, 2) = 0.9;
  EXPECT_THROW(build_mixing_matrix(not_stochastic, 0.5), std::invalid_argument);
  EXPECT_THROW(build_mixing_matrix(uniform_causal(3), 0.0), std::invalid_argument);
  EXPECT_THROW(build_mixing_matrix(uniform_causal(3), 1.5), std::invalid_argument);
}

TEST(MixingMatrix, AverageOfHeadMaps) {
  const std::vector<Mat> maps{random_causal(5, 2), random_causal(5, 3)};
  const Mat avg = average_attention(maps);
  EXPECT_LT((avg - 0.5 * (maps[0] + maps[1])).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_NO_THROW(build_mixing_matrix(avg, 0.5));
}

TEST(Synthesizer, HitsTargetEntropy) {
  const auto s = synthesize(causal_logits(32, 0, 0), 0.8);
  EXPECT_GE(s.mean_entropy, 0.78);
  EXPECT_LE(s.mean_entropy, 0.82);
  EXPECT_NEAR(mean_normalized_entropy(s.a_bar), s.mean_entropy, 1e-12);
  EXPECT_NO_THROW(build_mixing_matrix(s.a_bar, 0.5));
  EXPECT_THROW(synthesize(causal_logits(32, 0, 0), 1.5), std::invalid_argument);
}

TEST(ErrorDynamics, FixedPointAndContraction) {
  const Mat eps0 = causal_logits(6, 4, 1).leftCols(3);
  const auto id = simulate_error_dynamics(Mat::Identity(6, 6), eps0, 5);
  ASSERT_EQ(id.size(), 6u);
  for (double n : id) EXPECT_NEAR(n, eps0.norm(), 1e-14);
  const auto half = simulate_error_dynamics(0.5 * Mat::Identity(6, 6), eps0, 5);
  for (std::size_t k = 1; k < half.size(); ++k) EXPECT_NEAR(half[k], 0.5 * half[k - 1], 1e-14);
}

TEST(ErrorDynamics, MatchesNaiveRepeatedMultiplication) {
  const Mat m = build_mixing_matrix(random_causal(9, 5), 0.5).m();
  const Mat eps0 = causal_logits(9, 5, 2).leftCols(4) + Mat::Constant(9, 4, 0.3);
  const auto norms = simulate_error_dynamics(m, eps0, 20);
  ASSERT_EQ(norms.size(), 21u);
  for (int k = 0; k <= 20; ++k) {
    Mat e = eps0;
    for (int j = 0; j < k; ++j) {
      Mat next = Mat::Zero(9, 4);
      for (int r = 0; r < 9; ++r)
        for (int c = 0; c < 4; ++c)
          for (int s = 0; s < 9; ++s) next(r, c) += m(r, s) * e(s, c);
      e = next;
    }
    double sq = 0;
    for (int i = 0; i < e.size(); ++i) sq += e.data()[i] * e.data()[i];
    EXPECT_NEAR(norms[static_cast<std::size_t>(k)], std::sqrt(sq), 1e-10) << k;
  }
}

TEST(Eigenvalues, TriangularIdentity) {
  Mat a = Mat::Zero(2, 2);
  a << 0.2, 0, 0.7, 0.3;
  const auto ev = triangular_eigenvalues(a);
  EXPECT_EQ(ev[0], 0.2);
  EXPECT_EQ(ev[1], 0.3);
  Mat b = uniform_causal(3);
  b.row(2) << 0.3, 0.3, 0.4;
  const auto m = build_mixing_matrix(b, 0.5);
  EXPECT_NEAR(triangular_eigenvalues(m.m())[2], 0.7, 1e-15);
  const Eigen::VectorXd affine = (1 - 0.5) * Eigen::VectorXd::Ones(3) + 0.5 * b.diagonal();
  EXPECT_LT((triangular_eigenvalues(m.m()) - affine).cwiseAbs().maxCoeff(), 1e-15);
  Mat full = Mat::Ones(3, 3);
  EXPECT_THROW(triangular_eigenvalues(full), std::invalid_argument);
}

TEST(Eigenvalues, CharacteristicPolynomialRootsEqualDiagonal) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Mat m = build_mixing_matrix(random_causal(5, 10 + seed), 0.6).m();
    const auto roots = char_poly_roots(m);
    auto diag = triangular_eigenvalues(m);
    std::vector<double> d(diag.data(), diag.data() + diag.size());
    std::sort(d.begin(), d.end());
    for (int i = 0; i < 5; ++i) EXPECT_NEAR(roots[static_cast<std::size_t>(i)], d[static_cast<std::size_t>(i)], 1e-8) << seed;
  }
}

TEST(RowEntropy, Examples) {
  EXPECT_EQ(row_entropy_unnormalized(std::vector<double>{0, 1, 0}), 0.0);
  EXPECT_NEAR(row_entropy_unnormalized(std::vector<double>(5, 0.2)), std::log(5.0), 1e-15);
  const double e = row_entropy_unnormalized(std::vector<double>{0.7, 0.3});
  EXPECT_NEAR(e, -(0.7 * std::log(0.7) + 0.3 * std::log(0.3)), 1e-15);
  EXPECT_NEAR(e, 0.61086, 5e-6);
  EXPECT_THROW(row_entropy_unnormalized(std::vector<double>{1.1, -0.1}), std::invalid_argument);
}

TEST(LemmaBound, Examples) {
  for (int i : {1, 2, 9}) EXPECT_EQ(lemma_bound(0.0, i), 1.0);
  const double b2 = lemma_bound(std::log(2.0), 2);
  EXPECT_NEAR(b2, std::sqrt(0.5), 1e-15);
  EXPECT_NEAR(b2, 0.70711, 5e-6);
  EXPECT_LE(0.5, b2);
  const double e = row_entropy_unnormalized(std::vector<double>{0.9, 0.1});
  EXPECT_NEAR(e, 0.32508, 5e-6);
  const double b = lemma_bound(e, 2);
  EXPECT_NEAR(b, 0.84998, 5e-6);
  EXPECT_LT(b, 0.9);  // known counterexample to the bound
  for (double x : {0.1, 0.7, 2.3}) EXPECT_EQ(lemma_bound(x, 3), std::exp(-x / 3));
}

TEST(DiagonalOracle, Examples) {
  EXPECT_NEAR(max_diagonal_oracle(3, 0.0, 1e-4).max_diagonal, 1.0, 1e-12);
  const auto u = max_diagonal_oracle(2, std::log(2.0), 1e-4);
  EXPECT_NEAR(u.max_diagonal, 0.5, 1e-9);
  const auto o = max_diagonal_oracle(4, 1.0, 1e-3);
  // Family solution: p with -p ln p - (1-p) ln((1-p)/3) = 1.
  const double p = o.max_diagonal;
  EXPECT_NEAR(-p * std::log(p) - (1 - p) * std::log((1 - p) / 3), 1.0, 1e-10);
  EXPECT_GT(o.samples_in_band, 0);
  EXPECT_LE(o.sample_max, o.max_diagonal + 1e-3);
  EXPECT_LE(o.max_diagonal, lemma_bound(1.0, 4));  // holds at this point
  EXPECT_THROW(max_diagonal_oracle(4, 2.0, 1e-3), std::invalid_argument);
  EXPECT_THROW(max_diagonal_oracle(4, 1.0, 1e-5), std::invalid_argument);
}

TEST(TraceBound, UniformIdentityAndPeaked) {
  const auto u = trace_bound_check(uniform_causal(4));
  EXPECT_NEAR(u.trace, 2.08333, 5e-6);
  EXPECT_NEAR(u.mean_entropy, 0.79451, 5e-6);
  const double e_bar = (std::log(2.0) + std::log(3.0) + std::log(4.0)) / 4;
  EXPECT_NEAR(u.bound, 4 * std::exp(-e_bar / 4), 1e-12);
  EXPECT_NEAR(u.bound, 3.27942, 5e-6);
  EXPECT_TRUE(u.holds);
  const auto id = trace_bound_check(Mat::Identity(6, 6));
  EXPECT_EQ(id.trace, 6.0);
  EXPECT_EQ(id.mean_entropy, 0.0);
  EXPECT_EQ(id.bound, 6.0);
  EXPECT_TRUE(id.holds);
  Mat peaked = Mat::Zero(8, 8);
  for (int i = 0; i < 8; ++i) {
    peaked(i, i) = i == 0 ? 1.0 : 0.95;
    for (int j = 0; j < i; ++j) peaked(i, j) = 0.05 / i;
  }
  const auto pk = trace_bound_check(peaked);
  EXPECT_NEAR(pk.trace, 1.0 + 7 * 0.95, 1e-12);
  double e = 0;
  for (int i = 1; i < 8; ++i) e += -(0.95 * std::log(0.95) + 0.05 * std::log(0.05 / i));
  EXPECT_NEAR(pk.mean_entropy, e / 8, 1e-12);
  EXPECT_NEAR(pk.bound, 8 * std::exp(-pk.mean_entropy / 8), 1e-12);
  EXPECT_EQ(pk.holds, pk.trace <= pk.bound);
  EXPECT_GT(lemma_violations(peaked), 0);
  EXPECT_EQ(lemma_violations(uniform_causal(8)), 0);
}

TEST(Spearman, RanksAndTies) {
  EXPECT_NEAR(spearman(std::vector<double>{1, 2, 3, 4}, std::vector<double>{10, 20, 30, 40}), 1.0, 1e-15);
  EXPECT_NEAR(spearman(std::vector<double>{1, 2, 3, 4}, std::vector<double>{4, 3, 2, 1}), -1.0, 1e-15);
  // Hand-ranked with average ranks: x ranks [1, 2.5, 2.5, 4], y ranks [1, 3, 2, 4].
  EXPECT_NEAR(spearman(std::vector<double>{1, 2, 2, 3}, std::vector<double>{1, 3, 2, 4}), 0.9486832980505138, 1e-12);
}

TEST(EntropySweep, RankCorrelationAndCsv) {
  SweepConfig cfg;
  const auto r = entropy_sweep(cfg);
  ASSERT_EQ(r.rows.size(), 50u);
  EXPECT_LE(r.rank_correlation, -0.8);
  for (const auto& row : r.rows) {
    EXPECT_NEAR(row.mean_entropy, row.target_entropy, cfg.tolerance);
    EXPECT_GT(row.error_ratio, 0);
    EXPECT_LE(row.error_ratio, 1.0 + 1e-12);
  }
  std::ostringstream os;
  write_sweep_csv(os, r);
  std::istringstream in(os.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, kSweepHeader);
  int n = 0;
  while (std::getline(in, line)) ++n;
  EXPECT_EQ(n, 50);
  EXPECT_NE(sweep_summary_json(cfg, r).find("\"rank_correlation\""), std::string::npos);
}

TEST(LemmaMap, CellsReportHoldAndViolate) {
  const auto cells = lemma_map(4, 6, 1e-3);
  ASSERT_EQ(cells.size(), 3u * 6u);
  bool any_hold = false, any_violate = false;
  for (const auto& c : cells) {
    EXPECT_EQ(c.holds, c.oracle <= c.bound + 1e-12);
    EXPECT_EQ(c.bound, lemma_bound(c.entropy, c.i));
    any_hold |= c.holds;
    any_violate |= !c.holds;
  }
  EXPECT_TRUE(any_hold);
  EXPECT_TRUE(any_violate);
}
