// SPDX-License-Identifier: Apache-2.0
//
// Error dynamics under the effective mixing matrix M = (1 - beta) I + beta A,
// the triangular eigenvalue identity, the entropy bound on diagonal entries
// and the trace bound.

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace sgt::theory {

using Mat = Eigen::MatrixXd;

struct MixingMatrix {
  Mat a_bar;  // N x N row-stochastic, lower-triangular
  double beta = 0.5;

  int n() const { return static_cast<int>(a_bar.rows()); }
  Mat m() const;
};

/// Checks causal row-stochastic structure and beta in (0, 1].
MixingMatrix build_mixing_matrix(Mat a_bar, double beta);

/// Mean of a set of attention matrices (for example a head set's maps).
Mat average_attention(std::span<const Mat> maps);

/// Causal softmax of logits / temperature over the lower triangle.
Mat causal_softmax_rows(const Mat& logits, double temperature);

/// Mean length-normalized entropy over rows with at least two positions.
double mean_normalized_entropy(const Mat& a);

/// Standard-normal logits on the lower triangle from stream (seed, index).
Mat causal_logits(int n, std::uint64_t seed, std::uint64_t index);

struct Synthesized {
  Mat a_bar;
  double temperature = 0;
  double mean_entropy = 0;
};

/// Bisection on log temperature until the mean normalized entropy is within
/// `tolerance` of the target. Throws if unreachable.
Synthesized synthesize(const Mat& logits, double target_entropy, double tolerance = 0.02);

/// Frobenius norms of eps^(k) = M^k eps^(0) for k = 0..K.
std::vector<double> simulate_error_dynamics(const Mat& m, const Mat& eps0, int k);

/// Diagonal of a lower-triangular matrix.
Eigen::VectorXd triangular_eigenvalues(const Mat& m, double tol = 0.0);

/// Shannon entropy in nats with 0 log 0 = 0.
double row_entropy_unnormalized(std::span<const double> row);

/// e^{-E / i}.
double lemma_bound(double entropy, int i);

struct DiagonalOracle {
  double max_diagonal = 0;  // exact maximum over the one-parameter family
  double sample_max = 0;    // largest coordinate among in-band random simplex points
  std::int64_t samples_in_band = 0;
};

/// Largest diagonal entry of a length-i simplex row with entropy E. The family
/// (p, (1-p)/(i-1), ...) is solved for entropy exactly E with p >= 1/i; random
/// simplex samples within `resolution` of E are reported alongside.
DiagonalOracle max_diagonal_oracle(int i, double entropy, double resolution, int samples = 200000,
                                   std::uint64_t seed = 0);

struct TraceCheck {
  double trace = 0;
  double mean_entropy = 0;  // mean unnormalized row entropy
  double bound = 0;
  bool holds = false;
};

TraceCheck trace_bound_check(const Mat& a_bar);

/// Rows i >= 2 where A_ii exceeds e^{-E_i / i}.
int lemma_violations(const Mat& a_bar);

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

struct SweepConfig {
  int n = 32;
  double beta = 0.5;
  int k = 10;
  int d = 8;                   // error columns
  double entropy_lo = 0.2;
  double entropy_hi = 0.95;
  int count = 50;
  std::uint64_t seed = 0;
  bool independent_logits = false;
  double tolerance = 0.02;
};

struct SweepRow {
  int n = 0;
  double beta = 0;
  double target_entropy = 0;
  double mean_entropy = 0;
  double error_ratio = 0;
  double trace = 0;
  double trace_bound = 0;
  int lemma_violation_count = 0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  double rank_correlation = 0;
};

/// Synthesizes `count` matrices at evenly spaced target entropies and records
/// the K-step error ratio of each. The initial error has a zero first row:
/// row 1 of M is fixed at [1], so its error never contracts for any entropy.
SweepResult entropy_sweep(const SweepConfig& config);

inline constexpr const char* kSweepHeader = "N,beta,mean_entropy,error_ratio_K,trace,trace_bound,lemma_violations_count";

void write_sweep_csv(std::ostream& out, const SweepResult& result);
std::string sweep_summary_json(const SweepConfig& config, const SweepResult& result);

struct LemmaCell {
  int i = 0;
  double entropy = 0;
  double oracle = 0;
  double bound = 0;
  bool holds = false;
};

/// Hold/violate map of the diagonal bound over i in [2, max_i] and `steps`
/// entropies per i spanning [0, ln i].
std::vector<LemmaCell> lemma_map(int max_i, int steps, double resolution);

inline constexpr const char* kLemmaHeader = "i,entropy,oracle_max_diagonal,bound,holds";
void write_lemma_csv(std::ostream& out, std::span<const LemmaCell> cells);

}  // namespace sgt::theory
