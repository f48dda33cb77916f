// SPDX-License-Identifier: Apache-2.0
#include "sgt/theory.hpp"

#include "sgt/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace sgt::theory {

Mat MixingMatrix::m() const {
  return (1.0 - beta) * Mat::Identity(n(), n()) + beta * a_bar;
}

MixingMatrix build_mixing_matrix(Mat a_bar, double beta) {
  if (!(beta > 0.0 && beta <= 1.0)) throw std::invalid_argument("beta must lie in (0, 1]");
  if (a_bar.rows() < 1 || a_bar.rows() != a_bar.cols()) throw std::invalid_argument("A must be square");
  for (Eigen::Index i = 0; i < a_bar.rows(); ++i) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < a_bar.cols(); ++j) {
      const double v = a_bar(i, j);
      if (!std::isfinite(v) || v < 0.0) throw std::invalid_argument("A entries must be finite and nonnegative");
      if (j > i && v != 0.0) throw std::invalid_argument("A must be lower-triangular (causal support)");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-9) throw std::invalid_argument("A rows must sum to 1");
  }
  return {std::move(a_bar), beta};
}

Mat average_attention(std::span<const Mat> maps) {
  if (maps.empty()) throw std::invalid_argument("average_attention: empty head set");
  Mat out = Mat::Zero(maps[0].rows(), maps[0].cols());
  for (const auto& m : maps) {
    if (m.rows() != out.rows() || m.cols() != out.cols()) throw std::invalid_argument("average_attention: shapes");
    out += m;
  }
  return out / static_cast<double>(maps.size());
}

Mat causal_softmax_rows(const Mat& logits, double temperature) {
  const Eigen::Index n = logits.rows();
  Mat a = Mat::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j <= i; ++j) mx = std::max(mx, logits(i, j) / temperature);
    double z = 0.0;
    for (Eigen::Index j = 0; j <= i; ++j) {
      a(i, j) = std::exp(logits(i, j) / temperature - mx);
      z += a(i, j);
    }
    for (Eigen::Index j = 0; j <= i; ++j) a(i, j) /= z;
  }
  return a;
}

double row_entropy_unnormalized(std::span<const double> row) {
  double h = 0.0;
  for (double a : row) {
    if (!(a >= 0.0)) throw std::invalid_argument("row_entropy_unnormalized: negative entry");
    if (a > 0.0) h -= a * std::log(a);
  }
  return h;
}

namespace {

double row_entropy(const Mat& a, Eigen::Index i) {
  std::vector<double> r(static_cast<std::size_t>(i + 1));
  for (Eigen::Index j = 0; j <= i; ++j) r[static_cast<std::size_t>(j)] = a(i, j);
  return row_entropy_unnormalized(r);
}

}  // namespace

double mean_normalized_entropy(const Mat& a) {
  if (a.rows() < 2) throw std::invalid_argument("mean_normalized_entropy: need N >= 2");
  double s = 0.0;
  for (Eigen::Index i = 1; i < a.rows(); ++i) s += row_entropy(a, i) / std::log(static_cast<double>(i + 1));
  return s / static_cast<double>(a.rows() - 1);
}

Mat causal_logits(int n, std::uint64_t seed, std::uint64_t index) {
  CounterRng rng(seed, "theory:logits", index);
  Mat z = Mat::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) z(i, j) = rng.normal();
  }
  return z;
}

Synthesized synthesize(const Mat& logits, double target, double tolerance) {
  if (!(target > 0.0 && target <= 1.0)) throw std::invalid_argument("target entropy must lie in (0, 1]");
  auto eval = [&](double log_t) { return mean_normalized_entropy(causal_softmax_rows(logits, std::exp(log_t))); };
  double lo = std::log(1e-4);
  double hi = std::log(1e4);
  // Entropy rises monotonically with temperature for a fixed logit field.
  double mid = 0.5 * (lo + hi);
  double e = eval(mid);
  for (int it = 0; it < 200 && std::abs(e - target) > 1e-6; ++it) {
    if (e < target) lo = mid; else hi = mid;
    mid = 0.5 * (lo + hi);
    e = eval(mid);
  }
  if (std::abs(e - target) > tolerance) {
    throw std::invalid_argument("unreachable target entropy " + std::to_string(target));
  }
  return {causal_softmax_rows(logits, std::exp(mid)), std::exp(mid), e};
}

std::vector<double> simulate_error_dynamics(const Mat& m, const Mat& eps0, int k) {
  if (k < 1) throw std::invalid_argument("simulate_error_dynamics: K must be >= 1");
  if (m.rows() != m.cols() || m.cols() != eps0.rows()) throw std::invalid_argument("simulate_error_dynamics: shapes");
  if (!eps0.allFinite()) throw std::invalid_argument("simulate_error_dynamics: non-finite initial error");
  std::vector<double> norms{eps0.norm()};
  Mat e = eps0;
  for (int s = 0; s < k; ++s) {
    e = m * e;
    norms.push_back(e.norm());
  }
  return norms;
}

Eigen::VectorXd triangular_eigenvalues(const Mat& m, double tol) {
  if (m.rows() != m.cols()) throw std::invalid_argument("triangular_eigenvalues: square matrix required");
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < m.cols(); ++j) {
      if (std::abs(m(i, j)) > tol) throw std::invalid_argument("triangular_eigenvalues: matrix is not lower-triangular");
    }
  }
  return m.diagonal();
}

double lemma_bound(double entropy, int i) {
  if (entropy < 0.0 || i < 1) throw std::invalid_argument("lemma_bound: need E >= 0 and i >= 1");
  return std::exp(-entropy / i);
}

namespace {

double family_entropy(int i, double p) {
  const double q = (1.0 - p) / (i - 1);
  double h = p > 0 ? -p * std::log(p) : 0.0;
  if (q > 0) h -= (1.0 - p) * std::log(q);
  return h;
}

}  // namespace

DiagonalOracle max_diagonal_oracle(int i, double entropy, double resolution, int samples, std::uint64_t seed) {
  if (i < 1) throw std::invalid_argument("max_diagonal_oracle: i must be >= 1");
  if (!(resolution >= 1e-4)) throw std::invalid_argument("max_diagonal_oracle: resolution must be >= 1e-4");
  const double max_e = std::log(static_cast<double>(i));
  if (entropy < 0.0 || entropy > max_e + 1e-12) throw std::invalid_argument("max_diagonal_oracle: infeasible entropy");
  DiagonalOracle out;
  if (i == 1) {
    out.max_diagonal = out.sample_max = 1.0;
    return out;
  }
  // The family's entropy falls monotonically from ln i at p = 1/i to 0 at p = 1.
  double lo = 1.0 / i;
  double hi = 1.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (family_entropy(i, mid) > entropy) lo = mid; else hi = mid;
  }
  out.max_diagonal = 0.5 * (lo + hi);

  CounterRng rng(seed, "theory:simplex", static_cast<std::uint64_t>(i));
  std::vector<double> x(static_cast<std::size_t>(i));
  for (int s = 0; s < samples; ++s) {
    double total = 0.0;
    // Exponential spacings raised to a random power spread samples from
    // near-uniform to near-one-hot rows.
    const double sharp = std::exp(4.0 * rng.uniform());
    for (auto& v : x) {
      v = std::pow(-std::log(1.0 - rng.uniform()), sharp);
      total += v;
    }
    for (auto& v : x) v /= total;
    if (std::abs(row_entropy_unnormalized(x) - entropy) <= resolution) {
      ++out.samples_in_band;
      out.sample_max = std::max(out.sample_max, *std::max_element(x.begin(), x.end()));
    }
  }
  return out;
}

TraceCheck trace_bound_check(const Mat& a_bar) {
  TraceCheck c;
  const Eigen::Index n = a_bar.rows();
  c.trace = a_bar.trace();
  double s = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) s += row_entropy(a_bar, i);
  c.mean_entropy = s / static_cast<double>(n);
  c.bound = static_cast<double>(n) * std::exp(-c.mean_entropy / static_cast<double>(n));
  c.holds = c.trace <= c.bound + 1e-12;
  return c;
}

int lemma_violations(const Mat& a_bar) {
  int v = 0;
  for (Eigen::Index i = 1; i < a_bar.rows(); ++i) {
    if (a_bar(i, i) > lemma_bound(row_entropy(a_bar, i), static_cast<int>(i + 1))) ++v;
  }
  return v;
}

namespace {

std::vector<double> ranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("spearman: need two equal-length samples");
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) throw std::invalid_argument("spearman: constant sample");
  return sxy / std::sqrt(sxx * syy);
}

SweepResult entropy_sweep(const SweepConfig& cfg) {
  if (cfg.count < 2 || cfg.n < 2 || cfg.k < 1 || cfg.d < 1) throw std::invalid_argument("entropy_sweep: bad sizes");
  if (!(cfg.entropy_lo > 0 && cfg.entropy_lo <= cfg.entropy_hi && cfg.entropy_hi <= 1)) {
    throw std::invalid_argument("entropy_sweep: bad entropy range");
  }
  CounterRng rng(cfg.seed, "theory:eps0");
  Mat eps0(cfg.n, cfg.d);
  for (Eigen::Index i = 0; i < eps0.size(); ++i) eps0.data()[i] = rng.normal();
  eps0.row(0).setZero();
  const Mat shared = causal_logits(cfg.n, cfg.seed, 0);

  SweepResult out;
  std::vector<double> ent, ratio;
  for (int s = 0; s < cfg.count; ++s) {
    const double target = cfg.entropy_lo + (cfg.entropy_hi - cfg.entropy_lo) * s / (cfg.count - 1);
    const Mat logits = cfg.independent_logits ? causal_logits(cfg.n, cfg.seed, static_cast<std::uint64_t>(s + 1)) : shared;
    const auto syn = synthesize(logits, target, cfg.tolerance);
    const auto mm = build_mixing_matrix(syn.a_bar, cfg.beta);
    const auto norms = simulate_error_dynamics(mm.m(), eps0, cfg.k);
    const auto tc = trace_bound_check(mm.a_bar);
    SweepRow row;
    row.n = cfg.n;
    row.beta = cfg.beta;
    row.target_entropy = target;
    row.mean_entropy = syn.mean_entropy;
    row.error_ratio = norms.back() / norms.front();
    row.trace = tc.trace;
    row.trace_bound = tc.bound;
    row.lemma_violation_count = lemma_violations(mm.a_bar);
    out.rows.push_back(row);
    ent.push_back(row.mean_entropy);
    ratio.push_back(row.error_ratio);
  }
  out.rank_correlation = spearman(ent, ratio);
  return out;
}

namespace {

std::string g9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

void write_sweep_csv(std::ostream& out, const SweepResult& r) {
  out << kSweepHeader << '\n';
  for (const auto& row : r.rows) {
    out << row.n << ',' << g9(row.beta) << ',' << g9(row.mean_entropy) << ',' << g9(row.error_ratio) << ','
        << g9(row.trace) << ',' << g9(row.trace_bound) << ',' << row.lemma_violation_count << '\n';
  }
}

std::string sweep_summary_json(const SweepConfig& c, const SweepResult& r) {
  std::ostringstream os;
  os << "{\"rows\":" << r.rows.size() << ",\"N\":" << c.n << ",\"beta\":" << g9(c.beta) << ",\"K\":" << c.k
     << ",\"seed\":" << c.seed << ",\"independent_logits\":" << (c.independent_logits ? "true" : "false")
     << ",\"rank_correlation\":" << g9(r.rank_correlation) << "}";
  return os.str();
}

std::vector<LemmaCell> lemma_map(int max_i, int steps, double resolution) {
  if (max_i < 2 || steps < 2) throw std::invalid_argument("lemma_map: need max_i >= 2 and steps >= 2");
  std::vector<LemmaCell> cells;
  for (int i = 2; i <= max_i; ++i) {
    for (int s = 0; s < steps; ++s) {
      LemmaCell c;
      c.i = i;
      c.entropy = std::log(static_cast<double>(i)) * s / (steps - 1);
      c.oracle = max_diagonal_oracle(i, c.entropy, resolution, 0).max_diagonal;
      c.bound = lemma_bound(c.entropy, i);
      c.holds = c.oracle <= c.bound + 1e-12;
      cells.push_back(c);
    }
  }
  return cells;
}

void write_lemma_csv(std::ostream& out, std::span<const LemmaCell> cells) {
  out << kLemmaHeader << '\n';
  for (const auto& c : cells) {
    out << c.i << ',' << g9(c.entropy) << ',' << g9(c.oracle) << ',' << g9(c.bound) << ',' << (c.holds ? 1 : 0) << '\n';
  }
}

}  // namespace sgt::theory
