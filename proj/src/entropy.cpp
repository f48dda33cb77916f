// SPDX-License-Identifier: Apache-2.0
#include "sgt/entropy.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>
#include <string>

namespace sgt {

double head_entropy(std::span<const double> row) {
  if (row.size() < 2) throw std::invalid_argument("head_entropy: need N >= 2 (log N normalizer is zero)");
  double total = 0.0;
  double h = 0.0;
  for (double a : row) {
    if (!(a >= 0.0)) throw std::invalid_argument("head_entropy: negative or NaN attention weight");
    total += a;
    if (a > 0.0) h -= a * std::log(a);
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("head_entropy: row does not sum to 1");
  return h / std::log(static_cast<double>(row.size()));
}

double layer_entropy(std::span<const double> head_entropies, int n_head) {
  if (n_head < 1 || static_cast<int>(head_entropies.size()) != n_head) {
    throw std::invalid_argument("layer_entropy: expected one entropy per head");
  }
  double s = 0.0;
  for (double e : head_entropies) s += e;
  return s / n_head;
}

double intra_layer_variance(std::span<const double> head_means) {
  if (head_means.size() < 2) throw std::invalid_argument("intra_layer_variance: need at least two heads");
  double mean = 0.0;
  for (double e : head_means) mean += e;
  mean /= static_cast<double>(head_means.size());
  double v = 0.0;
  for (double e : head_means) v += (e - mean) * (e - mean);
  return v / static_cast<double>(head_means.size());
}

EntropyWindow::EntropyWindow(int n_layer, int n_head)
    : n_layer_(n_layer), n_head_(n_head), sums_(static_cast<std::size_t>(n_layer * n_head), 0.0) {
  if (n_layer < 1 || n_head < 1) throw std::invalid_argument("EntropyWindow: positive extents required");
}

void EntropyWindow::update(std::span<const double> batch_means) {
  if (batch_means.size() != sums_.size()) throw std::invalid_argument("window_update: trace set does not cover every head");
  for (std::size_t i = 0; i < sums_.size(); ++i) {
    if (!(batch_means[i] >= 0.0 && batch_means[i] <= 1.0 + 1e-12)) {
      throw std::invalid_argument("window_update: entropy outside [0, 1]");
    }
    sums_[i] += batch_means[i];
  }
  ++count_;
}

void EntropyWindow::update(const BatchTraces& traces) {
  if (traces.empty()) throw std::invalid_argument("window_update: empty batch");
  std::vector<double> means(sums_.size(), 0.0);
  for (const auto& sample : traces) {
    if (sample.size() != sums_.size()) throw std::invalid_argument("window_update: trace set does not cover every head");
    for (std::size_t i = 0; i < sample.size(); ++i) {
      const auto& t = sample[i];
      if (t.layer * n_head_ + t.head != static_cast<int>(i)) {
        throw std::invalid_argument("window_update: traces out of (layer, head) order");
      }
      means[i] += t.entropy;
    }
  }
  for (double& m : means) m /= static_cast<double>(traces.size());
  update(means);
}

double EntropyWindow::head_mean(int layer, int head) const {
  if (count_ == 0) throw std::logic_error("EntropyWindow: empty window");
  if (layer < 0 || layer >= n_layer_ || head < 0 || head >= n_head_) throw std::out_of_range("EntropyWindow index");
  return sums_[static_cast<std::size_t>(layer * n_head_ + head)] / static_cast<double>(count_);
}

std::vector<double> EntropyWindow::head_means(int layer) const {
  std::vector<double> out(static_cast<std::size_t>(n_head_));
  for (int h = 0; h < n_head_; ++h) out[static_cast<std::size_t>(h)] = head_mean(layer, h);
  return out;
}

double EntropyWindow::layer_mean(int layer) const {
  const auto m = head_means(layer);
  return layer_entropy(m, n_head_);
}

std::vector<double> EntropyWindow::layer_means() const {
  std::vector<double> out(static_cast<std::size_t>(n_layer_));
  for (int l = 0; l < n_layer_; ++l) out[static_cast<std::size_t>(l)] = layer_mean(l);
  return out;
}

void EntropyWindow::reset() {
  std::fill(sums_.begin(), sums_.end(), 0.0);
  count_ = 0;
}

void EntropyWindow::restore(std::vector<double> sums, std::int64_t count) {
  if (sums.size() != sums_.size() || count < 0) throw std::invalid_argument("EntropyWindow::restore: shape mismatch");
  sums_ = std::move(sums);
  count_ = count;
}

namespace {

std::string g9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

void write_head_entropy_rows(std::ostream& out, std::int64_t step, const EntropyWindow& window) {
  for (int l = 0; l < window.n_layer(); ++l) {
    for (int h = 0; h < window.n_head(); ++h) {
      out << step << ',' << l << ',' << h << ',' << g9(window.head_mean(l, h)) << '\n';
    }
  }
}

void write_layer_entropy_rows(std::ostream& out, std::int64_t step, const EntropyWindow& window) {
  for (int l = 0; l < window.n_layer(); ++l) {
    const auto m = window.head_means(l);
    const double var = window.n_head() >= 2 ? intra_layer_variance(m) : 0.0;
    out << step << ',' << l << ',' << g9(layer_entropy(m, window.n_head())) << ',' << g9(var) << '\n';
  }
}

}  // namespace sgt
