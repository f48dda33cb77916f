// SPDX-License-Identifier: Apache-2.0
//
// Length-normalized attention entropy of the last query row, its layer mean,
// the spread of head entropies inside a layer and the running window read by
// the growth operator.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace sgt {

/// E = -(1/log N) * sum_j a_j log a_j with 0 log 0 = 0.
double head_entropy(std::span<const double> row);

/// Mean of per-head entropies (the layer-level statistic). Needs one value per head.
double layer_entropy(std::span<const double> head_entropies, int n_head);

/// Population variance; needs at least two heads.
double intra_layer_variance(std::span<const double> head_means);

struct AttentionTrace {
  int layer = 0;
  int head = 0;
  std::vector<double> row;
  double entropy = 0.0;
};

/// Traces for a batch: [sample][layer * n_head + head].
using BatchTraces = std::vector<std::vector<AttentionTrace>>;

class EntropyWindow {
 public:
  EntropyWindow() = default;
  EntropyWindow(int n_layer, int n_head);

  int n_layer() const { return n_layer_; }
  int n_head() const { return n_head_; }
  /// Number of batches accumulated since the last reset.
  std::int64_t count() const { return count_; }

  /// Adds one batch given as per-head entropies already averaged over the batch.
  void update(std::span<const double> batch_means);
  /// Averages per-sequence entropies across samples, then adds the batch.
  void update(const BatchTraces& traces);

  double head_mean(int layer, int head) const;
  std::vector<double> head_means(int layer) const;
  double layer_mean(int layer) const;
  std::vector<double> layer_means() const;

  void reset();

  const std::vector<double>& sums() const { return sums_; }
  void restore(std::vector<double> sums, std::int64_t count);

  friend bool operator==(const EntropyWindow&, const EntropyWindow&) = default;

 private:
  int n_layer_ = 0;
  int n_head_ = 0;
  std::int64_t count_ = 0;
  std::vector<double> sums_;
};

/// Rows "step,layer,head,entropy_mean" for one window snapshot.
void write_head_entropy_rows(std::ostream& out, std::int64_t step, const EntropyWindow& window);
/// Rows "step,layer,layer_entropy,intra_layer_variance".
void write_layer_entropy_rows(std::ostream& out, std::int64_t step, const EntropyWindow& window);

inline constexpr const char* kHeadEntropyHeader = "step,layer,head,entropy_mean";
inline constexpr const char* kLayerEntropyHeader = "step,layer,layer_entropy,intra_layer_variance";

}  // namespace sgt
