// SPDX-License-Identifier: Apache-2.0
//
// Byte-level corpus with a contiguous-tail validation split.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace sgt {

struct CorpusSplit {
  std::vector<int> train;
  std::vector<int> validation;

  /// Non-overlapping windows of `len` tokens.
  std::int64_t window_count(std::span<const int> tokens, int len) const;
  std::span<const int> window(std::span<const int> tokens, int len, std::int64_t index) const;
  std::int64_t train_windows(int len) const { return window_count(train, len); }
  std::span<const int> train_window(int len, std::int64_t i) const { return window(train, len, i); }
};

/// Reads and concatenates the files as bytes; the last (1 - train_fraction)
/// of the bytes becomes the validation split.
CorpusSplit ingest_corpus(const std::vector<std::string>& paths, double train_fraction, int seq_len);

/// Same, from bytes already in memory.
CorpusSplit split_bytes(std::span<const unsigned char> bytes, double train_fraction, int seq_len);

/// Window index of sample b in the batch of step t (1-based); a pure function
/// of (seed, t, b).
std::int64_t batch_window(std::uint64_t seed, std::int64_t step, int batch_size, int b, std::int64_t n_windows);

}  // namespace sgt
