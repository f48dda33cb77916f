// SPDX-License-Identifier: Apache-2.0
#include "sgt/corpus.hpp"

#include "sgt/rng.hpp"

#include <cmath>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace sgt {

std::int64_t CorpusSplit::window_count(std::span<const int> tokens, int len) const {
  if (len < 1) throw std::invalid_argument("window length must be positive");
  return static_cast<std::int64_t>(tokens.size()) / len;
}

std::span<const int> CorpusSplit::window(std::span<const int> tokens, int len, std::int64_t index) const {
  if (index < 0 || index >= window_count(tokens, len)) throw std::out_of_range("corpus window index");
  return tokens.subspan(static_cast<std::size_t>(index * len), static_cast<std::size_t>(len));
}

CorpusSplit split_bytes(std::span<const unsigned char> bytes, double train_fraction, int seq_len) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw std::invalid_argument("train fraction must be in (0, 1)");
  if (bytes.size() < static_cast<std::size_t>(100) * static_cast<std::size_t>(seq_len)) {
    throw std::invalid_argument("corpus too small: need at least 100 * max_seq_len bytes");
  }
  const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(bytes.size())));
  CorpusSplit s;
  s.train.assign(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.validation.assign(bytes.begin() + static_cast<std::ptrdiff_t>(n_train), bytes.end());
  return s;
}

CorpusSplit ingest_corpus(const std::vector<std::string>& paths, double train_fraction, int seq_len) {
  if (paths.empty()) throw std::invalid_argument("no corpus paths given");
  std::vector<unsigned char> bytes;
  for (const auto& p : paths) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read corpus file: " + p);
    bytes.insert(bytes.end(), std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  return split_bytes(bytes, train_fraction, seq_len);
}

std::int64_t batch_window(std::uint64_t seed, std::int64_t step, int batch_size, int b, std::int64_t n_windows) {
  if (n_windows < 1) throw std::invalid_argument("no training windows");
  CounterRng rng(seed, "batch", static_cast<std::uint64_t>(step) * static_cast<std::uint64_t>(batch_size) +
                                    static_cast<std::uint64_t>(b));
  return static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n_windows)));
}

}  // namespace sgt
