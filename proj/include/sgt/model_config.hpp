// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace sgt {

/// Raised for invalid configurations; the CLI maps it to exit code 2.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class FfnGate { kSilu, kGelu };

struct ModelConfig {
  int n_layer = 6;
  int n_head = 8;
  int d_model = 256;
  int d_head = 32;
  int d_ff = 1024;
  int vocab_size = 256;
  int max_seq_len = 256;
  double rope_base = 10000.0;
  double norm_eps = 1e-6;
  FfnGate ffn_gate = FfnGate::kSilu;

  void validate() const {
    if (n_layer < 1 || n_head < 1 || d_model < 1 || d_head < 1 || d_ff < 1 || vocab_size < 1) {
      throw ConfigError("model extents must be positive");
    }
    if (d_model % n_head != 0) throw ConfigError("d_model must be divisible by n_head");
    if (n_head * d_head != d_model) throw ConfigError("n_head * d_head must equal d_model");
    if (d_head % 2 != 0) throw ConfigError("d_head must be even for rotary positions");
    if (max_seq_len < 2) throw ConfigError("max_seq_len must be at least 2");
    if (!(rope_base > 1.0)) throw ConfigError("rope_base must exceed 1");
    if (!(norm_eps > 0.0)) throw ConfigError("norm_eps must be positive");
  }

  /// Laptop-scale default used by the acceptance runs.
  static ModelConfig desk() { return {}; }

  /// 16 layers, 16 heads, width 1024 with a padded 50304-token vocabulary.
  static ModelConfig reference_573m() {
    ModelConfig c;
    c.n_layer = 16;
    c.n_head = 16;
    c.d_model = 1024;
    c.d_head = 64;
    c.d_ff = 8192;
    c.vocab_size = 50304;
    c.max_seq_len = 4096;
    return c;
  }
};

inline bool operator==(const ModelConfig& a, const ModelConfig& b) {
  return a.n_layer == b.n_layer && a.n_head == b.n_head && a.d_model == b.d_model &&
         a.d_head == b.d_head && a.d_ff == b.d_ff && a.vocab_size == b.vocab_size &&
         a.max_seq_len == b.max_seq_len && a.rope_base == b.rope_base && a.norm_eps == b.norm_eps &&
         a.ffn_gate == b.ffn_gate;
}

}  // namespace sgt
