// SPDX-License-Identifier: Apache-2.0
//
// Progressive growth of looping depth (architectural state and the growth
// operator applied at decision steps).

#pragma once

#include "sgt/entropy.hpp"
#include "sgt/loop.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace sgt {

enum class GrowthDirection { kDeepToShallow, kShallowToDeep };
enum class Phase { kWarmup, kGrowing, kFixed };

const char* to_string(Phase p);
const char* to_string(GrowthDirection d);
GrowthDirection parse_direction(const std::string& s);

struct GrowthConfig {
  std::int64_t t_start = 250;
  std::int64_t interval = 250;  // delta t
  int target_layers = 3;        // L
  int max_depth = 3;            // K_max
  int heads_per_layer = 2;      // h
  std::vector<int> excluded = {0};
  GrowthDirection direction = GrowthDirection::kDeepToShallow;

  /// Throws ConfigError against a model with n_layer layers and n_head heads.
  void validate(int n_layer, int n_head) const;

  friend bool operator==(const GrowthConfig&, const GrowthConfig&) = default;
};

struct ArchState {
  std::vector<int> active;              // activation order
  std::optional<int> growing;           // l*
  std::vector<int> depth;               // K_l per layer, 0 when inactive
  std::vector<std::vector<int>> heads;  // S_l per layer, empty when inactive

  static ArchState empty(int n_layer);
  int n_layer() const { return static_cast<int>(depth.size()); }
  bool is_active(int layer) const;

  /// Head-loop directives implied by the state.
  LoopPlan plan() const;

  friend bool operator==(const ArchState&, const ArchState&) = default;
};

Phase phase_of(std::int64_t t, const GrowthConfig& config, const ArchState& state);

bool is_decision_step(std::int64_t t, const GrowthConfig& config);

/// Top-L layers by entropy among the non-excluded ones; ties go to the deeper
/// layer. Returned in ranking order.
std::vector<int> candidate_pool(std::span<const double> layer_entropies, int target_layers,
                                std::span<const int> excluded);

/// Next layer to activate under the direction rule, or nullopt.
std::optional<int> select_new_layer(std::span<const int> pool, std::span<const int> active, int n_layer,
                                    GrowthDirection direction);

struct GrowthEvent {
  enum class Kind { kActivate, kDeepen, kStall, kFreeze };

  std::int64_t step = 0;
  Kind kind = Kind::kStall;
  std::optional<int> layer;
  int depth = 0;
  std::vector<int> heads;
  std::vector<double> layer_entropies;

  std::string to_json() const;
  friend bool operator==(const GrowthEvent&, const GrowthEvent&) = default;
};

const char* to_string(GrowthEvent::Kind k);

struct GrowthOutcome {
  ArchState state;
  std::vector<GrowthEvent> events;
};

/// One application of the growth operator at decision step t. The window is
/// read, then reset.
GrowthOutcome growth_step(std::int64_t t, EntropyWindow& window, const GrowthConfig& config, const ArchState& state);

/// Same decision from explicit window statistics (replay form).
GrowthOutcome growth_decide(std::int64_t t, std::span<const double> layer_entropies,
                            const std::vector<std::vector<double>>& head_entropies, const GrowthConfig& config,
                            const ArchState& state);

}  // namespace sgt
