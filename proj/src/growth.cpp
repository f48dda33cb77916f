// SPDX-License-Identifier: Apache-2.0
#include "sgt/growth.hpp"

#include "sgt/model_config.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace sgt {

const char* to_string(Phase p) {
  switch (p) {
    case Phase::kWarmup: return "warmup";
    case Phase::kGrowing: return "growing";
    case Phase::kFixed: return "fixed";
  }
  return "?";
}

const char* to_string(GrowthDirection d) {
  return d == GrowthDirection::kDeepToShallow ? "deep_to_shallow" : "shallow_to_deep";
}

GrowthDirection parse_direction(const std::string& s) {
  if (s == "deep_to_shallow" || s == "d2s") return GrowthDirection::kDeepToShallow;
  if (s == "shallow_to_deep" || s == "s2d") return GrowthDirection::kShallowToDeep;
  throw ConfigError("unknown growth direction: " + s);
}

const char* to_string(GrowthEvent::Kind k) {
  switch (k) {
    case GrowthEvent::Kind::kActivate: return "activate";
    case GrowthEvent::Kind::kDeepen: return "deepen";
    case GrowthEvent::Kind::kStall: return "stall";
    case GrowthEvent::Kind::kFreeze: return "freeze";
  }
  return "?";
}

void GrowthConfig::validate(int n_layer, int n_head) const {
  if (t_start < 1) throw ConfigError("t_start must be >= 1");
  if (interval < 1) throw ConfigError("growth interval must be >= 1");
  if (max_depth < 1) throw ConfigError("K_max must be >= 1");
  if (heads_per_layer < 1 || heads_per_layer > n_head) throw ConfigError("h must be in [1, n_head]");
  std::vector<int> ex = excluded;
  std::sort(ex.begin(), ex.end());
  if (std::adjacent_find(ex.begin(), ex.end()) != ex.end()) throw ConfigError("duplicate excluded layer");
  for (int l : ex) {
    if (l < 0 || l >= n_layer) throw ConfigError("excluded layer out of range");
  }
  if (target_layers < 1 || target_layers > n_layer - static_cast<int>(ex.size())) {
    throw ConfigError("L must be in [1, n_layer - |excluded|]");
  }
}

ArchState ArchState::empty(int n_layer) {
  ArchState s;
  s.depth.assign(static_cast<std::size_t>(n_layer), 0);
  s.heads.assign(static_cast<std::size_t>(n_layer), {});
  return s;
}

bool ArchState::is_active(int layer) const {
  return std::find(active.begin(), active.end(), layer) != active.end();
}

LoopPlan ArchState::plan() const {
  LoopPlan p(depth.size());
  for (int l : active) {
    const auto i = static_cast<std::size_t>(l);
    p[i] = LoopDirective::head_loop(heads[i], depth[i]);
  }
  return p;
}

Phase phase_of(std::int64_t t, const GrowthConfig& config, const ArchState& state) {
  if (t < 1) throw std::invalid_argument("phase_of: t must be >= 1");
  if (t < config.t_start) return Phase::kWarmup;
  if (static_cast<int>(state.active.size()) == config.target_layers) {
    const bool all_max = std::all_of(state.active.begin(), state.active.end(), [&](int l) {
      return state.depth[static_cast<std::size_t>(l)] == config.max_depth;
    });
    if (all_max) return Phase::kFixed;
  }
  return Phase::kGrowing;
}

bool is_decision_step(std::int64_t t, const GrowthConfig& config) {
  return t >= config.t_start && (t - config.t_start) % config.interval == 0;
}

std::vector<int> candidate_pool(std::span<const double> layer_entropies, int target_layers,
                                std::span<const int> excluded) {
  std::vector<int> eligible;
  for (int l = 0; l < static_cast<int>(layer_entropies.size()); ++l) {
    if (std::find(excluded.begin(), excluded.end(), l) == excluded.end()) eligible.push_back(l);
  }
  if (target_layers < 1 || static_cast<int>(eligible.size()) < target_layers) {
    throw std::invalid_argument("candidate_pool: fewer eligible layers than L");
  }
  std::stable_sort(eligible.begin(), eligible.end(), [&](int a, int b) {
    const double ea = layer_entropies[static_cast<std::size_t>(a)];
    const double eb = layer_entropies[static_cast<std::size_t>(b)];
    if (ea != eb) return ea > eb;
    return a > b;
  });
  eligible.resize(static_cast<std::size_t>(target_layers));
  return eligible;
}

std::optional<int> select_new_layer(std::span<const int> pool, std::span<const int> active, int n_layer,
                                    GrowthDirection direction) {
  std::optional<int> best;
  if (direction == GrowthDirection::kDeepToShallow) {
    const int bound = active.empty() ? n_layer : *std::min_element(active.begin(), active.end());
    for (int l : pool) {
      if (std::find(active.begin(), active.end(), l) != active.end() || l >= bound) continue;
      if (!best || l > *best) best = l;
    }
  } else {
    const int bound = active.empty() ? -1 : *std::max_element(active.begin(), active.end());
    for (int l : pool) {
      if (std::find(active.begin(), active.end(), l) != active.end() || l <= bound) continue;
      if (!best || l < *best) best = l;
    }
  }
  return best;
}

GrowthOutcome growth_decide(std::int64_t t, std::span<const double> layer_entropies,
                            const std::vector<std::vector<double>>& head_entropies, const GrowthConfig& config,
                            const ArchState& state) {
  if (!is_decision_step(t, config)) throw std::invalid_argument("growth_step called outside a decision step");
  const int n_layer = state.n_layer();
  if (static_cast<int>(layer_entropies.size()) != n_layer || static_cast<int>(head_entropies.size()) != n_layer) {
    throw std::invalid_argument("growth_step: one entropy per layer required");
  }
  GrowthOutcome out{state, {}};
  if (phase_of(t, config, state) == Phase::kFixed) return out;

  std::vector<double> ent(layer_entropies.begin(), layer_entropies.end());
  auto event = [&](GrowthEvent::Kind kind, std::optional<int> layer) {
    GrowthEvent e;
    e.step = t;
    e.kind = kind;
    e.layer = layer;
    e.layer_entropies = ent;
    if (layer) {
      e.depth = out.state.depth[static_cast<std::size_t>(*layer)];
      e.heads = out.state.heads[static_cast<std::size_t>(*layer)];
    }
    return e;
  };

  const auto pool = candidate_pool(layer_entropies, config.target_layers, config.excluded);
  auto& s = out.state;
  const bool grow_current = s.growing && std::find(pool.begin(), pool.end(), *s.growing) != pool.end() &&
                            s.depth[static_cast<std::size_t>(*s.growing)] < config.max_depth;
  if (grow_current) {
    s.depth[static_cast<std::size_t>(*s.growing)] += 1;
    out.events.push_back(event(GrowthEvent::Kind::kDeepen, s.growing));
  } else if (static_cast<int>(s.active.size()) < config.target_layers) {
    const auto next = select_new_layer(pool, s.active, n_layer, config.direction);
    if (next) {
      const auto i = static_cast<std::size_t>(*next);
      s.heads[i] = select_heads(head_entropies[i], config.heads_per_layer, *next).members;
      s.depth[i] = 1;
      s.active.push_back(*next);
      s.growing = next;
      out.events.push_back(event(GrowthEvent::Kind::kActivate, next));
    } else {
      out.events.push_back(event(GrowthEvent::Kind::kStall, std::nullopt));
    }
  } else {
    out.events.push_back(event(GrowthEvent::Kind::kStall, s.growing));
  }
  if (phase_of(t, config, s) == Phase::kFixed) out.events.push_back(event(GrowthEvent::Kind::kFreeze, s.growing));
  return out;
}

GrowthOutcome growth_step(std::int64_t t, EntropyWindow& window, const GrowthConfig& config, const ArchState& state) {
  if (!is_decision_step(t, config)) throw std::invalid_argument("growth_step called outside a decision step");
  std::vector<std::vector<double>> heads(static_cast<std::size_t>(window.n_layer()));
  for (int l = 0; l < window.n_layer(); ++l) heads[static_cast<std::size_t>(l)] = window.head_means(l);
  auto out = growth_decide(t, window.layer_means(), heads, config, state);
  window.reset();
  return out;
}

namespace {

std::string g9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

template <typename T, typename F>
void json_array(std::ostringstream& os, const std::vector<T>& v, F&& f) {
  os << '[';
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) os << ',';
    f(v[i]);
  }
  os << ']';
}

}  // namespace

std::string GrowthEvent::to_json() const {
  std::ostringstream os;
  os << "{\"step\":" << step << ",\"event\":\"" << to_string(kind) << "\",\"layer\":";
  if (layer) os << *layer; else os << "null";
  os << ",\"K_l\":" << depth << ",\"S_l\":";
  json_array(os, heads, [&](int h) { os << h; });
  os << ",\"layer_entropies\":";
  json_array(os, layer_entropies, [&](double e) { os << g9(e); });
  os << '}';
  return os.str();
}

}  // namespace sgt
