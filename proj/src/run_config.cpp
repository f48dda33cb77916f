// SPDX-License-Identifier: Apache-2.0
#include "sgt/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace sgt {

const char* to_string(Variant v) {
  switch (v) {
    case Variant::kVanilla: return "vanilla";
    case Variant::kBlockLoop: return "block_loop";
    case Variant::kSgt: return "sgt";
    case Variant::kAblation: return "ablation";
  }
  return "?";
}

const char* to_string(AblationArm a) {
  switch (a) {
    case AblationArm::kNone: return "none";
    case AblationArm::kBlock: return "block_loop";
    case AblationArm::kAttention: return "attention_loop";
    case AblationArm::kHighEntropy: return "high_entropy";
    case AblationArm::kLowEntropy: return "low_entropy";
  }
  return "?";
}

Variant parse_variant(const std::string& s) {
  if (s == "vanilla") return Variant::kVanilla;
  if (s == "block_loop") return Variant::kBlockLoop;
  if (s == "sgt") return Variant::kSgt;
  if (s == "ablation") return Variant::kAblation;
  throw ConfigError("unknown variant: " + s);
}

AblationArm parse_arm(const std::string& s) {
  if (s == "none") return AblationArm::kNone;
  if (s == "block_loop" || s == "block") return AblationArm::kBlock;
  if (s == "attention_loop" || s == "attention") return AblationArm::kAttention;
  if (s == "high_entropy") return AblationArm::kHighEntropy;
  if (s == "low_entropy") return AblationArm::kLowEntropy;
  throw ConfigError("unknown ablation arm: " + s);
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* first = v.data();
  const auto* last = v.data() + v.size();
  const auto res = std::from_chars(first, last, out);
  if (res.ec != std::errc() || res.ptr != last) throw ConfigError("bad value for " + key + ": '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("bad boolean for " + key + ": '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(v);
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

template <typename C, typename F>
std::string join(const C& c, F&& f) {
  std::string out;
  for (const auto& x : c) {
    if (!out.empty()) out += ',';
    out += f(x);
  }
  return out;
}

}  // namespace

void TrainRunConfig::set(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  auto i64 = [&] { return parse_number<std::int64_t>(key, v); };
  auto i32 = [&] { return parse_number<int>(key, v); };
  auto f64 = [&] { return parse_number<double>(key, v); };
  if (key == "n_layer") model.n_layer = i32();
  else if (key == "n_head") model.n_head = i32();
  else if (key == "d_model") model.d_model = i32();
  else if (key == "d_head") model.d_head = i32();
  else if (key == "d_ff") model.d_ff = i32();
  else if (key == "vocab_size") model.vocab_size = i32();
  else if (key == "max_seq_len") model.max_seq_len = i32();
  else if (key == "rope_base") model.rope_base = f64();
  else if (key == "norm_eps") model.norm_eps = f64();
  else if (key == "ffn_gate") {
    if (v == "silu") model.ffn_gate = FfnGate::kSilu;
    else if (v == "gelu") model.ffn_gate = FfnGate::kGelu;
    else throw ConfigError("ffn_gate must be silu or gelu");
  } else if (key == "t_start") growth.t_start = i64();
  else if (key == "growth_interval") growth.interval = i64();
  else if (key == "target_layers") growth.target_layers = i32();
  else if (key == "max_depth") growth.max_depth = i32();
  else if (key == "heads_per_layer") growth.heads_per_layer = i32();
  else if (key == "excluded_layers") {
    growth.excluded.clear();
    for (const auto& s : split_list(v)) growth.excluded.push_back(parse_number<int>(key, s));
  } else if (key == "direction") growth.direction = parse_direction(v);
  else if (key == "variant") variant = parse_variant(v);
  else if (key == "block_loop_layers") block_loop_layers = i32();
  else if (key == "block_loop_depth") block_loop_depth = i32();
  else if (key == "arm") arm = parse_arm(v);
  else if (key == "arm_layer") arm_layer = i32();
  else if (key == "arm_depth") arm_depth = i32();
  else if (key == "two_stage") two_stage = parse_bool(key, v);
  else if (key == "two_stage_pool") two_stage_pool = i32();
  else if (key == "steps") steps = i64();
  else if (key == "batch_size") batch_size = i32();
  else if (key == "lr") optim.lr = f64();
  else if (key == "beta1") optim.beta1 = f64();
  else if (key == "beta2") optim.beta2 = f64();
  else if (key == "adam_eps") optim.eps = f64();
  else if (key == "weight_decay") optim.weight_decay = f64();
  else if (key == "grad_clip") grad_clip = f64();
  else if (key == "seed") seed = parse_number<std::uint64_t>(key, v);
  else if (key == "probe_every") probe_every = i64();
  else if (key == "eval_every") eval_every = i64();
  else if (key == "eval_windows") eval_windows = i32();
  else if (key == "checkpoint_every") checkpoint_every = i64();
  else if (key == "train_fraction") train_fraction = f64();
  else if (key == "corpus") corpus = split_list(v);
  else if (key == "divergence_factor") divergence_factor = f64();
  else throw ConfigError("unknown config key: " + key);
}

std::vector<std::pair<std::string, std::string>> TrainRunConfig::entries() const {
  const auto s = [](auto x) { return std::to_string(x); };
  return {
      {"n_layer", s(model.n_layer)},
      {"n_head", s(model.n_head)},
      {"d_model", s(model.d_model)},
      {"d_head", s(model.d_head)},
      {"d_ff", s(model.d_ff)},
      {"vocab_size", s(model.vocab_size)},
      {"max_seq_len", s(model.max_seq_len)},
      {"rope_base", fmt(model.rope_base)},
      {"norm_eps", fmt(model.norm_eps)},
      {"ffn_gate", model.ffn_gate == FfnGate::kGelu ? "gelu" : "silu"},
      {"t_start", s(growth.t_start)},
      {"growth_interval", s(growth.interval)},
      {"target_layers", s(growth.target_layers)},
      {"max_depth", s(growth.max_depth)},
      {"heads_per_layer", s(growth.heads_per_layer)},
      {"excluded_layers", join(growth.excluded, [](int l) { return std::to_string(l); })},
      {"direction", to_string(growth.direction)},
      {"variant", to_string(variant)},
      {"block_loop_layers", s(block_loop_layers)},
      {"block_loop_depth", s(block_loop_depth)},
      {"arm", to_string(arm)},
      {"arm_layer", s(arm_layer)},
      {"arm_depth", s(arm_depth)},
      {"two_stage", two_stage ? "true" : "false"},
      {"two_stage_pool", s(two_stage_pool)},
      {"steps", s(steps)},
      {"batch_size", s(batch_size)},
      {"lr", fmt(optim.lr)},
      {"beta1", fmt(optim.beta1)},
      {"beta2", fmt(optim.beta2)},
      {"adam_eps", fmt(optim.eps)},
      {"weight_decay", fmt(optim.weight_decay)},
      {"grad_clip", fmt(grad_clip)},
      {"seed", s(seed)},
      {"probe_every", s(probe_every)},
      {"eval_every", s(eval_every)},
      {"eval_windows", s(eval_windows)},
      {"checkpoint_every", s(checkpoint_every)},
      {"train_fraction", fmt(train_fraction)},
      {"corpus", join(corpus, [](const std::string& p) { return p; })},
      {"divergence_factor", fmt(divergence_factor)},
  };
}

std::vector<std::string> TrainRunConfig::keys() {
  std::vector<std::string> k;
  for (const auto& [key, _] : TrainRunConfig{}.entries()) k.push_back(key);
  return k;
}

std::string TrainRunConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : entries()) out += k + " = " + v + "\n";
  return out;
}

TrainRunConfig TrainRunConfig::from_text(const std::string& text) {
  TrainRunConfig c;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    c.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return c;
}

TrainRunConfig TrainRunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

void TrainRunConfig::validate() const {
  model.validate();
  growth.validate(model.n_layer, model.n_head);
  if (steps < 1) throw ConfigError("steps must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (!(optim.lr > 0)) throw ConfigError("lr must be positive");
  if (!(optim.beta1 >= 0 && optim.beta1 < 1 && optim.beta2 >= 0 && optim.beta2 < 1)) {
    throw ConfigError("betas must lie in [0, 1)");
  }
  if (!(optim.eps > 0)) throw ConfigError("adam_eps must be positive");
  if (optim.weight_decay < 0) throw ConfigError("weight_decay must be non-negative");
  if (grad_clip < 0) throw ConfigError("grad_clip must be non-negative");
  if (probe_every < 1) throw ConfigError("probe_every must be positive");
  if (eval_every < 0 || checkpoint_every < 0) throw ConfigError("eval_every/checkpoint_every must be non-negative");
  if (eval_windows < 1) throw ConfigError("eval_windows must be positive");
  if (!(train_fraction > 0 && train_fraction < 1)) throw ConfigError("train_fraction must be in (0, 1)");
  if (variant == Variant::kBlockLoop) {
    const int eligible = model.n_layer - static_cast<int>(growth.excluded.size());
    if (block_loop_layers < 1 || block_loop_layers > eligible) throw ConfigError("block_loop_layers out of range");
    if (block_loop_depth < 1) throw ConfigError("block_loop_depth must be >= 1");
  }
  if (variant == Variant::kAblation) {
    if (arm == AblationArm::kNone) throw ConfigError("ablation variant needs an arm");
    if (arm_layer < 0 || arm_layer >= model.n_layer) throw ConfigError("arm_layer out of range");
    if (arm_depth < 1) throw ConfigError("arm_depth must be >= 1");
    if (two_stage && (two_stage_pool < growth.heads_per_layer)) throw ConfigError("two_stage_pool must be >= h");
  } else if (arm != AblationArm::kNone) {
    throw ConfigError("arm is only valid with variant = ablation");
  }
  if (!(divergence_factor >= 0)) throw ConfigError("divergence_factor must be non-negative");
}

bool operator==(const TrainRunConfig& a, const TrainRunConfig& b) { return a.entries() == b.entries(); }

}  // namespace sgt
