// SPDX-License-Identifier: Apache-2.0
#include "sgt/trainer.hpp"

#include "sgt/checkpoint.hpp"
#include "sgt/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace sgt {

LoopPlan TrainerState::plan() const {
  if (config.variant == Variant::kSgt) return arch.plan();
  if (fixed_plan.empty()) return vanilla_plan(config.model.n_layer);
  return fixed_plan;
}

TrainerState init_trainer(const TrainRunConfig& config) {
  config.validate();
  TrainerState s;
  s.config = config;
  s.params = init_parameters<float>(config.model, config.seed);
  s.adam = AdamState<float>::zeros(s.params);
  s.arch = ArchState::empty(config.model.n_layer);
  s.fixed_plan = vanilla_plan(config.model.n_layer);
  s.window = EntropyWindow(config.model.n_layer, config.model.n_head);
  s.log_window = EntropyWindow(config.model.n_layer, config.model.n_head);
  return s;
}

std::vector<AttentionTrace> base_pass_traces(const std::vector<std::vector<double>>& rows, int n_layer, int n_head) {
  if (static_cast<int>(rows.size()) != n_layer * n_head) throw std::invalid_argument("missing attention traces");
  std::vector<AttentionTrace> out(rows.size());
  for (int l = 0; l < n_layer; ++l) {
    for (int h = 0; h < n_head; ++h) {
      const auto i = static_cast<std::size_t>(l * n_head + h);
      if (rows[i].empty()) throw std::invalid_argument("missing attention trace for a head");
      auto& t = out[i];
      t.layer = l;
      t.head = h;
      t.row = rows[i];
      double total = 0.0;
      for (double a : t.row) total += a;
      for (double& a : t.row) a /= total;  // float softmax rows drift from 1 by ~1e-7
      t.entropy = head_entropy(t.row);
    }
  }
  return out;
}

namespace {

struct TraceCollector {
  int n_head;
  std::vector<std::vector<double>> rows;

  AttentionObserver<float> observer() {
    return [this](const HeadObservation<float>& obs) {
      if (obs.loop_index != 0) return;
      rows[static_cast<std::size_t>(obs.layer * n_head + obs.head)] = last_row(obs.attention);
    };
  }
};

ParamStore<float> scaled(ParamStore<float> g, float s) {
  visit_weights(g, [s](const std::string&, Matrix<float>& m) { m *= s; });
  return g;
}

void require_finite(const ParamStore<float>& g, std::int64_t step) {
  bool ok = true;
  visit_weights(g, [&ok](const std::string&, const Matrix<float>& m) { ok = ok && m.allFinite(); });
  if (!ok) throw NumericError("non-finite gradient at step " + std::to_string(step));
}

GrowthEvent activation_event(std::int64_t t, int layer, int depth, std::vector<int> heads,
                             std::vector<double> entropies) {
  GrowthEvent e;
  e.step = t;
  e.kind = GrowthEvent::Kind::kActivate;
  e.layer = layer;
  e.depth = depth;
  e.heads = std::move(heads);
  e.layer_entropies = std::move(entropies);
  return e;
}

std::vector<int> all_heads(int n) {
  std::vector<int> v(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = i;
  return v;
}

}  // namespace

std::vector<GrowthEvent> apply_schedule(TrainerState& state, std::int64_t t) {
  const auto& cfg = state.config;
  const auto& g = cfg.growth;
  if (!is_decision_step(t, g)) return {};
  std::vector<GrowthEvent> events;
  switch (cfg.variant) {
    case Variant::kVanilla:
      state.window.reset();
      break;
    case Variant::kSgt: {
      if (phase_of(t, g, state.arch) == Phase::kFixed) {
        state.window.reset();
        break;
      }
      auto out = growth_step(t, state.window, g, state.arch);
      state.arch = std::move(out.state);
      events = std::move(out.events);
      break;
    }
    case Variant::kBlockLoop: {
      if (t == g.t_start) {
        const auto ent = state.window.layer_means();
        const auto pool = candidate_pool(ent, cfg.block_loop_layers, g.excluded);
        for (int l : pool) {
          state.fixed_plan[static_cast<std::size_t>(l)] = LoopDirective::block_loop(cfg.block_loop_depth);
          events.push_back(activation_event(t, l, cfg.block_loop_depth, {}, ent));
        }
      }
      state.window.reset();
      break;
    }
    case Variant::kAblation: {
      const int l = cfg.arm_layer;
      const int n_head = cfg.model.n_head;
      const bool high = cfg.arm == AblationArm::kHighEntropy;
      const bool by_entropy = high || cfg.arm == AblationArm::kLowEntropy;
      const auto ent = state.window.layer_means();
      const auto heads = state.window.head_means(l);
      auto pick = [&](std::span<const double> values, int h) {
        return high ? select_heads(values, h, l).members : select_lowest_heads(values, h, l).members;
      };
      auto activate = [&](LoopDirective d) {
        state.fixed_plan[static_cast<std::size_t>(l)] = d;
        events.push_back(activation_event(t, l, d.depth, d.heads, ent));
      };
      if (t == g.t_start) {
        if (cfg.arm == AblationArm::kBlock) {
          activate(LoopDirective::block_loop(cfg.arm_depth));
        } else if (cfg.arm == AblationArm::kAttention) {
          activate(LoopDirective::head_loop(all_heads(n_head), cfg.arm_depth));
        } else if (by_entropy && !cfg.two_stage) {
          activate(LoopDirective::head_loop(pick(heads, g.heads_per_layer), cfg.arm_depth));
        } else if (by_entropy) {
          state.stage_pool = pick(heads, std::min(cfg.two_stage_pool, n_head));
        }
      } else if (t == g.t_start + g.interval && by_entropy && cfg.two_stage && !state.stage_pool.empty()) {
        std::vector<double> pooled;
        for (int h : state.stage_pool) pooled.push_back(heads[static_cast<std::size_t>(h)]);
        std::vector<int> chosen;
        for (int i : pick(pooled, g.heads_per_layer)) chosen.push_back(state.stage_pool[static_cast<std::size_t>(i)]);
        state.stage_pool.clear();
        activate(LoopDirective::head_loop(chosen, cfg.arm_depth));
      }
      state.window.reset();
      break;
    }
  }
  return events;
}

StepMetrics train_step(TrainerState& state, const CorpusSplit& corpus) {
  const auto& cfg = state.config;
  const auto& mc = cfg.model;
  const std::int64_t t = state.step + 1;
  const LoopPlan plan = state.plan();

  StepMetrics m;
  m.step = t;
  m.phase = cfg.variant == Variant::kSgt ? phase_of(t, cfg.growth, state.arch)
                                         : (t < cfg.growth.t_start ? Phase::kWarmup : Phase::kFixed);
  if (cfg.variant == Variant::kSgt) {
    m.active_layers = state.arch.active;
    m.growing_layer = state.arch.growing;
  } else {
    for (int l = 0; l < mc.n_layer; ++l) {
      if (plan[static_cast<std::size_t>(l)].mode != LoopDirective::Mode::kNone) m.active_layers.push_back(l);
    }
  }
  const double step_flops = training_flops_per_step(mc, mc.max_seq_len, cfg.batch_size, plan);
  state.ledger.record(step_flops);
  m.flops_step = step_flops;
  m.flops_cum = state.ledger.cumulative();

  const std::int64_t n_windows = corpus.train_windows(mc.max_seq_len);
  auto bound = bind(state.params, true);
  TraceCollector collector{mc.n_head, std::vector<std::vector<double>>(static_cast<std::size_t>(mc.n_layer * mc.n_head))};
  const auto observer = collector.observer();
  ForwardOptions opts;
  opts.divergence_factor = cfg.divergence_factor;
  std::vector<std::vector<AttentionTrace>> batch_traces;
  double loss_sum = 0.0;
  for (int b = 0; b < cfg.batch_size; ++b) {
    const auto w = batch_window(cfg.seed, t, cfg.batch_size, b, n_windows);
    const auto ids = corpus.train_window(mc.max_seq_len, w);
    for (auto& r : collector.rows) r.clear();
    ForwardResult<float> r;
    try {
      r = model_forward(bound, mc, ids, plan, &observer, opts);
    } catch (const NumericError& e) {
      throw NumericError("step " + std::to_string(t) + ": " + e.what());
    }
    if (!std::isfinite(r.loss_nats)) throw NumericError("NaN loss at step " + std::to_string(t));
    loss_sum += r.loss_nats;
    backward(r.loss);
    batch_traces.push_back(base_pass_traces(collector.rows, mc.n_layer, mc.n_head));
  }
  m.loss = loss_sum / cfg.batch_size;

  auto grads = scaled(collect_grads(bound), 1.0f / static_cast<float>(cfg.batch_size));
  require_finite(grads, t);
  m.grad_norm = clip_grad_norm(grads, cfg.grad_clip);
  adamw_step(state.params, grads, state.adam, cfg.optim);

  state.window.update(batch_traces);
  state.log_window.update(batch_traces);
  state.step = t;
  m.events = apply_schedule(state, t);
  return m;
}

EvalResult evaluate_perplexity(const ParamStore<float>& params, const ModelConfig& config, const LoopPlan& plan,
                               std::span<const int> tokens, int seq_len, int max_windows) {
  if (seq_len < 2) throw std::invalid_argument("evaluation length must be >= 2");
  const std::int64_t available = static_cast<std::int64_t>(tokens.size()) / seq_len;
  if (available < 1) throw std::invalid_argument("evaluation split is empty at this sequence length");
  const std::int64_t windows = max_windows > 0 ? std::min<std::int64_t>(available, max_windows) : available;
  const auto bound = bind(params, false);
  double nll = 0.0;
  std::int64_t positions = 0;
  for (std::int64_t w = 0; w < windows; ++w) {
    const auto ids = tokens.subspan(static_cast<std::size_t>(w * seq_len), static_cast<std::size_t>(seq_len));
    const auto h = hidden_forward(bound, config, ids, plan);
    const auto logits = matmul(rms_norm(h, bound.final_norm, static_cast<float>(config.norm_eps)), bound.output);
    nll += next_token_nll(logits.value(), ids);
    positions += seq_len - 1;
  }
  EvalResult r;
  r.mean_nll = nll / static_cast<double>(positions);
  r.ppl = std::exp(r.mean_nll);
  r.positions = positions;
  r.windows = windows;
  return r;
}

std::vector<LongContextRow> long_context_eval(const ParamStore<float>& params, const ModelConfig& config,
                                              const LoopPlan& plan, std::span<const int> tokens,
                                              std::span<const int> multipliers, int max_windows) {
  std::vector<LongContextRow> rows;
  for (int m : multipliers) {
    if (m < 1) throw std::invalid_argument("context multiplier must be >= 1");
    LongContextRow row;
    row.multiplier = m;
    row.seq_len = m * config.max_seq_len;
    row.result = evaluate_perplexity(params, config, plan, tokens, row.seq_len, max_windows);
    rows.push_back(row);
  }
  return rows;
}

namespace {

std::string g9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

class RunFiles {
 public:
  RunFiles(const std::filesystem::path& dir, bool append) : dir_(dir) {
    if (dir.empty()) return;
    std::filesystem::create_directories(dir);
    const auto mode = append ? std::ios::app : std::ios::trunc;
    open(metrics_, "metrics.csv", mode, kMetricsHeader);
    open(heads_, "entropy_heads.csv", mode, kHeadEntropyHeader);
    open(layers_, "entropy_layers.csv", mode, kLayerEntropyHeader);
    open(eval_, "eval.csv", mode, kEvalHeader);
    growth_.open(dir / "growth.jsonl", std::ios::out | mode);
  }
  bool enabled() const { return !dir_.empty(); }
  std::ofstream metrics_, heads_, layers_, eval_, growth_;

 private:
  void open(std::ofstream& f, const char* name, std::ios::openmode mode, const char* header) {
    const bool fresh = !(mode & std::ios::app) || !std::filesystem::exists(dir_ / name);
    f.open(dir_ / name, std::ios::out | mode);
    if (!f) throw std::runtime_error("cannot open " + (dir_ / name).string());
    if (fresh) f << header << '\n';
  }
  std::filesystem::path dir_;
};

std::string join_layers(const std::vector<int>& v) {
  std::string out;
  for (int l : v) {
    if (!out.empty()) out += ';';
    out += std::to_string(l);
  }
  return out;
}

}  // namespace

std::string format_metrics_row(const StepMetrics& m) {
  std::ostringstream os;
  os << m.step << ',' << g9(m.loss) << ',' << g9(std::exp(m.loss)) << ',' << g17(m.flops_step) << ','
     << g17(m.flops_cum) << ',' << to_string(m.phase) << ',' << join_layers(m.active_layers) << ','
     << (m.growing_layer ? std::to_string(*m.growing_layer) : std::string());
  return os.str();
}

void run_training(TrainerState& state, const CorpusSplit& corpus, const RunOptions& options) {
  const auto& cfg = state.config;
  RunFiles files(options.out_dir, state.step > 0);
  std::int64_t last = cfg.steps;
  if (options.stop_after) last = std::min(last, *options.stop_after);
  const auto param_count = parameter_count(state.params);
  while (state.step < last) {
    const auto m = train_step(state, corpus);
    if (parameter_count(state.params) != param_count) throw std::logic_error("parameter count changed during training");
    if (files.enabled()) {
      files.metrics_ << format_metrics_row(m) << '\n';
      for (const auto& e : m.events) files.growth_ << e.to_json() << '\n';
      if (m.step % cfg.probe_every == 0) {
        write_head_entropy_rows(files.heads_, m.step, state.log_window);
        write_layer_entropy_rows(files.layers_, m.step, state.log_window);
      }
    }
    if (m.step % cfg.probe_every == 0) state.log_window.reset();
    if (files.enabled() && cfg.eval_every > 0 && m.step % cfg.eval_every == 0) {
      const auto r = evaluate_perplexity(state.params, cfg.model, state.plan(), corpus.validation, cfg.model.max_seq_len,
                                         cfg.eval_windows);
      files.eval_ << m.step << ',' << g9(r.mean_nll) << ',' << g9(r.ppl) << '\n';
    }
    if (files.enabled() && cfg.checkpoint_every > 0 && m.step % cfg.checkpoint_every == 0) {
      save_checkpoint(state, options.out_dir / ("checkpoint_" + std::to_string(m.step) + ".bin"));
    }
    if (options.on_step) options.on_step(m);
  }
  if (files.enabled()) {
    for (auto* f : {&files.metrics_, &files.heads_, &files.layers_, &files.eval_, &files.growth_}) f->flush();
    save_checkpoint(state, options.out_dir / "checkpoint_final.bin");
  }
}

}  // namespace sgt
