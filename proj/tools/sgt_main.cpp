// SPDX-License-Identifier: Apache-2.0
//
// sgt: train / eval / analyze / theory / ablate / report.
//
// Exit codes: 0 success, 1 runtime failure, 2 bad flags or invalid config.
// SGT_LOG_LEVEL=quiet|info|debug controls progress output on stderr.

#include "sgt/analysis.hpp"
#include "sgt/checkpoint.hpp"
#include "sgt/report.hpp"
#include "sgt/theory.hpp"
#include "sgt/trainer.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <regex>

namespace fs = std::filesystem;
using namespace sgt;

namespace {

enum class LogLevel { kQuiet, kInfo, kDebug };

LogLevel log_level() {
  const char* env = std::getenv("SGT_LOG_LEVEL");
  if (!env) return LogLevel::kInfo;
  const std::string v = env;
  if (v == "quiet" || v == "error" || v == "0") return LogLevel::kQuiet;
  if (v == "debug" || v == "2") return LogLevel::kDebug;
  return LogLevel::kInfo;
}

void info(const std::string& msg) {
  if (log_level() >= LogLevel::kInfo) std::cerr << "[sgt] " << msg << '\n';
}

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

TrainRunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  TrainRunConfig cfg = path.empty() ? TrainRunConfig{} : TrainRunConfig::from_file(path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("override must be key=value: " + kv);
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

void prepare_out_dir(const fs::path& out, bool resume) {
  if (fs::exists(out) && !fs::is_empty(out) && !resume) {
    throw UsageError("output directory is not empty (pass --resume to continue a run): " + out.string());
  }
  fs::create_directories(out);
}

CorpusSplit load_corpus(const TrainRunConfig& cfg) {
  if (cfg.corpus.empty()) throw ConfigError("no corpus given (set corpus = path or pass --corpus)");
  return ingest_corpus(cfg.corpus, cfg.train_fraction, cfg.model.max_seq_len);
}

void write_config_copy(const TrainRunConfig& cfg, const fs::path& out) {
  std::ofstream f(out / "config.cfg");
  f << cfg.to_text();
}

void progress(const StepMetrics& m) {
  if (log_level() == LogLevel::kQuiet) return;
  const bool verbose = log_level() == LogLevel::kDebug;
  if (verbose || m.step % 50 == 0 || !m.events.empty()) {
    std::cerr << "[sgt] step " << m.step << " loss " << m.loss << " phase " << to_string(m.phase);
    for (const auto& e : m.events) std::cerr << " | " << e.to_json();
    std::cerr << '\n';
  }
}

int run_train_like(const std::string& subcommand, TrainRunConfig cfg, const fs::path& out, const std::string& config_path,
                   const std::vector<std::string>& overrides, const std::string& resume,
                   std::optional<std::int64_t> stop_after) {
  TrainerState state;
  if (!resume.empty()) {
    state = load_checkpoint(resume);
    const auto steps = cfg.steps;
    if (steps != state.config.steps) state.config.steps = steps;  // allow extending a run
    cfg = state.config;
  } else {
    cfg.validate();
    state = init_trainer(cfg);
  }
  prepare_out_dir(out, !resume.empty());
  RunManifest man{subcommand, config_path, out, cfg.seed, overrides, {}};
  man.extra["variant"] = to_string(cfg.variant);
  if (!resume.empty()) man.extra["resumed_from"] = resume;
  write_manifest(man, out);
  write_config_copy(cfg, out);
  const auto corpus = load_corpus(cfg);
  info("training " + std::string(to_string(cfg.variant)) + " from step " + std::to_string(state.step) + " to " +
       std::to_string(stop_after ? std::min(*stop_after, cfg.steps) : cfg.steps));
  RunOptions opts;
  opts.out_dir = out;
  opts.stop_after = stop_after;
  opts.on_step = progress;
  run_training(state, corpus, opts);
  info("done; checkpoint at " + (out / "checkpoint_final.bin").string());
  return 0;
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoi(item));
    } catch (const std::logic_error&) {
      throw UsageError("bad integer list: " + s);
    }
  }
  return out;
}

void write_long_context(const std::vector<LongContextRow>& rows, std::ostream& out) {
  out << kLongContextHeader << '\n';
  for (const auto& r : rows) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%.9g,%.9g,%lld", r.result.ppl, r.result.mean_nll,
                  static_cast<long long>(r.result.windows));
    out << r.multiplier << ',' << r.seq_len << ',' << buf << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse growing transformer laboratory"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "Train a vanilla, block_loop or sgt model");
  std::string config_path, out_dir, variant, resume, corpus_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> stop_after, steps;
  train->add_option("--config", config_path, "Flat key=value config file");
  train->add_option("--variant", variant, "vanilla | block_loop | sgt");
  train->add_option("--seed", seed, "Run seed");
  train->add_option("--steps", steps, "Total optimizer steps");
  train->add_option("--out", out_dir, "Run directory")->required();
  train->add_option("--set", overrides, "Config override key=value (repeatable)");
  train->add_option("--corpus", corpus_path, "Corpus file(s), comma separated");
  train->add_option("--resume", resume, "Continue from a checkpoint");
  train->add_option("--stop-after", stop_after, "Stop after this step");

  // eval
  auto* eval = app.add_subcommand("eval", "Validation perplexity, optionally at longer contexts");
  std::string checkpoint, extrapolate;
  int windows = 8;
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval->add_option("--corpus", corpus_path, "Corpus file(s); defaults to the run's corpus");
  eval->add_option("--extrapolate", extrapolate, "Context multipliers, e.g. 2,3,4");
  eval->add_option("--windows", windows, "Maximum evaluation windows per length");
  eval->add_option("--out", out_dir, "Directory for eval_report.csv / long_context.csv");

  // analyze
  auto* analyze = app.add_subcommand("analyze", "Entropy statistics and contribution flow on held-out text");
  int layer = -1, head = -1, sample = 0;
  analyze->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  analyze->add_option("--corpus", corpus_path, "Corpus file(s); defaults to the run's corpus");
  analyze->add_option("--out", out_dir, "Output directory")->required();
  analyze->add_option("--windows", windows, "Maximum windows");
  analyze->add_option("--layer", layer, "Layer for the contribution flow");
  analyze->add_option("--head", head, "Head for the contribution flow");
  analyze->add_option("--sample", sample, "Validation window index for the contribution flow");

  // theory
  auto* theory_cmd = app.add_subcommand("theory", "Mixing-matrix sweep and diagonal-bound map");
  std::string sweep = "entropy:0.2..0.95:50";
  theory::SweepConfig sc;
  int lemma_max_i = 8, lemma_steps = 21;
  theory_cmd->add_option("--sweep", sweep, "entropy:LO..HI:COUNT");
  theory_cmd->add_option("--n", sc.n, "Matrix size N");
  theory_cmd->add_option("--beta", sc.beta, "Mixing coefficient");
  theory_cmd->add_option("--k", sc.k, "Error iterations K");
  theory_cmd->add_option("--seed", sc.seed, "Seed");
  theory_cmd->add_flag("--independent", sc.independent_logits, "Fresh logits per matrix");
  theory_cmd->add_option("--lemma-max-i", lemma_max_i, "Largest row length in the bound map");
  theory_cmd->add_option("--out", out_dir, "Output directory")->required();

  // ablate
  auto* ablate = app.add_subcommand("ablate", "Single-layer loop arms or head masking");
  ablate->set_help_flag("--help", "Print this help message and exit");  // --h is the head count
  std::string arm, mask;
  int h = 2;
  bool two_stage = false;
  ablate->add_option("--arm", arm, "block_loop | attention_loop | high_entropy | low_entropy");
  ablate->add_option("--layer", layer, "Layer to loop");
  ablate->add_option("--h", h, "Heads to loop");
  ablate->add_flag("--two-stage", two_stage, "Two-window head selection");
  ablate->add_option("--config", config_path, "Config file");
  ablate->add_option("--seed", seed, "Run seed");
  ablate->add_option("--steps", steps, "Total optimizer steps");
  ablate->add_option("--set", overrides, "Config override key=value (repeatable)");
  ablate->add_option("--corpus", corpus_path, "Corpus file(s)");
  ablate->add_option("--mask", mask, "Heads to mask, layer:head,... (evaluation only)");
  ablate->add_option("--checkpoint", checkpoint, "Checkpoint for --mask");
  ablate->add_option("--windows", windows, "Evaluation windows for --mask");
  ablate->add_option("--out", out_dir, "Output directory")->required();

  // report
  auto* report = app.add_subcommand("report", "Export a run's report bundle");
  std::vector<std::string> runs;
  report->add_option("--run", runs, "Run directory (give two for a loss-vs-FLOPs join)")->required()->expected(1, 2);
  report->add_option("--out", out_dir, "Report directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train || *ablate) {
      const bool is_ablate = ablate->parsed();
      if (is_ablate && !mask.empty()) {
        if (checkpoint.empty()) throw UsageError("--mask needs --checkpoint");
        auto state = load_checkpoint(checkpoint);
        if (!corpus_path.empty()) state.config.set("corpus", corpus_path);
        const auto corpus = load_corpus(state.config);
        const auto refs = parse_head_refs(mask);
        const auto r = evaluate_mask(state.params, state.config.model, refs, corpus.validation,
                                     state.config.model.max_seq_len, windows);
        prepare_out_dir(out_dir, false);
        std::ofstream f(fs::path(out_dir) / "mask.csv");
        f << "masked,baseline_ppl,masked_ppl\n\"" << mask << "\"," << r.baseline.ppl << ',' << r.masked_eval.ppl << '\n';
        std::cout << "baseline ppl " << r.baseline.ppl << ", masked ppl " << r.masked_eval.ppl << '\n';
        return 0;
      }
      auto cfg = load_config(config_path, overrides);
      if (!corpus_path.empty()) cfg.set("corpus", corpus_path);
      if (seed) cfg.seed = *seed;
      if (steps) cfg.steps = *steps;
      if (is_ablate) {
        if (arm.empty() || layer < 0) throw UsageError("ablate needs --arm and --layer (or --mask)");
        cfg.variant = Variant::kAblation;
        cfg.arm = parse_arm(arm);
        cfg.arm_layer = layer;
        cfg.growth.heads_per_layer = h;
        cfg.two_stage = two_stage;
      } else if (!variant.empty()) {
        cfg.variant = parse_variant(variant);
      }
      return run_train_like(is_ablate ? "ablate" : "train", cfg, out_dir, config_path, overrides,
                            is_ablate ? std::string() : resume, stop_after);
    }
    if (*eval) {
      auto state = load_checkpoint(checkpoint);
      if (!corpus_path.empty()) state.config.set("corpus", corpus_path);
      const auto corpus = load_corpus(state.config);
      const auto& mc = state.config.model;
      const auto plan = state.plan();
      const auto r = evaluate_perplexity(state.params, mc, plan, corpus.validation, mc.max_seq_len, windows);
      std::cout << "ppl " << r.ppl << " (mean nll " << r.mean_nll << " nats over " << r.positions << " positions)\n";
      std::vector<LongContextRow> rows;
      if (!extrapolate.empty()) {
        auto mult = parse_int_list(extrapolate);
        mult.insert(mult.begin(), 1);
        rows = long_context_eval(state.params, mc, plan, corpus.validation, mult, windows);
        write_long_context(rows, std::cout);
      }
      if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        std::ofstream f(fs::path(out_dir) / "eval_report.csv");
        f << "step,val_loss,val_ppl\n" << state.step << ',' << r.mean_nll << ',' << r.ppl << '\n';
        if (!rows.empty()) {
          std::ofstream lc(fs::path(out_dir) / "long_context.csv");
          write_long_context(rows, lc);
        }
      }
      return 0;
    }
    if (*analyze) {
      auto state = load_checkpoint(checkpoint);
      if (!corpus_path.empty()) state.config.set("corpus", corpus_path);
      const auto corpus = load_corpus(state.config);
      const auto& mc = state.config.model;
      const auto plan = state.plan();
      fs::create_directories(out_dir);
      const auto window = probe_entropy(state.params, mc, plan, corpus.validation, mc.max_seq_len, windows);
      {
        std::ofstream hf(fs::path(out_dir) / "entropy_heads.csv");
        hf << kHeadEntropyHeader << '\n';
        write_head_entropy_rows(hf, state.step, window);
        std::ofstream lf(fs::path(out_dir) / "entropy_layers.csv");
        lf << kLayerEntropyHeader << '\n';
        write_layer_entropy_rows(lf, state.step, window);
      }
      if (layer >= 0 || head >= 0) {
        if (layer < 0 || head < 0) throw UsageError("--layer and --head go together");
        const CorpusSplit& c = corpus;
        const auto ids = c.window(c.validation, mc.max_seq_len, sample);
        const auto flow = contribution_flow(state.params, mc, plan, ids, layer, head);
        std::ofstream jf(fs::path(out_dir) / "contribution_flow.json");
        jf << contribution_flow_json(flow) << '\n';
      }
      info("analysis written to " + out_dir);
      return 0;
    }
    if (*theory_cmd) {
      static const std::regex re(R"(entropy:([0-9.]+)\.\.([0-9.]+):([0-9]+))");
      std::smatch mt;
      if (!std::regex_match(sweep, mt, re)) throw UsageError("--sweep must look like entropy:0.2..0.95:50");
      sc.entropy_lo = std::stod(mt[1]);
      sc.entropy_hi = std::stod(mt[2]);
      sc.count = std::stoi(mt[3]);
      fs::create_directories(out_dir);
      const auto result = theory::entropy_sweep(sc);
      std::ofstream csv(fs::path(out_dir) / "theory_sweep.csv");
      theory::write_sweep_csv(csv, result);
      std::ofstream js(fs::path(out_dir) / "theory_summary.json");
      js << theory::sweep_summary_json(sc, result) << '\n';
      std::ofstream lm(fs::path(out_dir) / "lemma_map.csv");
      const auto cells = theory::lemma_map(lemma_max_i, lemma_steps, 1e-4);
      theory::write_lemma_csv(lm, cells);
      std::cout << "rank correlation " << result.rank_correlation << " over " << result.rows.size() << " matrices\n";
      return 0;
    }
    if (*report) {
      export_report(runs[0], out_dir);
      if (runs.size() == 2) {
        export_report(runs[1], fs::path(out_dir) / "run_b");
        export_loss_vs_flops(runs[0], runs[1], fs::path(out_dir) / "loss_vs_flops.csv");
      }
      info("report written to " + out_dir);
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
