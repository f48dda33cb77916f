// SPDX-License-Identifier: Apache-2.0
#include "sgt/analysis.hpp"

#include "sgt/model.hpp"

#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace sgt {

EntropyWindow probe_entropy(const ParamStore<float>& params, const ModelConfig& config, const LoopPlan& plan,
                            std::span<const int> tokens, int seq_len, int max_windows) {
  const std::int64_t available = static_cast<std::int64_t>(tokens.size()) / seq_len;
  if (available < 1) throw std::invalid_argument("probe_entropy: no complete window");
  const std::int64_t windows = max_windows > 0 ? std::min<std::int64_t>(available, max_windows) : available;
  const auto bound = bind(params, false);
  std::vector<std::vector<double>> rows(static_cast<std::size_t>(config.n_layer * config.n_head));
  AttentionObserver<float> obs = [&](const HeadObservation<float>& o) {
    if (o.loop_index == 0) rows[static_cast<std::size_t>(o.layer * config.n_head + o.head)] = last_row(o.attention);
  };
  EntropyWindow window(config.n_layer, config.n_head);
  for (std::int64_t w = 0; w < windows; ++w) {
    const auto ids = tokens.subspan(static_cast<std::size_t>(w * seq_len), static_cast<std::size_t>(seq_len));
    hidden_forward(bound, config, ids, plan, &obs);
    window.update(BatchTraces{base_pass_traces(rows, config.n_layer, config.n_head)});
  }
  return window;
}

std::vector<ContributionPoint> contribution_flow(const ParamStore<float>& params, const ModelConfig& config,
                                                 const LoopPlan& plan, std::span<const int> ids, int layer, int head) {
  if (layer < 0 || layer >= config.n_layer || head < 0 || head >= config.n_head) {
    throw std::out_of_range("contribution_flow: head out of range");
  }
  const auto bound = bind(params, false);
  std::vector<ContributionPoint> out;
  AttentionObserver<float> obs = [&](const HeadObservation<float>& o) {
    if (o.layer != layer || o.head != head) return;
    const auto row = last_row(o.attention);
    const auto c = weighted_attention_contribution(row, o.values);
    for (std::size_t j = 0; j < c.size(); ++j) out.push_back({o.loop_index, static_cast<int>(j), c[j]});
  };
  hidden_forward(bound, config, ids, plan, &obs);
  return out;
}

std::string contribution_flow_json(std::span<const ContributionPoint> points) {
  std::ostringstream os;
  os << '[';
  char buf[32];
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (i) os << ',';
    std::snprintf(buf, sizeof buf, "%.9g", points[i].contribution);
    os << "{\"k\":" << points[i].loop_index << ",\"j\":" << points[i].token_index << ",\"C_j\":" << buf << '}';
  }
  os << ']';
  return os.str();
}

MaskResult evaluate_mask(const ParamStore<float>& params, const ModelConfig& config, std::span<const HeadRef> heads,
                         std::span<const int> tokens, int seq_len, int max_windows) {
  MaskResult r;
  r.masked.assign(heads.begin(), heads.end());
  r.baseline = evaluate_perplexity(params, config, vanilla_plan(config.n_layer), tokens, seq_len, max_windows);
  r.masked_eval = evaluate_perplexity(params, config, mask_heads(config.n_layer, config.n_head, heads), tokens,
                                      seq_len, max_windows);
  return r;
}

std::vector<HeadRef> parse_head_refs(const std::string& text) {
  std::vector<HeadRef> out;
  std::istringstream is(text);
  std::string item;
  while (std::getline(is, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw std::invalid_argument("head reference must be layer:head, got '" + item + "'");
    try {
      out.push_back({std::stoi(item.substr(0, colon)), std::stoi(item.substr(colon + 1))});
    } catch (const std::logic_error&) {
      throw std::invalid_argument("bad head reference '" + item + "'");
    }
  }
  return out;
}

}  // namespace sgt
