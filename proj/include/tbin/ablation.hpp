#pragma once

// Matched-seed ablation runs: every variant trains on the same data with the
// same init and batch-order seeds, so differences isolate the design change.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tbin/train.hpp"

namespace tbin {

inline constexpr std::array<std::string_view, 7> kAblationVariants{
    "baseline", "c-sa", "g-sa", "len-10", "len-50", "t2", "t6"};

inline std::string valid_variant_list() {
  std::string s;
  for (auto v : kAblationVariants) {
    if (!s.empty()) s += ", ";
    s += v;
  }
  return s;
}

// Model config for a named variant of `base`. Length variants keep the most
// recent 10% / 50% of `full_len` behaviors.
inline ModelConfig apply_variant(ModelConfig base, std::string_view variant, std::size_t full_len) {
  if (variant == "baseline") {
  } else if (variant == "c-sa") {
    base.schema = AttentionSchema::kChunk;
  } else if (variant == "g-sa") {
    base.schema = AttentionSchema::kGlobal;
  } else if (variant == "len-10") {
    base.seq_len = std::max<std::size_t>(1, full_len / 10);
  } else if (variant == "len-50") {
    base.seq_len = std::max<std::size_t>(1, full_len / 2);
  } else if (variant == "t2") {
    base.blocks = 2;
  } else if (variant == "t6") {
    base.blocks = 6;
  } else {
    throw ConfigError("unknown ablation variant '" + std::string(variant) + "' (valid: " + valid_variant_list() + ")");
  }
  return base;
}

struct AblationRun {
  std::string variant;
  std::uint64_t seed = 0;
  EvalMetrics metrics;
};

struct AblationSummary {
  std::string variant;
  std::size_t runs = 0;
  double auc_mean = 0.0, auc_sd = 0.0;
  double logloss_mean = 0.0, logloss_sd = 0.0;
};

// Trains every variant for each of `seeds` (base.seed, base.seed + 1, ...)
// and evaluates on `eval_set`.
inline std::vector<AblationRun> run_ablation(const ModelConfig& base, const TrainConfig& train_cfg,
                                             std::span<const std::string> variants, std::size_t seeds,
                                             std::span<const Sample> train_set, std::span<const Sample> eval_set,
                                             std::size_t full_len) {
  for (const auto& v : variants) apply_variant(base, v, full_len);
  std::vector<AblationRun> runs;
  for (std::size_t s = 0; s < seeds; ++s) {
    for (const auto& v : variants) {
      ModelConfig mc = apply_variant(base, v, full_len);
      mc.seed = base.seed + s;
      TrainConfig tc = train_cfg;
      tc.seed = train_cfg.seed + s;
      tc.eval_every = 0;
      Model model = init_model(mc);
      train(model, train_set, {}, tc);
      runs.push_back({v, mc.seed, evaluate(model, eval_set)});
    }
  }
  return runs;
}

inline std::vector<AblationSummary> summarize(std::span<const AblationRun> runs) {
  std::vector<AblationSummary> out;
  for (const auto& r : runs) {
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& s) { return s.variant == r.variant; });
    if (it == out.end()) out.push_back({r.variant});
  }
  for (auto& s : out) {
    std::vector<double> aucs, losses;
    for (const auto& r : runs) {
      if (r.variant != s.variant) continue;
      aucs.push_back(r.metrics.auc);
      losses.push_back(r.metrics.logloss);
    }
    auto stats = [](const std::vector<double>& xs, double& mean, double& sd) {
      mean = 0.0;
      for (double x : xs) mean += x;
      mean /= static_cast<double>(xs.size());
      double var = 0.0;
      for (double x : xs) var += (x - mean) * (x - mean);
      sd = xs.size() > 1 ? std::sqrt(var / static_cast<double>(xs.size() - 1)) : 0.0;
    };
    s.runs = aucs.size();
    stats(aucs, s.auc_mean, s.auc_sd);
    stats(losses, s.logloss_mean, s.logloss_sd);
  }
  return out;
}

// Markdown comparison table; delta AUC is relative to the first variant.
inline void write_table(std::ostream& os, std::span<const AblationSummary> rows) {
  os << "| variant | runs | AUC (mean ± sd) | dAUC | LogLoss (mean ± sd) |\n";
  os << "|---|---|---|---|---|\n";
  const double ref = rows.empty() ? 0.0 : rows.front().auc_mean;
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "| %s | %zu | %.4f ± %.4f | %+.4f | %.4f ± %.4f |\n", r.variant.c_str(), r.runs,
                  r.auc_mean, r.auc_sd, r.auc_mean - ref, r.logloss_mean, r.logloss_sd);
    os << buf;
  }
}

inline void write_runs_csv(std::ostream& os, std::span<const AblationRun> runs) {
  os << "variant,seed,auc,logloss\n";
  for (const auto& r : runs) os << r.variant << ',' << r.seed << ',' << r.metrics.auc << ',' << r.metrics.logloss << '\n';
}

}  // namespace tbin
