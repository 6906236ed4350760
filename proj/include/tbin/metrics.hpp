#pragma once

// Binary cross entropy and rank-sum AUC.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "tbin/diffcore.hpp"
#include "tbin/errors.hpp"

namespace tbin {

inline constexpr double kProbClamp = 1e-7;

inline double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

// For y = 0 the complement is clamped directly: 1 - p is exact for p >= 1/2,
// whereas 1 - clamp(p) near 1 - 1e-7 cancels most of its digits.
inline double bce_term(double p, int y) {
  return y == 1 ? -std::log(clamp_prob(p)) : -std::log(clamp_prob(1.0 - p));
}

// -mean(y log p + (1 - y) log(1 - p)), p clamped to [1e-7, 1 - 1e-7].
inline double bce_loss(std::span<const double> preds, std::span<const int> labels) {
  if (preds.empty()) throw MetricError("bce_loss: empty batch");
  if (preds.size() != labels.size()) throw DimensionError("bce_loss: prediction/label count mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) total += bce_term(preds[i], labels[i]);
  return total / static_cast<double>(preds.size());
}

// Differentiable single-example BCE on a 1x1 probability, multiplied by
// `weight` (1/B for a batch mean). The gradient is zero where the clamp is active.
inline Var bce_loss(Var prob, int label, double weight = 1.0) {
  const double p = prob.value()(0, 0);
  const double loss = weight * bce_term(p, label);
  return prob.graph->make(Tensor2(1, 1, loss), {prob}, [prob, label, weight](Graph& g, std::size_t self) {
    const double p = g.value(prob.id)(0, 0);
    if (p < kProbClamp || p > 1.0 - kProbClamp) return;
    const double dp = label == 1 ? -1.0 / p : 1.0 / (1.0 - p);
    g.grad_buffer(prob.id)(0, 0) += g.grad(self)(0, 0) * weight * dp;
  });
}

// Probability that a random positive outranks a random negative, ties
// counted as one half. Computed from average ranks.
inline double auc(std::span<const double> preds, std::span<const int> labels) {
  if (preds.size() != labels.size()) throw DimensionError("auc: prediction/label count mismatch");
  const std::size_t n = preds.size();
  std::size_t pos = 0;
  for (int y : labels) pos += y == 1 ? 1 : 0;
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) throw MetricError("auc: needs at least one positive and one negative");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return preds[a] < preds[b]; });

  // Ranks are 1-based; tied groups share the mean rank. Every quantity is a
  // multiple of 1/2 well below 2^52, so the sums are exact.
  double pos_rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && preds[order[j]] == preds[order[i]]) ++j;
    const double mean_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) pos_rank_sum += mean_rank;
    i = j;
  }
  const double p = static_cast<double>(pos);
  const double u = pos_rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(neg));
}

}  // namespace tbin
