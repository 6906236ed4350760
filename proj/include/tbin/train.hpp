#pragma once

// Optimizers, the training step and evaluation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tbin/metrics.hpp"
#include "tbin/model.hpp"

namespace tbin {

enum class OptimizerKind { kSgd, kAdam };

inline OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "sgd") return OptimizerKind::kSgd;
  if (s == "adam") return OptimizerKind::kAdam;
  throw ConfigError("unknown optimizer '" + std::string(s) + "' (expected sgd, adam)");
}

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Plain SGD or Adam over ModelWeights. Updated weights are rounded to float.
class Optimizer {
 public:
  Optimizer(OptimizerConfig cfg, const ModelWeights& like) : cfg_(cfg) {
    if (!(cfg_.learning_rate >= 0.0)) throw ConfigError("optimizer: learning rate must be >= 0");
    if (cfg_.kind == OptimizerKind::kAdam) {
      m_ = zeros_like(like);
      v_ = zeros_like(like);
    }
  }

  const OptimizerConfig& config() const noexcept { return cfg_; }
  std::uint64_t steps() const noexcept { return t_; }

  void step(ModelWeights& w, const ModelWeights& grads) {
    ++t_;
    if (cfg_.kind == OptimizerKind::kSgd) {
      zip_tensors(w, grads, [&](Tensor2& p, const Tensor2& g) {
        for (std::size_t i = 0; i < p.size(); ++i) p[i] -= cfg_.learning_rate * g[i];
        round_to_float(p);
      });
      return;
    }
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    std::vector<Tensor2*> ms, vs;
    for_each_tensor(m_, [&](const std::string&, Tensor2& t) { ms.push_back(&t); });
    for_each_tensor(v_, [&](const std::string&, Tensor2& t) { vs.push_back(&t); });
    std::size_t k = 0;
    zip_tensors(w, grads, [&](Tensor2& p, const Tensor2& g) {
      Tensor2& m = *ms[k];
      Tensor2& v = *vs[k];
      ++k;
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        p[i] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
      round_to_float(p);
    });
  }

 private:
  OptimizerConfig cfg_;
  ModelWeights m_, v_;
  std::uint64_t t_ = 0;
};

// Mean BCE over the batch and its gradient w.r.t. every weight.
struct LossAndGrad {
  double loss = 0.0;
  ModelWeights grads;
};

inline LossAndGrad loss_and_grad(const Model& model, std::span<const Sample> batch) {
  if (batch.empty()) throw TrainingError("train_step: empty batch");
  LossAndGrad out{0.0, zeros_like(model.weights)};
  const double weight = 1.0 / static_cast<double>(batch.size());
  for (const Sample& s : batch) {
    Graph g;
    ModelVars p = bind(g, model.weights, &out.grads);
    Var loss = bce_loss(forward(g, model, p, s), s.label, weight);
    out.loss += loss.value()(0, 0);
    g.backward(loss);
  }
  return out;
}

// Forward + mean BCE + backward + one optimizer update. Returns the batch loss.
inline double train_step(Model& model, Optimizer& opt, std::span<const Sample> batch) {
  LossAndGrad lg = loss_and_grad(model, batch);
  if (!std::isfinite(lg.loss)) {
    throw TrainingError("train_step: non-finite loss " + std::to_string(lg.loss) + " at step " +
                        std::to_string(opt.steps() + 1));
  }
  bool finite = true;
  for_each_tensor(lg.grads, [&](const std::string&, const Tensor2& t) { finite = finite && all_finite(t); });
  if (!finite) throw TrainingError("train_step: non-finite gradient at step " + std::to_string(opt.steps() + 1));
  opt.step(model.weights, lg.grads);
  return lg.loss;
}

struct EvalMetrics {
  double auc = 0.0;
  double logloss = 0.0;
};

inline std::vector<double> predict_all(const Model& model, std::span<const Sample> samples) {
  std::vector<double> preds;
  preds.reserve(samples.size());
  for (const Sample& s : samples) preds.push_back(predict(model, s));
  return preds;
}

inline EvalMetrics evaluate(const Model& model, std::span<const Sample> samples) {
  const std::vector<double> preds = predict_all(model, samples);
  std::vector<int> labels;
  labels.reserve(samples.size());
  for (const Sample& s : samples) labels.push_back(s.label);
  return {auc(preds, labels), bce_loss(preds, labels)};
}

struct TrainConfig {
  OptimizerConfig optimizer;
  std::size_t batch_size = 32;
  std::size_t steps = 1000;
  std::size_t eval_every = 100;  // 0 disables intermediate evaluation
  std::uint64_t seed = 7;

  void validate() const {
    if (batch_size == 0) throw ConfigError("train config: batch_size must be positive");
    if (!(optimizer.learning_rate >= 0.0)) throw ConfigError("train config: learning_rate must be >= 0");
  }
};

struct MetricsRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double auc = 0.0;
  double logloss = 0.0;
};

// Minibatch training with a per-epoch shuffle drawn from `cfg.seed`. The
// callback receives one record every `eval_every` steps and after the last.
inline void train(Model& model, std::span<const Sample> train_set, std::span<const Sample> val_set,
                  const TrainConfig& cfg, const std::function<void(const MetricsRecord&)>& on_metrics = {}) {
  cfg.validate();
  if (train_set.empty()) throw TrainingError("train: empty training set");
  Optimizer opt(cfg.optimizer, model.weights);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();
  std::vector<Sample> batch;
  double last_loss = 0.0;

  auto report = [&](std::size_t step) {
    if (!on_metrics) return;
    MetricsRecord r{step, last_loss, 0.0, 0.0};
    if (!val_set.empty()) {
      const EvalMetrics m = evaluate(model, val_set);
      r.auc = m.auc;
      r.logloss = m.logloss;
    }
    on_metrics(r);
  };

  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    batch.clear();
    while (batch.size() < std::min(cfg.batch_size, train_set.size())) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(train_set[order[cursor++]]);
    }
    last_loss = train_step(model, opt, batch);
    if (cfg.eval_every != 0 && step % cfg.eval_every == 0 && step != cfg.steps) report(step);
  }
  report(cfg.steps);
}

}  // namespace tbin
