#pragma once

// The full network: input projection, LSH sort, chunked transformer blocks,
// interest pooling, target attention and the CTR head.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "tbin/chunk_attention.hpp"
#include "tbin/diffcore.hpp"
#include "tbin/fields.hpp"
#include "tbin/interest.hpp"
#include "tbin/lsh.hpp"

namespace tbin {

enum class AttentionSchema {
  kShiftedChunk,  // alternating C-SA / SC-SA
  kChunk,         // C-SA in every block
  kGlobal,        // full attention over the sequence
};

inline std::string_view schema_name(AttentionSchema s) {
  switch (s) {
    case AttentionSchema::kShiftedChunk: return "sc-sa";
    case AttentionSchema::kChunk: return "c-sa";
    case AttentionSchema::kGlobal: return "g-sa";
  }
  return "?";
}

inline AttentionSchema parse_schema(std::string_view s) {
  if (s == "sc-sa") return AttentionSchema::kShiftedChunk;
  if (s == "c-sa") return AttentionSchema::kChunk;
  if (s == "g-sa") return AttentionSchema::kGlobal;
  throw ConfigError("unknown attention schema '" + std::string(s) + "' (expected sc-sa, c-sa, g-sa)");
}

struct ModelConfig {
  std::size_t input_dim = 32;     // d_b
  std::size_t model_dim = 32;     // d
  std::size_t target_dim = 32;    // d_t
  std::size_t user_dim = 8;       // d_u
  std::size_t blocks = 4;         // T
  std::size_t chunk_size = 8;     // c
  std::size_t hash_bits = 4;      // m
  std::size_t heads = 1;
  std::size_t score_hidden = 32;  // hidden width of the score MLP
  std::size_t head_hidden = 64;   // hidden width of the CTR head
  std::size_t seq_len = 0;        // keep the most recent seq_len behaviors; 0 keeps all
  AttentionSchema schema = AttentionSchema::kShiftedChunk;
  double ln_eps = kLayerNormEps;
  std::uint64_t seed = 7;

  void validate() const {
    auto positive = [](std::size_t v, const char* name) {
      if (v == 0) throw ConfigError(std::string("model config: ") + name + " must be positive");
    };
    positive(input_dim, "input_dim");
    positive(model_dim, "model_dim");
    positive(target_dim, "target_dim");
    positive(user_dim, "user_dim");
    positive(blocks, "blocks");
    positive(hash_bits, "hash_bits");
    positive(score_hidden, "score_hidden");
    positive(head_hidden, "head_hidden");
    if (blocks % 2 != 0) throw ConfigError("model config: blocks must be even");
    if (chunk_size < 2 || chunk_size % 2 != 0) throw ConfigError("model config: chunk_size must be even and >= 2");
    if (hash_bits > lsh::kMaxBucketBits) throw ConfigError("model config: hash_bits too large");
    if (heads == 0 || model_dim % heads != 0) throw ConfigError("model config: heads must divide model_dim");
    if (!(ln_eps > 0.0)) throw ConfigError("model config: ln_eps must be positive");
  }
};

template <class T>
struct HeadParamsT {
  T w1, b1, w2, b2;
  static constexpr std::array<std::string_view, 4> kNames{"w1", "b1", "w2", "b2"};
  auto fields() { return std::tie(w1, b1, w2, b2); }
  auto fields() const { return std::tie(w1, b1, w2, b2); }
};

template <class T>
struct ModelWeightsT {
  T input_w, input_b;
  std::vector<BlockParamsT<T>> blocks;
  TargetAttentionParamsT<T> target;
  HeadParamsT<T> head;
};

using ModelWeights = ModelWeightsT<Tensor2>;
using ModelVars = ModelWeightsT<Var>;

// Visits every tensor in the fixed declared order with a dotted name.
template <class W, class F>
void for_each_tensor(W& w, F&& f) {
  f(std::string("input_w"), w.input_w);
  f(std::string("input_b"), w.input_b);
  for (std::size_t i = 0; i < w.blocks.size(); ++i) {
    for_each_field(w.blocks[i], [&](std::string_view n, auto& t) {
      f("block" + std::to_string(i) + "." + std::string(n), t);
    });
  }
  for_each_field(w.target, [&](std::string_view n, auto& t) { f("target." + std::string(n), t); });
  for_each_field(w.head, [&](std::string_view n, auto& t) { f("head." + std::string(n), t); });
}

template <class A, class B, class F>
void zip_tensors(A& a, B& b, F&& f) {
  f(a.input_w, b.input_w);
  f(a.input_b, b.input_b);
  if (a.blocks.size() != b.blocks.size()) throw DimensionError("zip_tensors: block count mismatch");
  for (std::size_t i = 0; i < a.blocks.size(); ++i) {
    zip_fields(a.blocks[i], b.blocks[i], [&](std::string_view, auto& x, auto& y) { f(x, y); });
  }
  zip_fields(a.target, b.target, [&](std::string_view, auto& x, auto& y) { f(x, y); });
  zip_fields(a.head, b.head, [&](std::string_view, auto& x, auto& y) { f(x, y); });
}

// Same shapes as `w`, all zeros.
inline ModelWeights zeros_like(const ModelWeights& w) {
  ModelWeights z = w;
  for_each_tensor(z, [](const std::string&, Tensor2& t) { t.fill(0.0); });
  return z;
}

inline std::size_t parameter_count(const ModelWeights& w) {
  std::size_t n = 0;
  for_each_tensor(w, [&](const std::string&, const Tensor2& t) { n += t.size(); });
  return n;
}

// Rounds every entry to the nearest float so weights survive f32 storage.
inline void round_to_float(Tensor2& t) {
  for (double& v : t.data()) v = static_cast<double>(static_cast<float>(v));
}

struct Model {
  ModelConfig config;
  lsh::ProjectionMatrix projection;
  ModelWeights weights;
};

// Zero weights with the right shapes (LN gains one).
inline ModelWeights zero_weights(const ModelConfig& cfg) {
  const std::size_t d = cfg.model_dim;
  ModelWeights w;
  w.input_w = Tensor2(cfg.input_dim, d);
  w.input_b = Tensor2(1, d);
  w.blocks.assign(cfg.blocks, zero_block(d));
  w.target.target_w = Tensor2(cfg.target_dim, d);
  w.target.target_b = Tensor2(1, d);
  w.target.score_w1 = Tensor2(2 * d, cfg.score_hidden);
  w.target.score_b1 = Tensor2(1, cfg.score_hidden);
  w.target.score_w2 = Tensor2(cfg.score_hidden, 1);
  w.target.score_b2 = Tensor2(1, 1);
  w.head.w1 = Tensor2(d + cfg.target_dim + cfg.user_dim, cfg.head_hidden);
  w.head.b1 = Tensor2(1, cfg.head_hidden);
  w.head.w2 = Tensor2(cfg.head_hidden, 1);
  w.head.b2 = Tensor2(1, 1);
  return w;
}

inline constexpr double kBlockInitStd = 0.02;

// Projection matrix seeded from seed + 1, weights from seed. Block weights
// ~ N(0, 0.02) with the residual-branch outputs (wo, mlp_w2) zero so every
// block starts as the identity; input, target and head layers ~ N(0, 1/fan_in).
inline Model init_model(const ModelConfig& cfg) {
  cfg.validate();
  Model m{cfg, lsh::ProjectionMatrix::sample(cfg.input_dim, cfg.hash_bits, cfg.seed + 1),
          zero_weights(cfg)};
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto fill = [&](Tensor2& t, double std) {
    for (double& v : t.data()) v = std * normal(rng);
  };
  auto fan_in = [&](Tensor2& t) { fill(t, 1.0 / std::sqrt(static_cast<double>(t.rows()))); };

  fan_in(m.weights.input_w);
  for (BlockParams& b : m.weights.blocks) {
    fill(b.wq, kBlockInitStd);
    fill(b.wk, kBlockInitStd);
    fill(b.wv, kBlockInitStd);
    fill(b.mlp_w1, kBlockInitStd);
  }
  fan_in(m.weights.target.target_w);
  fan_in(m.weights.target.score_w1);
  fan_in(m.weights.target.score_w2);
  fan_in(m.weights.head.w1);
  fan_in(m.weights.head.w2);
  for_each_tensor(m.weights, [](const std::string&, Tensor2& t) { round_to_float(t); });
  return m;
}

// One training/eval example.
struct Sample {
  Tensor2 user;       // 1 x d_u
  Tensor2 target;     // 1 x d_t
  Tensor2 behaviors;  // L x d_b
  int label = 0;

  void validate(const ModelConfig& cfg) const {
    if (label != 0 && label != 1) throw DimensionError("sample: label must be 0 or 1");
    if (behaviors.rows() == 0) throw DimensionError("sample: empty behavior sequence");
    if (behaviors.cols() != cfg.input_dim || user.rows() != 1 || user.cols() != cfg.user_dim ||
        target.rows() != 1 || target.cols() != cfg.target_dim) {
      throw DimensionError("sample: behaviors " + behaviors.shape() + ", target " + target.shape() +
                           ", user " + user.shape() + " do not match the model dimensions");
    }
  }
};

// Creates one parameter leaf per weight tensor. Gradients are added into
// `grads` (same shapes) after backward when it is non-null.
inline ModelVars bind(Graph& g, const ModelWeights& w, ModelWeights* grads = nullptr) {
  ModelVars v;
  v.blocks.resize(w.blocks.size());
  if (grads != nullptr) {
    if (grads->blocks.size() != w.blocks.size()) throw DimensionError("bind: gradient block count mismatch");
    std::vector<Tensor2*> sinks;
    for_each_tensor(*grads, [&](const std::string&, Tensor2& t) { sinks.push_back(&t); });
    std::size_t i = 0;
    zip_tensors(w, v, [&](const Tensor2& t, Var& out) { out = g.parameter(t, sinks.at(i++)); });
  } else {
    zip_tensors(w, v, [&](const Tensor2& t, Var& out) { out = g.parameter(t); });
  }
  return v;
}

// Intermediate results of one forward pass, for inspection and tests.
struct ForwardTrace {
  lsh::HashAssignment assignment;
  ChunkLayout layout;
  std::vector<BlockPairTrace> pairs;
  Tensor2 interests;
  Tensor2 scores;
  Tensor2 interest_repr;
};

// Most recent `seq_len` rows (all when seq_len is 0 or larger than L).
inline Tensor2 recent_rows(const Tensor2& x, std::size_t seq_len) {
  if (seq_len == 0 || seq_len >= x.rows()) return x;
  Tensor2 out(seq_len, x.cols());
  const std::size_t start = x.rows() - seq_len;
  std::copy(x.data().begin() + start * x.cols(), x.data().end(), out.data().begin());
  return out;
}

// Predicted click probability as a 1x1 Var.
inline Var forward(Graph& g, const Model& model, const ModelVars& p, const Sample& sample,
                   ForwardTrace* trace = nullptr) {
  const ModelConfig& cfg = model.config;
  sample.validate(cfg);
  const Tensor2 behaviors = recent_rows(sample.behaviors, cfg.seq_len);

  lsh::SortedSequence sorted = lsh::hash_and_sort(behaviors, model.projection);
  const ChunkLayout layout = partition(behaviors.rows(), cfg.chunk_size);
  const std::vector<std::int64_t> ids = pad_ids(sorted.assignment.sorted_ids(), layout);

  Var x = linear(g.constant(std::move(sorted.sorted)), p.input_w, p.input_b);
  if (layout.pad_count > 0) x = concat_rows({x, g.constant(Tensor2(layout.pad_count, cfg.model_dim))});

  const AttentionOptions opt{cfg.heads, cfg.ln_eps};
  if (trace != nullptr) {
    trace->layout = layout;
    trace->pairs.assign(cfg.blocks / 2, {});
  }
  if (cfg.schema == AttentionSchema::kGlobal) {
    ChunkLayout global = layout;
    global.chunk_size = layout.padded_length;
    global.chunk_count = 1;
    std::vector<std::int64_t> gids(ids.size(), 0);
    for (std::size_t k = layout.length; k < gids.size(); ++k) gids[k] = kPadBucket;
    for (std::size_t b = 0; b < cfg.blocks; ++b) {
      Tensor2* w = nullptr;
      if (trace != nullptr) w = b % 2 == 0 ? &trace->pairs[b / 2].chunk_weights : &trace->pairs[b / 2].shifted_weights;
      x = transformer_block(x, gids, global, p.blocks[b], opt, w);
    }
  } else {
    for (std::size_t b = 0; b < cfg.blocks; b += 2) {
      BlockPairTrace* t = trace != nullptr ? &trace->pairs[b / 2] : nullptr;
      if (cfg.schema == AttentionSchema::kShiftedChunk) {
        x = block_pair(x, ids, layout, p.blocks[b], p.blocks[b + 1], opt, t);
      } else {
        x = transformer_block(x, ids, layout, p.blocks[b], opt, t ? &t->chunk_weights : nullptr);
        x = transformer_block(x, ids, layout, p.blocks[b + 1], opt, t ? &t->shifted_weights : nullptr);
      }
    }
  }

  const auto validity = trailing_pad_validity(layout);
  InterestSet interests = pool_chunks(x, layout, validity);
  Var target = g.constant(sample.target);
  Var scores = attention_scores(interests, target, p.target);
  Var repr = aggregate(interests, scores);

  Var features = concat_cols(concat_cols(repr, target), g.constant(sample.user));
  Var hidden = relu(linear(features, p.head.w1, p.head.b1));
  Var prob = sigmoid(linear(hidden, p.head.w2, p.head.b2));

  if (trace != nullptr) {
    trace->assignment = std::move(sorted.assignment);
    trace->interests = interests.vectors.value();
    trace->scores = scores.value();
    trace->interest_repr = repr.value();
  }
  return prob;
}

// Inference-only forward pass.
inline double predict(const Model& model, const Sample& sample) {
  Graph g(false);
  ModelVars p = bind(g, model.weights);
  return forward(g, model, p, sample).value()(0, 0);
}

}  // namespace tbin
