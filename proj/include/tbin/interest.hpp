#pragma once

// Chunk pooling into interest vectors and target attention over them.

#include <array>
#include <cstdint>
#include <span>
#include <string_view>
#include <tuple>
#include <vector>

#include "tbin/chunk_attention.hpp"
#include "tbin/diffcore.hpp"

namespace tbin {

struct InterestSet {
  Var vectors;                              // C_eff x d
  std::vector<std::size_t> chunk_validity;  // non-pad rows per chunk, all C chunks
  std::vector<std::size_t> kept_chunks;     // chunk index of each row of `vectors`

  std::size_t count() const noexcept { return kept_chunks.size(); }
};

// Validity flags for a layout whose padding sits after the real rows.
inline std::vector<std::uint8_t> trailing_pad_validity(const ChunkLayout& layout) {
  std::vector<std::uint8_t> v(layout.padded_length, 0);
  std::fill_n(v.begin(), layout.length, std::uint8_t{1});
  return v;
}

// Mean of the valid rows of each chunk; chunks with no valid row are dropped.
inline InterestSet pool_chunks(Var x, const ChunkLayout& layout, std::span<const std::uint8_t> row_valid) {
  if (x.rows() != layout.padded_length || row_valid.size() != layout.padded_length) {
    throw DimensionError("pool_chunks: sequence " + x.value().shape() + " vs padded length " +
                         std::to_string(layout.padded_length));
  }
  const std::size_t c = layout.chunk_size;
  InterestSet out;
  out.chunk_validity.assign(layout.chunk_count, 0);
  for (std::size_t j = 0; j < layout.chunk_count; ++j) {
    for (std::size_t r = j * c; r < (j + 1) * c; ++r) out.chunk_validity[j] += row_valid[r] ? 1 : 0;
    if (out.chunk_validity[j] > 0) out.kept_chunks.push_back(j);
  }
  if (out.kept_chunks.empty()) throw DimensionError("pool_chunks: no valid rows, sequence is empty");

  Tensor2 pool(out.kept_chunks.size(), layout.padded_length);
  for (std::size_t k = 0; k < out.kept_chunks.size(); ++k) {
    const std::size_t j = out.kept_chunks[k];
    const double w = 1.0 / static_cast<double>(out.chunk_validity[j]);
    for (std::size_t r = j * c; r < (j + 1) * c; ++r)
      if (row_valid[r]) pool(k, r) = w;
  }
  out.vectors = matmul(x.graph->constant(std::move(pool)), x);
  return out;
}

template <class T>
struct TargetAttentionParamsT {
  T target_w, target_b;        // target transform d_t -> d
  T score_w1, score_b1;        // [interest, target] 2d -> hidden
  T score_w2, score_b2;        // hidden -> 1

  static constexpr std::array<std::string_view, 6> kNames{"target_w", "target_b", "score_w1",
                                                          "score_b1", "score_w2", "score_b2"};
  auto fields() { return std::tie(target_w, target_b, score_w1, score_b1, score_w2, score_b2); }
  auto fields() const { return std::tie(target_w, target_b, score_w1, score_b1, score_w2, score_b2); }
};

using TargetAttentionParams = TargetAttentionParamsT<Tensor2>;
using TargetAttentionVars = TargetAttentionParamsT<Var>;

// Raw relevance score of every interest vector w.r.t. the target: C_eff x 1.
inline Var attention_scores(const InterestSet& interests, Var target, const TargetAttentionVars& p) {
  Var t = linear(target, p.target_w, p.target_b);
  if (t.cols() != interests.vectors.cols()) {
    throw DimensionError("attention_scores: transformed target " + t.value().shape() +
                         " vs interests " + interests.vectors.value().shape());
  }
  Var ones = target.graph->constant(Tensor2(interests.count(), 1, 1.0));
  Var pair = concat_cols(interests.vectors, matmul(ones, t));
  Var hidden = relu(linear(pair, p.score_w1, p.score_b1));
  return linear(hidden, p.score_w2, p.score_b2);
}

// sum_j s_j x_j with unnormalized scores: 1 x d.
inline Var aggregate(const InterestSet& interests, Var scores) {
  if (scores.rows() != interests.count() || scores.cols() != 1) {
    throw DimensionError("aggregate: scores " + scores.value().shape() + " for " +
                         std::to_string(interests.count()) + " interests");
  }
  return matmul(transpose(scores), interests.vectors);
}

}  // namespace tbin
