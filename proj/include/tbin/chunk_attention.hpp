#pragma once

// Chunk partitioning, same-bucket masks, and the chunked / shifted-chunk
// pre-norm transformer blocks that run over a bucket-sorted sequence.

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include "tbin/diffcore.hpp"
#include "tbin/errors.hpp"
#include "tbin/fields.hpp"
#include "tbin/tensor.hpp"

namespace tbin {

// Bucket id carried by padding rows; real ids are non-negative.
inline constexpr std::int64_t kPadBucket = -1;

struct ChunkLayout {
  std::size_t length = 0;         // real rows L
  std::size_t padded_length = 0;  // L_pad, a multiple of chunk_size
  std::size_t chunk_size = 0;     // c
  std::size_t chunk_count = 0;    // C = L_pad / c
  std::size_t pad_count = 0;      // L_pad - L
  std::size_t shift = 0;          // 0 for C-SA, c/2 for SC-SA

  ChunkLayout shifted() const {
    ChunkLayout s = *this;
    s.shift = chunk_size / 2;
    return s;
  }
};

inline ChunkLayout partition(std::size_t length, std::size_t chunk_size) {
  if (chunk_size < 2 || chunk_size % 2 != 0) {
    throw ConfigError("partition: chunk size must be even and >= 2, got " + std::to_string(chunk_size));
  }
  ChunkLayout l;
  l.length = length;
  l.chunk_size = chunk_size;
  l.chunk_count = (length + chunk_size - 1) / chunk_size;
  l.padded_length = l.chunk_count * chunk_size;
  l.pad_count = l.padded_length - length;
  return l;
}

// Appends the reserved pad id up to the padded length.
inline std::vector<std::int64_t> pad_ids(std::span<const std::int64_t> ids, const ChunkLayout& layout) {
  if (ids.size() != layout.length) throw DimensionError("pad_ids: id count does not match layout");
  std::vector<std::int64_t> out(ids.begin(), ids.end());
  out.resize(layout.padded_length, kPadBucket);
  return out;
}

// M[i][j] = 0 for equal ids, sentinel otherwise.
inline Tensor2 bucket_mask(std::span<const std::int64_t> ids) {
  const std::size_t c = ids.size();
  Tensor2 m(c, c, kMaskSentinel);
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j)
      if (ids[i] == ids[j]) m(i, j) = 0.0;
  return m;
}

// Row k of the shifted sequence is row (k + offset) mod n of the input.
inline std::vector<std::size_t> shift_index(std::size_t n, std::size_t offset) {
  std::vector<std::size_t> idx(n);
  for (std::size_t k = 0; k < n; ++k) idx[k] = (k + offset) % n;
  return idx;
}

struct ShiftedSequence {
  Tensor2 x;
  std::vector<std::int64_t> ids;
};

inline ShiftedSequence cyclic_shift(const Tensor2& x, std::span<const std::int64_t> ids,
                                    std::size_t offset) {
  const std::size_t n = x.rows();
  if (ids.size() != n) throw DimensionError("cyclic_shift: id count does not match rows");
  if (n == 0) return {x, {}};
  const auto idx = shift_index(n, offset % n);
  ShiftedSequence out{gather_rows(x, idx), std::vector<std::int64_t>(n)};
  for (std::size_t k = 0; k < n; ++k) out.ids[k] = ids[idx[k]];
  return out;
}

inline ShiftedSequence reverse_shift(const Tensor2& x, std::span<const std::int64_t> ids,
                                     std::size_t offset) {
  const std::size_t n = x.rows();
  if (n == 0) return {x, {}};
  return cyclic_shift(x, ids, (n - offset % n) % n);
}

template <class T>
struct BlockParamsT {
  T wq, wk, wv, wo;
  T ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  T mlp_w1, mlp_b1, mlp_w2, mlp_b2;

  static constexpr std::array<std::string_view, 12> kNames{
      "wq",      "wk",      "wv",      "wo",     "ln1_gain", "ln1_bias",
      "ln2_gain", "ln2_bias", "mlp_w1", "mlp_b1", "mlp_w2",   "mlp_b2"};

  auto fields() {
    return std::tie(wq, wk, wv, wo, ln1_gain, ln1_bias, ln2_gain, ln2_bias, mlp_w1, mlp_b1, mlp_w2, mlp_b2);
  }
  auto fields() const {
    return std::tie(wq, wk, wv, wo, ln1_gain, ln1_bias, ln2_gain, ln2_bias, mlp_w1, mlp_b1, mlp_w2, mlp_b2);
  }
};

using BlockParams = BlockParamsT<Tensor2>;
using BlockVars = BlockParamsT<Var>;

inline constexpr std::size_t kMlpExpansion = 4;

// Zero-filled block of model width d (LN gains set to one).
inline BlockParams zero_block(std::size_t d) {
  BlockParams p;
  p.wq = p.wk = p.wv = p.wo = Tensor2(d, d);
  p.ln1_gain = p.ln2_gain = Tensor2(1, d, 1.0);
  p.ln1_bias = p.ln2_bias = Tensor2(1, d);
  p.mlp_w1 = Tensor2(d, kMlpExpansion * d);
  p.mlp_b1 = Tensor2(1, kMlpExpansion * d);
  p.mlp_w2 = Tensor2(kMlpExpansion * d, d);
  p.mlp_b2 = Tensor2(1, d);
  return p;
}

struct AttentionOptions {
  std::size_t heads = 1;
  double ln_eps = kLayerNormEps;
};

// Single chunk: softmax(Q K^T / sqrt(d_head) + M) V per head, heads
// concatenated, then the output projection. When `weights` is given it
// receives the realized c x c attention matrix averaged over heads.
inline Var chunk_self_attention(Var x, const BlockVars& p, const Tensor2& mask,
                                std::size_t heads = 1, Tensor2* weights = nullptr) {
  const std::size_t d = p.wq.rows();
  if (x.cols() != d) throw DimensionError("chunk_self_attention: input " + x.value().shape() +
                                          " vs W_Q " + p.wq.value().shape());
  if (heads == 0 || d % heads != 0) throw ConfigError("chunk_self_attention: heads must divide d");
  if (mask.rows() != x.rows() || mask.cols() != x.rows()) {
    throw DimensionError("chunk_self_attention: mask " + mask.shape() + " for chunk " + x.value().shape());
  }
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Var q = matmul(x, p.wq);
  Var k = matmul(x, p.wk);
  Var v = matmul(x, p.wv);
  if (weights != nullptr) *weights = Tensor2(x.rows(), x.rows());

  Var merged{};
  for (std::size_t h = 0; h < heads; ++h) {
    Var qh = heads == 1 ? q : slice_cols(q, h * dh, dh);
    Var kh = heads == 1 ? k : slice_cols(k, h * dh, dh);
    Var vh = heads == 1 ? v : slice_cols(v, h * dh, dh);
    Var probs = masked_softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt), mask);
    if (weights != nullptr) {
      for (std::size_t i = 0; i < weights->size(); ++i)
        (*weights)[i] += probs.value()[i] / static_cast<double>(heads);
    }
    Var oh = matmul(probs, vh);
    merged = h == 0 ? oh : concat_cols(merged, oh);
  }
  return matmul(merged, p.wo);
}

// Attention over a whole padded sequence: rotate by `shift`, attend within
// each chunk under its bucket mask, rotate back. `weights`, when given,
// receives the L_pad x L_pad realized attention matrix in unshifted order.
inline Var chunked_attention(Var x, std::span<const std::int64_t> ids, const ChunkLayout& layout,
                             const BlockVars& p, const AttentionOptions& opt = {},
                             Tensor2* weights = nullptr) {
  const std::size_t n = layout.padded_length;
  const std::size_t c = layout.chunk_size;
  if (x.rows() != n || ids.size() != n) {
    throw DimensionError("chunked_attention: sequence " + x.value().shape() + " with " +
                         std::to_string(ids.size()) + " ids vs padded length " + std::to_string(n));
  }
  const std::size_t offset = layout.shift % n;
  const auto idx = shift_index(n, offset);
  Var xs = offset == 0 ? x : gather_rows(x, idx);
  std::vector<std::int64_t> sid(n);
  for (std::size_t k = 0; k < n; ++k) sid[k] = ids[idx[k]];

  if (weights != nullptr) *weights = Tensor2(n, n);
  std::vector<Var> outs;
  outs.reserve(layout.chunk_count);
  Tensor2 local;
  for (std::size_t j = 0; j < layout.chunk_count; ++j) {
    Var xc = layout.chunk_count == 1 ? xs : slice_rows(xs, j * c, c);
    Tensor2 mask = bucket_mask(std::span<const std::int64_t>(sid).subspan(j * c, c));
    outs.push_back(chunk_self_attention(xc, p, mask, opt.heads, weights ? &local : nullptr));
    if (weights != nullptr) {
      for (std::size_t a = 0; a < c; ++a)
        for (std::size_t b = 0; b < c; ++b) (*weights)(idx[j * c + a], idx[j * c + b]) = local(a, b);
    }
  }
  Var y = outs.size() == 1 ? outs.front() : concat_rows(outs);
  if (offset == 0) return y;
  return gather_rows(y, shift_index(n, n - offset));
}

// One pre-norm block: a = x + SA(LN(x)); b = a + MLP(LN(a)).
inline Var transformer_block(Var x, std::span<const std::int64_t> ids, const ChunkLayout& layout,
                             const BlockVars& p, const AttentionOptions& opt = {},
                             Tensor2* weights = nullptr) {
  Var a = x + chunked_attention(layer_norm(x, p.ln1_gain, p.ln1_bias, opt.ln_eps), ids, layout, p,
                                opt, weights);
  Var hidden = relu(linear(layer_norm(a, p.ln2_gain, p.ln2_bias, opt.ln_eps), p.mlp_w1, p.mlp_b1));
  return a + linear(hidden, p.mlp_w2, p.mlp_b2);
}

// Realized attention matrices of the two stages of a block pair.
struct BlockPairTrace {
  Tensor2 chunk_weights;
  Tensor2 shifted_weights;
};

// C-SA block followed by an SC-SA block (shift by half a chunk).
inline Var block_pair(Var x, std::span<const std::int64_t> ids, const ChunkLayout& layout,
                      const BlockVars& first, const BlockVars& second,
                      const AttentionOptions& opt = {}, BlockPairTrace* trace = nullptr) {
  ChunkLayout plain = layout;
  plain.shift = 0;
  Var b1 = transformer_block(x, ids, plain, first, opt, trace ? &trace->chunk_weights : nullptr);
  return transformer_block(b1, ids, layout.shifted(), second, opt,
                           trace ? &trace->shifted_weights : nullptr);
}

}  // namespace tbin
