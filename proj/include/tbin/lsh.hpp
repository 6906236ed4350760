#pragma once

// Random-projection hashing of behavior embeddings and the stable bucket sort.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tbin/errors.hpp"
#include "tbin/tensor.hpp"

namespace tbin::lsh {

inline constexpr std::size_t kMaxBucketBits = 62;

// d_b x m matrix of i.i.d. standard normal entries. Entries are rounded to
// float so the matrix survives a float32 checkpoint unchanged.
struct ProjectionMatrix {
  Tensor2 r;
  std::uint64_t seed = 0;

  std::size_t input_dim() const noexcept { return r.rows(); }
  std::size_t bits() const noexcept { return r.cols(); }

  static ProjectionMatrix sample(std::size_t input_dim, std::size_t bits, std::uint64_t seed) {
    if (input_dim == 0 || bits == 0) throw ConfigError("ProjectionMatrix: dimensions must be positive");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    ProjectionMatrix p{Tensor2(input_dim, bits), seed};
    for (double& v : p.r.data()) v = static_cast<double>(static_cast<float>(normal(rng)));
    return p;
  }
};

// L x m matrix of 0/1 hash bits.
struct BitMatrix {
  std::size_t rows = 0;
  std::size_t bits = 0;
  std::vector<std::uint8_t> data;

  std::uint8_t operator()(std::size_t r, std::size_t j) const { return data[r * bits + j]; }
};

struct HashAssignment {
  BitMatrix codes;
  std::vector<std::int64_t> bucket_ids;     // in input order
  std::vector<std::size_t> perm;            // sorted row k = input row perm[k]
  std::vector<std::size_t> inverse_perm;    // input row i sits at sorted row inverse_perm[i]

  std::vector<std::int64_t> sorted_ids() const {
    std::vector<std::int64_t> out(perm.size());
    for (std::size_t k = 0; k < perm.size(); ++k) out[k] = bucket_ids[perm[k]];
    return out;
  }
};

// H[i][j] = 1 iff (xb R)[i][j] > 0. Exact zeros hash to 0.
inline BitMatrix hash_codes(const Tensor2& xb, const ProjectionMatrix& proj) {
  const Tensor2& r = proj.r;
  if (xb.cols() != r.rows()) {
    throw DimensionError("hash_codes: embeddings " + xb.shape() + " vs projection " + r.shape());
  }
  BitMatrix h{xb.rows(), r.cols(), std::vector<std::uint8_t>(xb.rows() * r.cols(), 0)};
  std::vector<double> acc(r.cols());
  for (std::size_t i = 0; i < xb.rows(); ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t p = 0; p < xb.cols(); ++p) {
      const double xv = xb(i, p);
      const auto rr = r.row(p);
      for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += xv * rr[j];
    }
    for (std::size_t j = 0; j < acc.size(); ++j) h.data[i * h.bits + j] = acc[j] > 0.0 ? 1 : 0;
  }
  return h;
}

// Big-endian integer reading of each code row.
inline std::vector<std::int64_t> bucket_ids(const BitMatrix& h) {
  if (h.bits > kMaxBucketBits) {
    throw ConfigError("bucket_ids: " + std::to_string(h.bits) + " hash bits exceeds the limit of " +
                      std::to_string(kMaxBucketBits));
  }
  std::vector<std::int64_t> ids(h.rows, 0);
  for (std::size_t i = 0; i < h.rows; ++i) {
    std::int64_t v = 0;
    for (std::size_t j = 0; j < h.bits; ++j) v = (v << 1) | h(i, j);
    ids[i] = v;
  }
  return ids;
}

inline std::vector<std::size_t> invert_permutation(std::span<const std::size_t> perm) {
  std::vector<std::size_t> inv(perm.size());
  for (std::size_t k = 0; k < perm.size(); ++k) inv[perm[k]] = k;
  return inv;
}

// Stable ordering of row indices by bucket id. When `comparisons` is given it
// is incremented once per key comparison.
inline std::vector<std::size_t> stable_order(std::span<const std::int64_t> ids,
                                             std::uint64_t* comparisons = nullptr) {
  std::vector<std::size_t> perm(ids.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  if (comparisons != nullptr) {
    std::stable_sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) {
      ++*comparisons;
      return ids[a] < ids[b];
    });
  } else {
    std::stable_sort(perm.begin(), perm.end(),
                     [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
  }
  return perm;
}

struct SortedSequence {
  HashAssignment assignment;
  Tensor2 sorted;
};

// Sorts rows of xb by bucket id, ties kept in input (temporal) order.
inline SortedSequence stable_sort(const Tensor2& xb, std::span<const std::int64_t> ids) {
  if (ids.size() != xb.rows()) {
    throw DimensionError("stable_sort: " + std::to_string(ids.size()) + " ids for " +
                         std::to_string(xb.rows()) + " rows");
  }
  SortedSequence out;
  out.assignment.bucket_ids.assign(ids.begin(), ids.end());
  out.assignment.perm = stable_order(ids);
  out.assignment.inverse_perm = invert_permutation(out.assignment.perm);
  out.sorted = gather_rows(xb, out.assignment.perm);
  return out;
}

inline Tensor2 unsort(const Tensor2& sorted, const HashAssignment& a) {
  return gather_rows(sorted, a.inverse_perm);
}

// hash_codes -> bucket_ids -> stable_sort in one call.
inline SortedSequence hash_and_sort(const Tensor2& xb, const ProjectionMatrix& proj) {
  BitMatrix codes = hash_codes(xb, proj);
  std::vector<std::int64_t> ids = bucket_ids(codes);
  SortedSequence out = stable_sort(xb, ids);
  out.assignment.codes = std::move(codes);
  return out;
}

}  // namespace tbin::lsh
