#pragma once

// Instrumented forward-only attention kernels for the four schemas and a
// sweep driver reporting exact op counts and median wall time.
//
// MACs count the attention stage only: one per element of every query-key
// dot product and one per element of every probability-weighted value
// accumulation, masked pairs included (the chunk kernels are dense).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tbin/chunk_attention.hpp"
#include "tbin/lsh.hpp"

namespace tbin::bench {

enum class Schema { kGlobal, kBucket, kChunk, kShiftedChunk };

inline std::string_view schema_name(Schema s) {
  switch (s) {
    case Schema::kGlobal: return "G-SA";
    case Schema::kBucket: return "B-SA";
    case Schema::kChunk: return "C-SA";
    case Schema::kShiftedChunk: return "SC-SA";
  }
  return "?";
}

inline Schema parse_schema(std::string_view s) {
  if (s == "G-SA" || s == "g-sa") return Schema::kGlobal;
  if (s == "B-SA" || s == "b-sa") return Schema::kBucket;
  if (s == "C-SA" || s == "c-sa") return Schema::kChunk;
  if (s == "SC-SA" || s == "sc-sa") return Schema::kShiftedChunk;
  throw ConfigError("unknown benchmark schema '" + std::string(s) + "'");
}

struct OpCounter {
  std::uint64_t macs = 0;
  std::size_t peak_intermediate = 0;  // largest score matrix, in elements
};

// Attention of a group of rows among themselves. `rows` are row indices into
// q/k/v; `ids` (may be empty) are per-group-member bucket ids for masking.
// Results are written to out rows `rows`.
inline void attend_group(const Tensor2& q, const Tensor2& k, const Tensor2& v,
                         std::span<const std::size_t> rows, std::span<const std::int64_t> ids,
                         std::vector<double>& scores, Tensor2& out, OpCounter& counter) {
  const std::size_t n = rows.size();
  const std::size_t d = q.cols();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d));
  scores.resize(n * n);
  counter.peak_intermediate = std::max(counter.peak_intermediate, n * n);
  for (std::size_t a = 0; a < n; ++a) {
    const double* qa = q.row(rows[a]).data();
    for (std::size_t b = 0; b < n; ++b) {
      const double* kb = k.row(rows[b]).data();
      double s = 0.0;
      for (std::size_t p = 0; p < d; ++p) s += qa[p] * kb[p];
      scores[a * n + b] = s * inv_sqrt;
    }
  }
  counter.macs += static_cast<std::uint64_t>(n) * n * d;
  for (std::size_t a = 0; a < n; ++a) {
    double* sr = scores.data() + a * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t b = 0; b < n; ++b) {
      if (!ids.empty() && ids[a] != ids[b]) continue;
      mx = std::max(mx, sr[b]);
    }
    double total = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      const bool masked = !ids.empty() && ids[a] != ids[b];
      sr[b] = masked ? 0.0 : std::exp(sr[b] - mx);
      total += sr[b];
    }
    for (std::size_t b = 0; b < n; ++b) sr[b] /= total;
  }
  for (std::size_t a = 0; a < n; ++a) {
    double* o = out.row(rows[a]).data();
    std::fill(o, o + d, 0.0);
    const double* sr = scores.data() + a * n;
    for (std::size_t b = 0; b < n; ++b) {
      const double w = sr[b];
      const double* vb = v.row(rows[b]).data();
      for (std::size_t p = 0; p < d; ++p) o[p] += w * vb[p];
    }
  }
  counter.macs += static_cast<std::uint64_t>(n) * n * d;
}

// Every row attends to every row; the full L x L score matrix is materialized.
// `scratch` (optional) holds the score matrix between calls.
inline Tensor2 global_attention(const Tensor2& q, const Tensor2& k, const Tensor2& v, OpCounter& counter,
                                std::vector<double>* scratch = nullptr) {
  Tensor2 out(q.rows(), v.cols());
  std::vector<std::size_t> rows(q.rows());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  std::vector<double> local;
  std::vector<double>& scores = scratch != nullptr ? *scratch : local;
  attend_group(q, k, v, rows, {}, scores, out, counter);
  return out;
}

// Attention restricted to each contiguous bucket of a bucket-sorted sequence.
inline Tensor2 bucket_attention(const Tensor2& q, const Tensor2& k, const Tensor2& v,
                                std::span<const std::int64_t> sorted_ids, OpCounter& counter,
                                std::vector<double>* scratch = nullptr) {
  Tensor2 out(q.rows(), v.cols());
  std::vector<double> local;
  std::vector<double>& scores = scratch != nullptr ? *scratch : local;
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < sorted_ids.size();) {
    std::size_t j = i;
    while (j < sorted_ids.size() && sorted_ids[j] == sorted_ids[i]) ++j;
    rows.resize(j - i);
    for (std::size_t r = i; r < j; ++r) rows[r - i] = r;
    attend_group(q, k, v, rows, {}, scores, out, counter);
    i = j;
  }
  return out;
}

// Bucket-masked attention within chunks of size c after rotating by `shift`
// rows; results are written back in unrotated order.
inline Tensor2 chunk_attention(const Tensor2& q, const Tensor2& k, const Tensor2& v,
                               std::span<const std::int64_t> sorted_ids, std::size_t c, std::size_t shift,
                               OpCounter& counter, std::vector<double>* scratch = nullptr) {
  const std::size_t n = q.rows();
  if (c == 0 || n % c != 0) throw ConfigError("chunk_attention: sequence length must be a multiple of c");
  const auto idx = shift_index(n, shift % n);
  Tensor2 out(n, v.cols());
  std::vector<double> local;
  std::vector<double>& scores = scratch != nullptr ? *scratch : local;
  std::vector<std::int64_t> ids(c);
  for (std::size_t j = 0; j < n / c; ++j) {
    std::span<const std::size_t> rows(idx.data() + j * c, c);
    for (std::size_t a = 0; a < c; ++a) ids[a] = sorted_ids[rows[a]];
    attend_group(q, k, v, rows, ids, scores, out, counter);
  }
  return out;
}

inline Tensor2 run_schema(Schema s, const Tensor2& q, const Tensor2& k, const Tensor2& v,
                          std::span<const std::int64_t> sorted_ids, std::size_t c, OpCounter& counter,
                          std::vector<double>* scratch = nullptr) {
  switch (s) {
    case Schema::kGlobal: return global_attention(q, k, v, counter, scratch);
    case Schema::kBucket: return bucket_attention(q, k, v, sorted_ids, counter, scratch);
    case Schema::kChunk: return chunk_attention(q, k, v, sorted_ids, c, 0, counter, scratch);
    case Schema::kShiftedChunk: return chunk_attention(q, k, v, sorted_ids, c, c / 2, counter, scratch);
  }
  return {};
}

// Closed-form attention-stage MACs.
inline std::uint64_t global_macs(std::uint64_t l, std::uint64_t d) { return 2 * l * l * d; }
inline std::uint64_t chunk_macs(std::uint64_t l, std::uint64_t c, std::uint64_t d) { return 2 * l * c * d; }

struct SchemaReport {
  Schema schema = Schema::kGlobal;
  std::size_t length = 0;
  std::size_t chunk_size = 0;
  std::size_t dim = 0;
  std::uint64_t macs = 0;
  std::uint64_t sort_comparisons = 0;  // 0 for G-SA, which does not sort
  std::size_t peak_intermediate = 0;
  double median_ms = 0.0;
};

struct SweepConfig {
  std::vector<Schema> schemas{Schema::kGlobal, Schema::kBucket, Schema::kChunk, Schema::kShiftedChunk};
  std::vector<std::size_t> lengths{256, 512, 1024, 2048};
  std::size_t chunk_size = 64;
  std::size_t dim = 64;
  std::size_t hash_bits = 4;
  std::size_t trials = 5;
  double min_trial_ms = 20.0;  // short kernels repeat within a trial until it lasts this long
  std::uint64_t seed = 11;

  void validate() const {
    if (trials < 3) throw ConfigError("sweep: trials must be >= 3");
    if (!(min_trial_ms >= 0.0)) throw ConfigError("sweep: min_trial_ms must be >= 0");
    if (!std::is_sorted(lengths.begin(), lengths.end())) throw ConfigError("sweep: lengths must be ascending");
    if (chunk_size < 2 || chunk_size % 2 != 0) throw ConfigError("sweep: chunk size must be even and >= 2");
    for (std::size_t l : lengths) {
      if (l == 0 || l % chunk_size != 0) throw ConfigError("sweep: every length must be a multiple of the chunk size");
    }
  }
};

// Inputs shared by every schema at one sequence length: random Q, K, V
// (already in bucket order) and the sorted bucket ids of the LSH stage.
struct SweepInputs {
  Tensor2 q, k, v;
  std::vector<std::int64_t> sorted_ids;
  std::uint64_t sort_comparisons = 0;
};

inline SweepInputs make_inputs(std::size_t length, std::size_t dim, std::size_t hash_bits, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto random = [&](std::size_t r, std::size_t c) {
    Tensor2 t(r, c);
    for (double& x : t.data()) x = normal(rng);
    return t;
  };
  Tensor2 x = random(length, dim);
  SweepInputs in;
  const auto proj = lsh::ProjectionMatrix::sample(dim, hash_bits, seed + 1);
  const auto ids = lsh::bucket_ids(lsh::hash_codes(x, proj));
  const auto perm = lsh::stable_order(ids, &in.sort_comparisons);
  in.sorted_ids.resize(length);
  for (std::size_t r = 0; r < length; ++r) in.sorted_ids[r] = ids[perm[r]];
  in.q = gather_rows(random(length, dim), perm);
  in.k = gather_rows(random(length, dim), perm);
  in.v = gather_rows(random(length, dim), perm);
  return in;
}

// Single-threaded, forward-only sweep. Each (schema, L) cell gets one warm-up
// run and `trials` timed runs of the attention stage; the median is reported.
// Trials are interleaved round-robin over all cells so that a burst of
// background load lands on every cell rather than skewing one of them. Each
// cell keeps the score buffer sized by its warm-up, so timed runs exclude
// allocating (and faulting in) the score matrix. A cell whose warm-up is
// shorter than min_trial_ms runs several times per trial and reports the
// per-call time; single millisecond-scale calls jitter by ~10% here.
inline std::vector<SchemaReport> run_sweep(const SweepConfig& cfg) {
  cfg.validate();
  std::vector<SweepInputs> inputs;
  for (std::size_t length : cfg.lengths) inputs.push_back(make_inputs(length, cfg.dim, cfg.hash_bits, cfg.seed + length));

  std::vector<SchemaReport> reports;
  std::vector<const SweepInputs*> cell_inputs;
  std::vector<std::vector<double>> scratch;
  std::vector<std::size_t> reps;
  for (std::size_t li = 0; li < cfg.lengths.size(); ++li) {
    const SweepInputs& in = inputs[li];
    for (Schema s : cfg.schemas) {
      SchemaReport r{s, cfg.lengths[li], cfg.chunk_size, cfg.dim};
      r.sort_comparisons = s == Schema::kGlobal ? 0 : in.sort_comparisons;
      OpCounter warm;
      scratch.emplace_back();
      run_schema(s, in.q, in.k, in.v, in.sorted_ids, cfg.chunk_size, warm, &scratch.back());
      OpCounter again;
      const auto w0 = std::chrono::steady_clock::now();
      run_schema(s, in.q, in.k, in.v, in.sorted_ids, cfg.chunk_size, again, &scratch.back());
      const double warm_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - w0).count();
      reps.push_back(warm_ms >= cfg.min_trial_ms ? 1 : static_cast<std::size_t>(std::ceil(cfg.min_trial_ms / std::max(warm_ms, 1e-3))));
      r.macs = warm.macs;
      r.peak_intermediate = warm.peak_intermediate;
      reports.push_back(r);
      cell_inputs.push_back(&in);
    }
  }

  std::vector<std::vector<double>> times(reports.size());
  for (std::size_t t = 0; t < cfg.trials; ++t) {
    for (std::size_t cell = 0; cell < reports.size(); ++cell) {
      const SweepInputs& in = *cell_inputs[cell];
      std::vector<OpCounter> c(reps[cell]);
      const auto t0 = std::chrono::steady_clock::now();
      for (auto& counter : c)
        run_schema(reports[cell].schema, in.q, in.k, in.v, in.sorted_ids, cfg.chunk_size, counter, &scratch[cell]);
      const auto t1 = std::chrono::steady_clock::now();
      for (const auto& counter : c)
        if (counter.macs != reports[cell].macs) throw InvariantError("run_sweep: op count changed between trials");
      times[cell].push_back(std::chrono::duration<double, std::milli>(t1 - t0).count() / static_cast<double>(c.size()));
    }
  }
  for (std::size_t cell = 0; cell < reports.size(); ++cell) {
    auto& ts = times[cell];
    std::nth_element(ts.begin(), ts.begin() + ts.size() / 2, ts.end());
    reports[cell].median_ms = ts[ts.size() / 2];
  }
  return reports;
}

inline const SchemaReport& find_report(std::span<const SchemaReport> reports, Schema s, std::size_t length) {
  for (const auto& r : reports)
    if (r.schema == s && r.length == length) return r;
  throw LookupError("no report for " + std::string(schema_name(s)) + " at L=" + std::to_string(length));
}

inline void write_csv(std::ostream& os, std::span<const SchemaReport> reports) {
  os << "schema,L,c,d,macs,sort_comparisons,median_ms\n";
  for (const auto& r : reports) {
    os << schema_name(r.schema) << ',' << r.length << ',' << r.chunk_size << ',' << r.dim << ',' << r.macs << ','
       << r.sort_comparisons << ',' << r.median_ms << '\n';
  }
}

}  // namespace tbin::bench
