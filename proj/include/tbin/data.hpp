#pragma once

// Synthetic clustered behavior data and the precomputed item-embedding cache.
//
// Cache file layout (little-endian):
//   "TBEC" | u32 version | u32 count | u32 dim | count x u32 item id | count x dim f32
// Row k of the data block belongs to the k-th id of the index.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "tbin/checkpoint.hpp"
#include "tbin/errors.hpp"
#include "tbin/model.hpp"

namespace tbin::data {

inline constexpr std::array<char, 4> kCacheMagic{'T', 'B', 'E', 'C'};
inline constexpr std::uint32_t kCacheVersion = 1;

// In-memory item id -> f32 embedding table.
class EmbeddingCache {
 public:
  EmbeddingCache() = default;
  explicit EmbeddingCache(std::size_t dim) : dim_(dim) {}

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return ids_.size(); }
  const std::vector<std::uint32_t>& ids() const noexcept { return ids_; }

  void insert(std::uint32_t id, std::span<const float> row) {
    if (row.size() != dim_) throw DimensionError("EmbeddingCache: row width does not match dim");
    if (index_.contains(id)) throw ConfigError("EmbeddingCache: duplicate id " + std::to_string(id));
    index_.emplace(id, ids_.size());
    ids_.push_back(id);
    rows_.insert(rows_.end(), row.begin(), row.end());
  }

  bool contains(std::uint32_t id) const { return index_.contains(id); }

  std::span<const float> at(std::uint32_t id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw LookupError("embedding cache: missing item id " + std::to_string(id));
    return {rows_.data() + it->second * dim_, dim_};
  }

  // Stacks the embeddings of `ids` into an ids.size() x dim matrix.
  Tensor2 gather(std::span<const std::uint32_t> ids) const {
    Tensor2 out(ids.size(), dim_);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      auto row = at(ids[k]);
      for (std::size_t j = 0; j < dim_; ++j) out(k, j) = row[j];
    }
    return out;
  }

  friend bool operator==(const EmbeddingCache& a, const EmbeddingCache& b) {
    return a.dim_ == b.dim_ && a.ids_ == b.ids_ &&
           std::equal(a.rows_.begin(), a.rows_.end(), b.rows_.begin(), b.rows_.end(),
                      [](float x, float y) { return std::bit_cast<std::uint32_t>(x) == std::bit_cast<std::uint32_t>(y); });
  }

 private:
  std::size_t dim_ = 0;
  std::vector<std::uint32_t> ids_;
  std::vector<float> rows_;
  std::unordered_map<std::uint32_t, std::size_t> index_;
};

inline void write_cache(const std::filesystem::path& path, const EmbeddingCache& cache) {
  std::string out(kCacheMagic.begin(), kCacheMagic.end());
  detail::put_u32(out, kCacheVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(cache.size()));
  detail::put_u32(out, static_cast<std::uint32_t>(cache.dim()));
  for (std::uint32_t id : cache.ids()) detail::put_u32(out, id);
  for (std::uint32_t id : cache.ids())
    for (float v : cache.at(id)) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  detail::write_file(path, out, "embedding cache");
}

inline EmbeddingCache read_cache(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file(path, "embedding cache");
  detail::ByteReader r(bytes, "embedding cache");
  if (r.bytes(4) != std::string(kCacheMagic.begin(), kCacheMagic.end())) {
    throw FormatError("embedding cache: bad magic bytes");
  }
  if (const std::uint32_t v = r.u32(); v != kCacheVersion) {
    throw FormatError("embedding cache: unsupported version " + std::to_string(v));
  }
  const std::uint32_t count = r.u32();
  const std::uint32_t dim = r.u32();
  r.need(static_cast<std::size_t>(count) * 4);
  std::vector<std::uint32_t> ids(count);
  for (auto& id : ids) id = r.u32();
  r.need(static_cast<std::size_t>(count) * dim * 4);
  EmbeddingCache cache(dim);
  std::vector<float> row(dim);
  for (std::uint32_t id : ids) {
    for (float& v : row) v = r.f32();
    cache.insert(id, row);
  }
  if (!r.at_end()) throw FormatError("embedding cache: trailing bytes");
  return cache;
}

// Reads only the rows of `ids` by seeking into the file; rows come back in
// the order requested.
inline Tensor2 read_cache(const std::filesystem::path& path, std::span<const std::uint32_t> ids) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("embedding cache: cannot open " + path.string());
  std::string head(16, '\0');
  if (!in.read(head.data(), 16)) throw FormatError("embedding cache: truncated file");
  detail::ByteReader hr(head, "embedding cache");
  if (hr.bytes(4) != std::string(kCacheMagic.begin(), kCacheMagic.end())) {
    throw FormatError("embedding cache: bad magic bytes");
  }
  if (const std::uint32_t v = hr.u32(); v != kCacheVersion) {
    throw FormatError("embedding cache: unsupported version " + std::to_string(v));
  }
  const std::uint32_t count = hr.u32();
  const std::uint32_t dim = hr.u32();
  std::string index_bytes(static_cast<std::size_t>(count) * 4, '\0');
  if (!in.read(index_bytes.data(), static_cast<std::streamsize>(index_bytes.size()))) {
    throw FormatError("embedding cache: truncated index");
  }
  detail::ByteReader ir(index_bytes, "embedding cache");
  std::unordered_map<std::uint32_t, std::size_t> where;
  for (std::uint32_t k = 0; k < count; ++k) where.emplace(ir.u32(), k);

  const std::streamoff data_start = 16 + static_cast<std::streamoff>(count) * 4;
  Tensor2 out(ids.size(), dim);
  std::string row_bytes(static_cast<std::size_t>(dim) * 4, '\0');
  for (std::size_t k = 0; k < ids.size(); ++k) {
    auto it = where.find(ids[k]);
    if (it == where.end()) throw LookupError("embedding cache: missing item id " + std::to_string(ids[k]));
    in.seekg(data_start + static_cast<std::streamoff>(it->second) * dim * 4);
    if (!in.read(row_bytes.data(), static_cast<std::streamsize>(row_bytes.size()))) {
      throw FormatError("embedding cache: truncated data block");
    }
    detail::ByteReader rr(row_bytes, "embedding cache");
    for (std::size_t j = 0; j < dim; ++j) out(k, j) = rr.f32();
  }
  return out;
}

struct SyntheticSpec {
  std::size_t clusters = 8;             // K
  std::size_t input_dim = 32;           // d_b
  std::size_t items_per_cluster = 64;
  std::size_t users = 1500;
  std::size_t samples_per_user = 4;
  std::size_t seq_len = 128;            // L
  std::size_t interests_per_user = 3;
  std::size_t user_dim = 8;
  double label_noise = 0.05;            // rho
  double noise_scale = 0.1;             // item noise norm relative to center norm
  double min_center_angle_deg = 30.0;
  double val_fraction = 0.1;
  double test_fraction = 0.2;
  std::uint64_t seed = 2024;

  void validate() const {
    if (clusters < 2) throw ConfigError("synthetic spec: clusters must be >= 2");
    if (input_dim == 0 || items_per_cluster == 0 || users == 0 || samples_per_user == 0 ||
        seq_len == 0 || user_dim == 0) {
      throw ConfigError("synthetic spec: sizes must be positive");
    }
    if (interests_per_user == 0 || interests_per_user > clusters) {
      throw ConfigError("synthetic spec: interests_per_user (" + std::to_string(interests_per_user) +
                        ") must be in [1, clusters=" + std::to_string(clusters) + "]");
    }
    if (!(label_noise >= 0.0 && label_noise < 0.5)) throw ConfigError("synthetic spec: label_noise must be in [0, 0.5)");
    if (!(noise_scale >= 0.0)) throw ConfigError("synthetic spec: noise_scale must be >= 0");
    if (!(val_fraction >= 0.0 && test_fraction >= 0.0 && val_fraction + test_fraction < 1.0)) {
      throw ConfigError("synthetic spec: split fractions must be non-negative and sum below 1");
    }
    if (clusters * items_per_cluster > std::numeric_limits<std::uint32_t>::max()) {
      throw ConfigError("synthetic spec: too many items");
    }
  }
};

// One example referencing cache item ids.
struct SampleRecord {
  std::uint32_t user = 0;
  std::vector<float> user_features;
  std::vector<std::uint32_t> behaviors;
  std::uint32_t target = 0;
  int label = 0;

  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

struct Dataset {
  SyntheticSpec spec;
  EmbeddingCache items;
  Tensor2 centers;                                     // K x d_b, unit rows
  std::vector<std::vector<std::size_t>> user_interests;  // sorted cluster ids per user
  std::vector<SampleRecord> train, val, test;

  std::size_t cluster_of(std::uint32_t item) const { return item / spec.items_per_cluster; }

  // Label before noise: whether the target's cluster is one of the user's interests.
  int clean_label(const SampleRecord& r) const {
    const auto& in = user_interests.at(r.user);
    return std::binary_search(in.begin(), in.end(), cluster_of(r.target)) ? 1 : 0;
  }
};

inline double angle_deg(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double c = std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
  return std::acos(c) * 180.0 / std::numbers::pi;
}

// Unit cluster centers with pairwise angle >= min_angle_deg (rejection sampling).
inline Tensor2 sample_centers(std::size_t k, std::size_t dim, double min_angle_deg, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor2 centers(k, dim);
  constexpr int kMaxAttempts = 10000;
  for (std::size_t i = 0; i < k; ++i) {
    int attempt = 0;
    for (;; ++attempt) {
      if (attempt == kMaxAttempts) {
        throw ConfigError("synthetic spec: cannot place " + std::to_string(k) + " centers " +
                          std::to_string(min_angle_deg) + " degrees apart in " + std::to_string(dim) + " dims");
      }
      double norm = 0.0;
      auto row = centers.row(i);
      for (double& v : row) {
        v = normal(rng);
        norm += v * v;
      }
      norm = std::sqrt(norm);
      for (double& v : row) v /= norm;
      bool ok = true;
      for (std::size_t j = 0; j < i && ok; ++j) ok = angle_deg(centers.row(i), centers.row(j)) >= min_angle_deg;
      if (ok) break;
    }
  }
  return centers;
}

// Builds items, users, samples and disjoint train/val/test splits. Behaviors
// are drawn from the user's interest clusters; the target comes from a
// uniformly random cluster; the label says whether that cluster is one of
// the user's interests, flipped with probability label_noise.
inline Dataset generate(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  Dataset ds;
  ds.spec = spec;
  ds.centers = sample_centers(spec.clusters, spec.input_dim, spec.min_center_angle_deg, rng);

  // Per-coordinate sigma so the expected noise norm is noise_scale (centers are unit norm).
  const double sigma = spec.noise_scale / std::sqrt(static_cast<double>(spec.input_dim));
  ds.items = EmbeddingCache(spec.input_dim);
  std::vector<float> row(spec.input_dim);
  for (std::size_t k = 0; k < spec.clusters; ++k) {
    for (std::size_t i = 0; i < spec.items_per_cluster; ++i) {
      for (std::size_t j = 0; j < spec.input_dim; ++j) {
        row[j] = static_cast<float>(ds.centers(k, j) + sigma * normal(rng));
      }
      ds.items.insert(static_cast<std::uint32_t>(k * spec.items_per_cluster + i), row);
    }
  }

  std::uniform_int_distribution<std::size_t> pick_item(0, spec.items_per_cluster - 1);
  std::uniform_int_distribution<std::size_t> pick_cluster(0, spec.clusters - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto item_id = [&](std::size_t cluster) {
    return static_cast<std::uint32_t>(cluster * spec.items_per_cluster + pick_item(rng));
  };

  std::vector<SampleRecord> all;
  all.reserve(spec.users * spec.samples_per_user);
  std::vector<std::size_t> cluster_ids(spec.clusters);
  std::iota(cluster_ids.begin(), cluster_ids.end(), std::size_t{0});
  ds.user_interests.resize(spec.users);
  for (std::size_t u = 0; u < spec.users; ++u) {
    std::shuffle(cluster_ids.begin(), cluster_ids.end(), rng);
    std::vector<std::size_t> interests(cluster_ids.begin(), cluster_ids.begin() + spec.interests_per_user);
    std::sort(interests.begin(), interests.end());
    ds.user_interests[u] = interests;

    std::vector<float> profile(spec.user_dim);
    for (float& v : profile) v = static_cast<float>(normal(rng));
    std::uniform_int_distribution<std::size_t> pick_interest(0, interests.size() - 1);
    std::vector<std::uint32_t> history(spec.seq_len);
    for (auto& b : history) b = item_id(interests[pick_interest(rng)]);

    for (std::size_t s = 0; s < spec.samples_per_user; ++s) {
      SampleRecord r;
      r.user = static_cast<std::uint32_t>(u);
      r.user_features = profile;
      r.behaviors = history;
      r.target = item_id(pick_cluster(rng));
      const int clean = std::binary_search(interests.begin(), interests.end(), ds.cluster_of(r.target)) ? 1 : 0;
      r.label = unit(rng) < spec.label_noise ? 1 - clean : clean;
      all.push_back(std::move(r));
    }
  }

  std::vector<std::size_t> order(all.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_test = static_cast<std::size_t>(std::llround(spec.test_fraction * static_cast<double>(all.size())));
  const auto n_val = static_cast<std::size_t>(std::llround(spec.val_fraction * static_cast<double>(all.size())));
  for (std::size_t k = 0; k < order.size(); ++k) {
    auto& dest = k < n_test ? ds.test : (k < n_test + n_val ? ds.val : ds.train);
    dest.push_back(std::move(all[order[k]]));
  }
  return ds;
}

// Materializes a record into model inputs. The target embedding is the
// target item's cached vector.
inline Sample materialize(const SampleRecord& r, const EmbeddingCache& cache) {
  Sample s;
  s.user = Tensor2(1, r.user_features.size());
  for (std::size_t j = 0; j < r.user_features.size(); ++j) s.user(0, j) = r.user_features[j];
  s.target = cache.gather(std::span<const std::uint32_t>(&r.target, 1));
  s.behaviors = cache.gather(r.behaviors);
  s.label = r.label;
  return s;
}

inline std::vector<Sample> materialize_all(std::span<const SampleRecord> records, const EmbeddingCache& cache) {
  std::vector<Sample> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(materialize(r, cache));
  return out;
}

inline nlohmann::json to_json(const SampleRecord& r) {
  return {{"user", r.user}, {"user_features", r.user_features}, {"behaviors", r.behaviors},
          {"target", r.target}, {"label", r.label}};
}

inline SampleRecord record_from_json(const nlohmann::json& j) {
  SampleRecord r;
  r.user = j.at("user").get<std::uint32_t>();
  r.user_features = j.at("user_features").get<std::vector<float>>();
  r.behaviors = j.at("behaviors").get<std::vector<std::uint32_t>>();
  r.target = j.at("target").get<std::uint32_t>();
  r.label = j.at("label").get<int>();
  if (r.label != 0 && r.label != 1) throw FormatError("sample record: label must be 0 or 1");
  if (r.behaviors.empty()) throw FormatError("sample record: empty behaviors");
  return r;
}

inline void write_jsonl(const std::filesystem::path& path, std::span<const SampleRecord> records) {
  std::string out;
  for (const auto& r : records) {
    out += to_json(r).dump();
    out += '\n';
  }
  detail::write_file(path, out, "jsonl");
}

inline std::vector<SampleRecord> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("jsonl: cannot open " + path.string());
  std::vector<SampleRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

// Standard file names inside a dataset directory.
struct DatasetFiles {
  std::filesystem::path dir;
  std::filesystem::path train() const { return dir / "train.jsonl"; }
  std::filesystem::path val() const { return dir / "val.jsonl"; }
  std::filesystem::path test() const { return dir / "test.jsonl"; }
  std::filesystem::path cache() const { return dir / "items.tbec"; }
  std::filesystem::path split(const std::string& name) const {
    if (name == "train") return train();
    if (name == "val") return val();
    if (name == "test") return test();
    throw ConfigError("unknown split '" + name + "' (expected train, val, test)");
  }
};

inline void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  DatasetFiles f{dir};
  write_jsonl(f.train(), ds.train);
  write_jsonl(f.val(), ds.val);
  write_jsonl(f.test(), ds.test);
  write_cache(f.cache(), ds.items);
}

}  // namespace tbin::data
