#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <vector>

#include "oracles.hpp"
#include "tbin/data.hpp"
#include "tbin/lsh.hpp"
#include "tbin/metrics.hpp"

using namespace tbin;
using namespace tbin::data;

namespace {

SyntheticSpec small_spec(std::uint64_t seed = 11) {
  SyntheticSpec s;
  s.users = 200;
  s.seq_len = 16;
  s.items_per_cluster = 16;
  s.seed = seed;
  return s;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("tbin_test_" + name);
}

std::vector<SampleRecord> all_records(const Dataset& ds) {
  std::vector<SampleRecord> out = ds.train;
  out.insert(out.end(), ds.val.begin(), ds.val.end());
  out.insert(out.end(), ds.test.begin(), ds.test.end());
  return out;
}

// AUC of scoring every sample with its noiseless label.
double generating_rule_auc(const Dataset& ds) {
  std::vector<double> score;
  std::vector<int> label;
  for (const auto& r : all_records(ds)) {
    score.push_back(ds.clean_label(r));
    label.push_back(r.label);
  }
  return auc(score, label);
}

}  // namespace

TEST(Generator, DeterministicPerSeed) {
  const Dataset a = generate(small_spec()), b = generate(small_spec());
  EXPECT_TRUE(a.items == b.items);
  EXPECT_EQ(a.centers, b.centers);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.val, b.val);
  EXPECT_EQ(a.test, b.test);
  const Dataset c = generate(small_spec(12));
  EXPECT_NE(a.train, c.train);
}

TEST(Generator, SplitsPartitionTheSamples) {
  const SyntheticSpec spec = small_spec();
  const Dataset ds = generate(spec);
  const std::size_t total = spec.users * spec.samples_per_user;
  EXPECT_EQ(ds.train.size() + ds.val.size() + ds.test.size(), total);
  EXPECT_EQ(ds.test.size(), 160u);
  EXPECT_EQ(ds.val.size(), 80u);
  std::map<std::uint32_t, std::size_t> per_user;
  for (const auto& r : all_records(ds)) ++per_user[r.user];
  ASSERT_EQ(per_user.size(), spec.users);
  for (const auto& [u, n] : per_user) EXPECT_EQ(n, spec.samples_per_user) << "user " << u;
}

TEST(Generator, CentersRespectMinimumAngle) {
  const Dataset ds = generate(small_spec());
  for (std::size_t i = 0; i < ds.centers.rows(); ++i)
    for (std::size_t j = 0; j < i; ++j) EXPECT_GE(angle_deg(ds.centers.row(i), ds.centers.row(j)), 30.0);
}

TEST(Generator, BehaviorsComeFromInterestClusters) {
  const Dataset ds = generate(small_spec());
  for (const auto& r : ds.train) {
    ASSERT_EQ(r.behaviors.size(), 16u);
    const auto& in = ds.user_interests[r.user];
    ASSERT_EQ(in.size(), 3u);
    for (auto b : r.behaviors) EXPECT_TRUE(std::binary_search(in.begin(), in.end(), ds.cluster_of(b)));
  }
}

TEST(Generator, LabelNoiseRateMatches) {
  SyntheticSpec spec = small_spec();
  spec.users = 25000;
  spec.seq_len = 1;
  spec.items_per_cluster = 4;
  for (double rho : {0.05, 0.2}) {
    spec.label_noise = rho;
    const Dataset ds = generate(spec);
    std::size_t flipped = 0, n = 0;
    for (const auto& r : all_records(ds)) {
      flipped += r.label != ds.clean_label(r) ? 1 : 0;
      ++n;
    }
    ASSERT_GE(n, 100000u);
    EXPECT_NEAR(static_cast<double>(flipped) / static_cast<double>(n), rho, 0.01);
  }
}

TEST(Generator, GeneratingRuleAucMatchesFlipModel) {
  SyntheticSpec spec = small_spec();
  spec.users = 25000;
  spec.seq_len = 1;
  spec.items_per_cluster = 4;
  spec.label_noise = 0.1;
  const Dataset ds = generate(spec);
  EXPECT_NEAR(generating_rule_auc(ds), oracle::flipped_label_auc(3.0 / 8.0, 0.1), 0.02);
}

TEST(Generator, NoiselessSingleInterestIsSeparable) {
  SyntheticSpec spec = small_spec();
  spec.clusters = 2;
  spec.interests_per_user = 1;
  spec.label_noise = 0.0;
  EXPECT_EQ(generating_rule_auc(generate(spec)), 1.0);
}

TEST(Generator, InfeasibleSpecsRejected) {
  SyntheticSpec spec = small_spec();
  spec.clusters = 40;
  spec.input_dim = 2;
  EXPECT_THROW(generate(spec), ConfigError);
  spec = small_spec();
  spec.interests_per_user = 9;
  EXPECT_THROW(generate(spec), ConfigError);
  spec = small_spec();
  spec.label_noise = 0.5;
  EXPECT_THROW(generate(spec), ConfigError);
  spec = small_spec();
  spec.val_fraction = 0.5;
  spec.test_fraction = 0.5;
  EXPECT_THROW(generate(spec), ConfigError);
}

TEST(Generator, SameClusterItemsShareBuckets) {
  // Pairs of behaviors from one cluster should land in one 4-bit bucket at
  // least 80% of the time; pairs from different clusters much less often.
  // All pairs share the same hyperplanes, so average over many projections.
  const Dataset ds = generate(SyntheticSpec{});
  const auto& ids = ds.items.ids();
  const Tensor2 items = ds.items.gather(ids);
  std::size_t same = 0, same_total = 0, cross = 0, cross_total = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto proj = lsh::ProjectionMatrix::sample(ds.spec.input_dim, 4, 100 + seed);
    const std::vector<std::int64_t> bucket = lsh::bucket_ids(lsh::hash_codes(items, proj));
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t j = 0; j < i; ++j) {
        const bool hit = bucket[i] == bucket[j];
        if (ds.cluster_of(ids[i]) == ds.cluster_of(ids[j])) {
          same += hit;
          ++same_total;
        } else {
          cross += hit;
          ++cross_total;
        }
      }
  }
  const double same_rate = static_cast<double>(same) / static_cast<double>(same_total);
  const double cross_rate = static_cast<double>(cross) / static_cast<double>(cross_total);
  EXPECT_GE(same_rate, 0.80);
  EXPECT_LT(cross_rate, 0.5 * same_rate);
}

TEST(Materialize, UsesCachedEmbeddings) {
  const Dataset ds = generate(small_spec());
  const SampleRecord& r = ds.train.front();
  const Sample s = materialize(r, ds.items);
  EXPECT_EQ(s.label, r.label);
  EXPECT_EQ(s.behaviors.rows(), r.behaviors.size());
  const auto row = ds.items.at(r.behaviors[3]);
  for (std::size_t j = 0; j < row.size(); ++j) EXPECT_EQ(s.behaviors(3, j), row[j]);
  const auto t = ds.items.at(r.target);
  for (std::size_t j = 0; j < t.size(); ++j) EXPECT_EQ(s.target[j], t[j]);
  for (std::size_t j = 0; j < r.user_features.size(); ++j) EXPECT_EQ(s.user[j], r.user_features[j]);
}

TEST(EmbeddingCacheTest, MissingIdNamesTheId) {
  EmbeddingCache c(2);
  c.insert(5, std::vector<float>{1.0f, 2.0f});
  try {
    c.at(77);
    FAIL() << "expected LookupError";
  } catch (const LookupError& e) {
    EXPECT_NE(std::string(e.what()).find("77"), std::string::npos);
  }
  EXPECT_THROW(c.insert(5, std::vector<float>{0.0f, 0.0f}), ConfigError);
  EXPECT_THROW(c.insert(6, std::vector<float>{0.0f}), DimensionError);
}

TEST(EmbeddingCacheTest, FileRoundTrip) {
  const Dataset ds = generate(small_spec());
  const auto path = temp_path("cache.tbec");
  write_cache(path, ds.items);
  const EmbeddingCache back = read_cache(path);
  EXPECT_TRUE(back == ds.items);
  const std::vector<std::uint32_t> missing{3, 999999};
  EXPECT_THROW(read_cache(path, missing), LookupError);
  std::filesystem::remove(path);
}

TEST(EmbeddingCacheTest, SeekReadsMatchFullLoad) {
  EmbeddingCache c(24);
  std::mt19937_64 rng(13);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  std::vector<float> row(24);
  for (std::uint32_t id = 0; id < 10000; ++id) {
    for (float& v : row) v = normal(rng);
    c.insert(id * 3 + 1, row);  // sparse ids
  }
  const auto path = temp_path("big.tbec");
  write_cache(path, c);
  std::uniform_int_distribution<std::uint32_t> pick(0, 9999);
  std::vector<std::uint32_t> ids(1000);
  for (auto& id : ids) id = pick(rng) * 3 + 1;
  const Tensor2 got = read_cache(path, ids);
  EXPECT_EQ(got, c.gather(ids));
  std::filesystem::remove(path);
}

TEST(EmbeddingCacheTest, CorruptFilesRejected) {
  EmbeddingCache c(2);
  c.insert(1, std::vector<float>{1.0f, 2.0f});
  const auto path = temp_path("corrupt.tbec");
  write_cache(path, c);
  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto write = [&](const std::string& b) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << b;
  };
  write("XBEC" + bytes.substr(4));
  EXPECT_THROW(read_cache(path), FormatError);
  write(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(read_cache(path), FormatError);
  EXPECT_THROW(read_cache(path, std::vector<std::uint32_t>{1}), FormatError);
  std::filesystem::remove(path);
  EXPECT_THROW(read_cache(path), FormatError);
}

TEST(Jsonl, RoundTrip) {
  const Dataset ds = generate(small_spec());
  const auto path = temp_path("samples.jsonl");
  write_jsonl(path, ds.val);
  EXPECT_EQ(read_jsonl(path), ds.val);
  std::filesystem::remove(path);
}

TEST(Jsonl, MalformedLineReportsLineNumber) {
  const auto path = temp_path("bad.jsonl");
  {
    std::ofstream out(path);
    out << R"({"user":0,"user_features":[0.5],"behaviors":[1,2],"target":3,"label":1})" << "\n";
    out << R"({"user":0,"behaviors":[1})" << "\n";
  }
  try {
    read_jsonl(path);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("2"), std::string::npos) << e.what();
  }
  std::filesystem::remove(path);
}

TEST(Dataset, WriteDatasetLayout) {
  const Dataset ds = generate(small_spec());
  const auto dir = temp_path("dataset_dir");
  write_dataset(ds, dir);
  const DatasetFiles f{dir};
  EXPECT_EQ(read_jsonl(f.split("train")), ds.train);
  EXPECT_EQ(read_jsonl(f.test()), ds.test);
  EXPECT_TRUE(read_cache(f.cache()) == ds.items);
  EXPECT_THROW(f.split("dev"), ConfigError);
  std::filesystem::remove_all(dir);
}
