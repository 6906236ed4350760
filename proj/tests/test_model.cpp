#include <gtest/gtest.h>

#include <cmath>
#include <algorithm>
#include <filesystem>
#include <numeric>
#include <random>
#include <set>
#include <vector>

#include "model_fixtures.hpp"
#include "oracles.hpp"
#include "tbin/checkpoint.hpp"
#include "tbin/train.hpp"

using namespace tbin;
using fixtures::random_sample;
using fixtures::tiny_config;

namespace {

Model random_model(const ModelConfig& cfg, std::uint64_t seed, double scale = 0.3) {
  Model m = init_model(cfg);
  std::mt19937_64 rng(seed);
  fixtures::randomize(m.weights, rng, scale);
  return m;
}

Tensor2 layer_norm_ref(const Tensor2& in, const Tensor2& gain, const Tensor2& bias, long double eps) {
  Tensor2 out(in.rows(), in.cols());
  for (std::size_t i = 0; i < in.rows(); ++i) {
    long double mean = 0.0L, var = 0.0L;
    for (double v : in.row(i)) mean += v;
    mean /= in.cols();
    for (double v : in.row(i)) var += (v - mean) * (v - mean);
    var /= in.cols();
    for (std::size_t j = 0; j < in.cols(); ++j)
      out(i, j) = static_cast<double>((in(i, j) - mean) / std::sqrt(var + eps) * gain[j] + bias[j]);
  }
  return out;
}

Tensor2 affine(const Tensor2& x, const Tensor2& w, const Tensor2& b, bool relu) {
  Tensor2 y = oracle::matmul(x, w);
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t j = 0; j < y.cols(); ++j) {
      y(i, j) += b[j];
      if (relu) y(i, j) = std::max(0.0, y(i, j));
    }
  return y;
}

// Forward pass for a single behavior: every attention softmax is over one
// element, so each block reduces to fixed matrix products.
double single_behavior_oracle(const Model& m, const Sample& s) {
  const auto& w = m.weights;
  Tensor2 x = affine(s.behaviors, w.input_w, w.input_b, false);
  for (const auto& b : w.blocks) {
    Tensor2 a = oracle::matmul(oracle::matmul(layer_norm_ref(x, b.ln1_gain, b.ln1_bias, m.config.ln_eps), b.wv), b.wo);
    a += x;
    Tensor2 out = affine(affine(layer_norm_ref(a, b.ln2_gain, b.ln2_bias, m.config.ln_eps), b.mlp_w1, b.mlp_b1, true),
                         b.mlp_w2, b.mlp_b2, false);
    out += a;
    x = out;
  }
  const Tensor2 t = affine(s.target, w.target.target_w, w.target.target_b, false);
  Tensor2 pair(1, 2 * x.cols());
  for (std::size_t j = 0; j < x.cols(); ++j) {
    pair[j] = x[j];
    pair[x.cols() + j] = t[j];
  }
  const double score = affine(affine(pair, w.target.score_w1, w.target.score_b1, true), w.target.score_w2,
                              w.target.score_b2, false)[0];
  Tensor2 feats(1, x.cols() + s.target.cols() + s.user.cols());
  std::size_t k = 0;
  for (double v : x.data()) feats[k++] = score * v;
  for (double v : s.target.data()) feats[k++] = v;
  for (double v : s.user.data()) feats[k++] = v;
  const double logit = affine(affine(feats, w.head.w1, w.head.b1, true), w.head.w2, w.head.b2, false)[0];
  return 1.0 / (1.0 + std::exp(-logit));
}

double batch_loss(const Model& m, std::span<const Sample> batch) {
  std::vector<double> p = predict_all(m, batch);
  std::vector<int> y;
  for (const auto& s : batch) y.push_back(s.label);
  return bce_loss(p, y);
}

}  // namespace

TEST(ModelConfigTest, Validation) {
  ModelConfig c = tiny_config();
  EXPECT_NO_THROW(c.validate());
  c.blocks = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.chunk_size = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.hash_bits = 63;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(parse_schema("swin"), ConfigError);
}

TEST(InitModel, ResidualBranchesStartAtZeroAndWeightsAreFloat) {
  const Model m = init_model(tiny_config());
  for (const auto& b : m.weights.blocks) {
    EXPECT_EQ(b.wo, Tensor2(b.wo.rows(), b.wo.cols()));
    EXPECT_EQ(b.mlp_w2, Tensor2(b.mlp_w2.rows(), b.mlp_w2.cols()));
  }
  for_each_tensor(m.weights, [](const std::string& n, const Tensor2& t) {
    for (double v : t.data()) ASSERT_EQ(v, static_cast<double>(static_cast<float>(v))) << n;
  });
  EXPECT_EQ(init_model(tiny_config()).weights.head.w1, m.weights.head.w1);
}

TEST(Forward, ZeroHeadGivesOneHalf) {
  Model m = random_model(tiny_config(), 1);
  m.weights.head.w2.fill(0.0);
  m.weights.head.b2.fill(0.0);
  std::mt19937_64 rng(2);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(predict(m, random_sample(m.config, 13, rng)), 0.5);
}

TEST(Forward, SingleBehaviorMatchesComposition) {
  std::mt19937_64 rng(3);
  for (auto schema : {AttentionSchema::kShiftedChunk, AttentionSchema::kChunk, AttentionSchema::kGlobal}) {
    ModelConfig c = tiny_config();
    c.schema = schema;
    const Model m = random_model(c, 4);
    const Sample s = random_sample(c, 1, rng);
    EXPECT_NEAR(predict(m, s), single_behavior_oracle(m, s), 1e-12) << schema_name(schema);
  }
}

TEST(Forward, PermutingDistinctBucketRowsLeavesOutputUnchanged) {
  ModelConfig c = tiny_config();
  c.hash_bits = 6;
  const Model m = random_model(c, 5);
  std::mt19937_64 rng(6);
  Sample s = random_sample(c, 1, rng);
  std::vector<std::vector<double>> rows;
  std::set<std::int64_t> seen;
  while (rows.size() < 12) {
    const Tensor2 cand = oracle::random_tensor(1, c.input_dim, rng);
    const std::int64_t id = oracle::bucket_of(cand.row(0), m.projection.r);
    if (seen.insert(id).second) rows.emplace_back(cand.data().begin(), cand.data().end());
  }
  auto build = [&](const std::vector<std::size_t>& order) {
    Tensor2 b(order.size(), c.input_dim);
    for (std::size_t k = 0; k < order.size(); ++k)
      for (std::size_t j = 0; j < c.input_dim; ++j) b(k, j) = rows[order[k]][j];
    return b;
  };
  std::vector<std::size_t> order(12);
  std::iota(order.begin(), order.end(), std::size_t{0});
  s.behaviors = build(order);
  const double base = predict(m, s);
  for (int t = 0; t < 10; ++t) {
    std::shuffle(order.begin(), order.end(), rng);
    s.behaviors = build(order);
    EXPECT_EQ(predict(m, s), base);
  }
}

TEST(Forward, HeadBiasIsMonotone) {
  Model m = random_model(tiny_config(), 7);
  std::mt19937_64 rng(8);
  const Sample s = random_sample(m.config, 9, rng);
  double prev = predict(m, s);
  for (int i = 0; i < 10; ++i) {
    m.weights.head.b2(0, 0) += 0.25;
    const double next = predict(m, s);
    EXPECT_GT(next, prev);
    prev = next;
  }
}

TEST(Forward, Deterministic) {
  const Model m = random_model(tiny_config(), 9);
  std::mt19937_64 rng(10);
  const Sample s = random_sample(m.config, 21, rng);
  EXPECT_EQ(predict(m, s), predict(m, s));
}

TEST(Forward, SampleShapeErrors) {
  const Model m = random_model(tiny_config(), 11);
  std::mt19937_64 rng(12);
  Sample s = random_sample(m.config, 5, rng);
  s.label = 2;
  EXPECT_THROW(predict(m, s), DimensionError);
  s = random_sample(m.config, 5, rng);
  s.behaviors = Tensor2(0, m.config.input_dim);
  EXPECT_THROW(predict(m, s), DimensionError);
  s = random_sample(m.config, 5, rng);
  s.user = Tensor2(1, 7);
  EXPECT_THROW(predict(m, s), DimensionError);
}

TEST(Forward, TraceExposesStages) {
  const Model m = random_model(tiny_config(), 13);
  std::mt19937_64 rng(14);
  const Sample s = random_sample(m.config, 10, rng);
  Graph g(false);
  ForwardTrace trace;
  const double p = forward(g, m, bind(g, m.weights), s, &trace).value()(0, 0);
  EXPECT_EQ(p, predict(m, s));
  EXPECT_EQ(trace.layout.padded_length, 12u);
  EXPECT_EQ(trace.interests.rows(), 3u);
  EXPECT_EQ(trace.scores.rows(), 3u);
  EXPECT_EQ(trace.pairs.size(), 1u);
  EXPECT_EQ(trace.assignment.perm.size(), 10u);
}

TEST(Forward, SeqLenKeepsMostRecent) {
  ModelConfig c = tiny_config();
  c.seq_len = 4;
  const Model m = random_model(c, 15);
  std::mt19937_64 rng(16);
  Sample s = random_sample(c, 10, rng);
  Sample tail = s;
  tail.behaviors = recent_rows(s.behaviors, 4);
  ASSERT_EQ(tail.behaviors.rows(), 4u);
  for (std::size_t j = 0; j < c.input_dim; ++j) EXPECT_EQ(tail.behaviors(0, j), s.behaviors(6, j));
  EXPECT_EQ(predict(m, s), predict(m, tail));
}

TEST(Metrics, BceExamples) {
  const std::vector<double> half(6, 0.5);
  const std::vector<int> y{1, 0, 1, 1, 0, 0};
  EXPECT_NEAR(bce_loss(half, y), std::log(2.0), 1e-15);
  const std::vector<double> exact{1.0, 0.0, 1.0, 1.0, 0.0, 0.0};
  EXPECT_NEAR(bce_loss(exact, y), 1e-7, 1e-12);
  EXPECT_THROW(bce_loss(std::vector<double>{}, std::vector<int>{}), MetricError);
}

TEST(Metrics, BceMatchesDirectFormula) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::bernoulli_distribution coin(0.4);
  std::vector<double> p(32);
  std::vector<int> y(32);
  for (int i = 0; i < 32; ++i) {
    p[i] = u(rng);
    y[i] = coin(rng) ? 1 : 0;
  }
  EXPECT_NEAR(bce_loss(p, y), oracle::direct_bce(p, y), 1e-12);
}

TEST(Metrics, BceGradientMatchesFormula) {
  Graph g;
  Var p = g.parameter(Tensor2{{0.3}});
  g.backward(bce_loss(p, 1, 0.5));
  EXPECT_NEAR(p.grad()(0, 0), -0.5 / 0.3, 1e-15);
}

TEST(Metrics, AucExamples) {
  const std::vector<int> y{0, 0, 1, 1};
  EXPECT_EQ(auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, y), 1.0);
  EXPECT_EQ(auc(std::vector<double>{0.4, 0.4, 0.4, 0.4}, y), 0.5);
  EXPECT_EQ(auc(std::vector<double>{0.9, 0.8, 0.2, 0.1}, y), 0.0);
  EXPECT_THROW(auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), MetricError);
}

TEST(Metrics, AucEqualsPairwiseOracle) {
  std::mt19937_64 rng(18);
  std::uniform_int_distribution<int> level(0, 9);  // coarse values force ties
  std::uniform_int_distribution<std::size_t> size(2, 200);
  std::bernoulli_distribution coin(0.5);
  for (int batch = 0; batch < 200; ++batch) {
    const std::size_t n = size(rng);
    std::vector<double> p(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = level(rng) / 10.0;
      y[i] = coin(rng) ? 1 : 0;
    }
    y[0] = 1;
    y[1] = 0;
    EXPECT_EQ(auc(p, y), oracle::pairwise_auc(p, y));
  }
}

TEST(TrainStep, ZeroLearningRateLeavesWeightsUnchanged) {
  for (auto kind : {OptimizerKind::kAdam, OptimizerKind::kSgd}) {
    Model m = init_model(tiny_config());
    const ModelWeights before = m.weights;
    std::mt19937_64 rng(19);
    std::vector<Sample> batch{random_sample(m.config, 8, rng, 1), random_sample(m.config, 8, rng, 0)};
    Optimizer opt({kind, 0.0}, m.weights);
    train_step(m, opt, batch);
    zip_tensors(m.weights, before, [](const Tensor2& a, const Tensor2& b) { EXPECT_EQ(a, b); });
  }
}

TEST(TrainStep, SgdStepDecreasesLoss) {
  Model m = random_model(tiny_config(), 20, 0.2);
  std::mt19937_64 rng(21);
  std::vector<Sample> batch{random_sample(m.config, 8, rng, 1), random_sample(m.config, 6, rng, 0),
                            random_sample(m.config, 11, rng, 1)};
  const double before = batch_loss(m, batch);
  Optimizer opt({OptimizerKind::kSgd, 1e-2}, m.weights);
  const double reported = train_step(m, opt, batch);
  EXPECT_NEAR(reported, before, 1e-12);
  EXPECT_LT(batch_loss(m, batch), before);
}

TEST(TrainStep, NonFiniteLossAborts) {
  Model m = init_model(tiny_config());
  m.weights.head.b2(0, 0) = std::nan("");
  std::mt19937_64 rng(22);
  std::vector<Sample> batch{random_sample(m.config, 4, rng)};
  Optimizer opt({}, m.weights);
  EXPECT_THROW(train_step(m, opt, batch), TrainingError);
  EXPECT_THROW(train_step(m, opt, std::span<const Sample>{}), TrainingError);
}

TEST(TrainStep, LossAndGradAgreesWithFiniteDifferences) {
  // Full model, mean BCE over a two-sample batch, checked through the
  // accumulated gradient sinks rather than grad_check's own leaves.
  Model m = random_model(tiny_config(), 23);
  std::mt19937_64 rng(24);
  std::vector<Sample> batch{random_sample(m.config, 9, rng, 1), random_sample(m.config, 6, rng, 0)};
  const LossAndGrad lg = loss_and_grad(m, batch);
  auto tensors = fixtures::tensors_of(m.weights);
  std::vector<const Tensor2*> grads;
  for_each_tensor(lg.grads, [&](const std::string&, const Tensor2& t) { grads.push_back(&t); });
  const double h = 1e-6;
  double worst = 0.0;
  for (std::size_t t = 0; t < tensors.size(); t += 3) {
    Tensor2& p = *tensors[t];
    for (std::size_t k = 0; k < p.size(); k += 5) {
      const double saved = p[k];
      p[k] = saved + h;
      const double up = batch_loss(m, batch);
      p[k] = saved - h;
      const double down = batch_loss(m, batch);
      p[k] = saved;
      worst = std::max(worst, grad_rel_error((*grads[t])[k], (up - down) / (2 * h)));
    }
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(Train, DeterministicLossCurve) {
  ModelConfig c = tiny_config();
  std::mt19937_64 rng(25);
  std::vector<Sample> train_set, val_set;
  for (int i = 0; i < 24; ++i) train_set.push_back(random_sample(c, 6, rng, i % 2));
  for (int i = 0; i < 8; ++i) val_set.push_back(random_sample(c, 6, rng, i % 2));
  TrainConfig tc;
  tc.steps = 6;
  tc.batch_size = 5;
  tc.eval_every = 2;
  auto run = [&] {
    Model m = init_model(c);
    std::vector<MetricsRecord> out;
    train(m, train_set, val_set, tc, [&](const MetricsRecord& r) { out.push_back(r); });
    return out;
  };
  const auto a = run(), b = run();
  ASSERT_EQ(a.size(), 3u);
  ASSERT_EQ(b.size(), 3u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].step, 2 * (i + 1));
    EXPECT_EQ(a[i].loss, b[i].loss);
    EXPECT_EQ(a[i].auc, b[i].auc);
    EXPECT_EQ(a[i].logloss, b[i].logloss);
  }
}

TEST(Checkpoint, RoundTripIsBitExact) {
  ModelConfig c = tiny_config();
  c.schema = AttentionSchema::kChunk;
  c.seq_len = 7;
  Model m = random_model(c, 26);
  for_each_tensor(m.weights, [](const std::string&, Tensor2& t) { round_to_float(t); });
  const Model back = deserialize_checkpoint(serialize_checkpoint(m));
  EXPECT_EQ(back.projection.r, m.projection.r);
  EXPECT_EQ(back.projection.seed, m.projection.seed);
  EXPECT_EQ(to_json(back.config), to_json(m.config));
  zip_tensors(back.weights, m.weights, [](const Tensor2& a, const Tensor2& b) { EXPECT_EQ(a, b); });
  std::mt19937_64 rng(27);
  for (int i = 0; i < 5; ++i) {
    const Sample s = random_sample(c, 12, rng);
    EXPECT_EQ(predict(back, s), predict(m, s));
  }
}

TEST(Checkpoint, FileRoundTripReproducesTrainedMetrics) {
  ModelConfig c = tiny_config();
  std::mt19937_64 rng(28);
  std::vector<Sample> data;
  for (int i = 0; i < 20; ++i) data.push_back(random_sample(c, 5, rng, i % 2));
  Model m = init_model(c);
  TrainConfig tc;
  tc.steps = 4;
  tc.batch_size = 4;
  train(m, data, {}, tc);
  const auto path = std::filesystem::temp_directory_path() / "tbin_test_checkpoint.tbin";
  save_checkpoint(m, path);
  const Model back = load_checkpoint(path);
  std::filesystem::remove(path);
  const EvalMetrics a = evaluate(m, data), b = evaluate(back, data);
  EXPECT_EQ(a.auc, b.auc);
  EXPECT_EQ(a.logloss, b.logloss);
}

TEST(Checkpoint, CorruptionIsRejected) {
  const Model m = init_model(tiny_config());
  const std::string good = serialize_checkpoint(m);
  std::string bad = good;
  bad[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(bad), FormatError);
  bad = good;
  bad[4] = 9;  // version
  EXPECT_THROW(deserialize_checkpoint(bad), FormatError);
  for (std::size_t cut : {std::size_t{2}, std::size_t{10}, good.size() / 2, good.size() - 1}) {
    EXPECT_THROW(deserialize_checkpoint(good.substr(0, cut)), FormatError) << cut;
  }
  EXPECT_THROW(deserialize_checkpoint(good + "x"), FormatError);
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/model.tbin"), FormatError);
}

TEST(GradCheck, EndToEndModel) {
  // L = 16, c = 4, two blocks, d = 8, every weight tensor checked.
  Model m = random_model(tiny_config(8, 2, 4), 29, 0.4);
  std::mt19937_64 rng(30);
  const Sample s = random_sample(m.config, 16, rng, 1);
  auto params = fixtures::tensors_of(m.weights);
  auto f = [&](Graph& g, std::span<const Var> v) {
    return bce_loss(forward(g, m, fixtures::vars_from(v, m.config.blocks), s), s.label);
  };
  const auto r = grad_check(f, params, 1e-5, 1e-5);
  EXPECT_TRUE(r.passed) << r.max_rel_error << " in " << fixtures::names_of(m.weights)[r.worst_param];
}
