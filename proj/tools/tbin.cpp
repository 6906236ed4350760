// tbin: data generation, training, evaluation, benchmarking and ablations.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tbin/ablation.hpp"
#include "tbin/bench.hpp"
#include "tbin/checkpoint.hpp"
#include "tbin/data.hpp"
#include "tbin/run_config.hpp"
#include "tbin/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonArgs {
  std::string config_file;
  std::vector<std::string> overrides;
  std::string out_dir;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool needs_out) {
  cmd->add_option("--config", args.config_file, "flat JSON config file")->check(CLI::ExistingFile);
  cmd->add_option("overrides", args.overrides, "key=value overrides (applied after --config)");
  auto* out = cmd->add_option("-o,--out", args.out_dir, "output directory");
  if (needs_out) out->required();
}

tbin::RunConfig resolve(const CommonArgs& args) {
  tbin::RunConfig cfg;
  if (!args.config_file.empty()) cfg.merge_file(args.config_file);
  for (const auto& kv : args.overrides) cfg.apply_override(kv);
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw tbin::FormatError("cannot write " + path.string());
  out << text;
}

void echo_config(const tbin::RunConfig& cfg, const fs::path& dir) {
  fs::create_directories(dir);
  write_text(dir / "config.json", cfg.values().dump(2) + "\n");
}

std::vector<tbin::Sample> load_split(const fs::path& dir, const std::string& split) {
  tbin::data::DatasetFiles f{dir};
  const auto cache = tbin::data::read_cache(f.cache());
  const auto records = tbin::data::read_jsonl(f.split(split));
  return tbin::data::materialize_all(records, cache);
}

int cmd_gen_data(const CommonArgs& args) {
  const auto cfg = resolve(args);
  const auto spec = tbin::synthetic_spec(cfg);
  const auto ds = tbin::data::generate(spec);
  tbin::data::write_dataset(ds, args.out_dir);
  echo_config(cfg, args.out_dir);
  std::size_t pos = 0, total = 0;
  for (const auto* split : {&ds.train, &ds.val, &ds.test}) {
    for (const auto& r : *split) pos += r.label == 1 ? 1 : 0;
    total += split->size();
  }
  json summary{{"train", ds.train.size()}, {"val", ds.val.size()}, {"test", ds.test.size()},
               {"items", ds.items.size()}, {"positive_rate", static_cast<double>(pos) / static_cast<double>(total)}};
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_train(const CommonArgs& args, const std::string& data_dir) {
  const auto cfg = resolve(args);
  const auto mc = tbin::model_config(cfg);
  const auto tc = tbin::train_config(cfg);
  const auto train_set = load_split(data_dir, "train");
  const auto val_set = load_split(data_dir, "val");
  echo_config(cfg, args.out_dir);

  tbin::Model model = tbin::init_model(mc);
  std::ofstream metrics(fs::path(args.out_dir) / "metrics.jsonl", std::ios::trunc);
  tbin::train(model, train_set, val_set, tc, [&](const tbin::MetricsRecord& r) {
    const json line{{"step", r.step}, {"loss", r.loss}, {"auc", r.auc}, {"logloss", r.logloss}};
    metrics << line.dump() << "\n" << std::flush;
    std::cerr << line.dump() << "\n";
  });
  tbin::save_checkpoint(model, fs::path(args.out_dir) / "model.tbin");
  const auto m = tbin::evaluate(model, val_set);
  std::cout << json{{"split", "val"}, {"auc", m.auc}, {"logloss", m.logloss}}.dump() << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir, const std::string& split) {
  const tbin::Model model = tbin::load_checkpoint(checkpoint);
  const auto samples = load_split(data_dir, split);
  const auto m = tbin::evaluate(model, samples);
  std::cout << json{{"auc", m.auc}, {"logloss", m.logloss}}.dump() << "\n";
  return 0;
}

int cmd_bench(const CommonArgs& args) {
  const auto cfg = resolve(args);
  const auto sweep = tbin::sweep_config(cfg);
  const auto reports = tbin::bench::run_sweep(sweep);
  std::ostringstream csv;
  tbin::bench::write_csv(csv, reports);
  std::cout << csv.str();
  if (!args.out_dir.empty()) {
    echo_config(cfg, args.out_dir);
    write_text(fs::path(args.out_dir) / "bench.csv", csv.str());
  }
  return 0;
}

int cmd_ablate(const CommonArgs& args, const std::string& data_dir, const std::string& variants_arg,
               std::size_t seeds, const std::string& split) {
  const auto cfg = resolve(args);
  const auto variants = tbin::split_list(variants_arg);
  if (variants.empty()) throw tbin::ConfigError("ablate: no variants given (valid: " + tbin::valid_variant_list() + ")");
  const auto mc = tbin::model_config(cfg);
  for (const auto& v : variants) tbin::apply_variant(mc, v, mc.seq_len);
  const auto tc = tbin::train_config(cfg);
  const auto train_set = load_split(data_dir, "train");
  const auto eval_set = load_split(data_dir, split);
  echo_config(cfg, args.out_dir);

  std::size_t full_len = mc.seq_len != 0 ? mc.seq_len : train_set.front().behaviors.rows();
  const auto runs = tbin::run_ablation(mc, tc, variants, seeds, train_set, eval_set, full_len);
  const auto summary = tbin::summarize(runs);
  std::ostringstream runs_csv, table;
  tbin::write_runs_csv(runs_csv, runs);
  tbin::write_table(table, summary);
  write_text(fs::path(args.out_dir) / "ablation_runs.csv", runs_csv.str());
  write_text(fs::path(args.out_dir) / "ablation.md", table.str());
  std::cout << table.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tbin: LSH-sorted shifted-chunk attention for long behavior sequences"};
  app.require_subcommand(1);

  CommonArgs gen_args, train_args, bench_args, ablate_args;
  std::string train_data, eval_ckpt, eval_data, eval_split = "test", ablate_data, ablate_variants = "baseline,c-sa,g-sa",
                                                ablate_split = "test";
  std::size_t ablate_seeds = 5;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset and item embedding cache");
  add_common(gen, gen_args, true);

  auto* tr = app.add_subcommand("train", "train a model; writes model.tbin, metrics.jsonl, config.json");
  add_common(tr, train_args, true);
  tr->add_option("--data", train_data, "dataset directory")->required();

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint; prints {auc, logloss}");
  ev->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  ev->add_option("--data", eval_data, "dataset directory")->required();
  ev->add_option("--split", eval_split, "train, val or test");

  auto* be = app.add_subcommand("bench", "attention schema sweep; prints CSV");
  add_common(be, bench_args, false);

  auto* ab = app.add_subcommand("ablate", "matched-seed variant comparison");
  add_common(ab, ablate_args, true);
  ab->add_option("--data", ablate_data, "dataset directory")->required();
  ab->add_option("--variants", ablate_variants, "comma-separated: " + tbin::valid_variant_list());
  ab->add_option("--seeds", ablate_seeds, "seeds per variant")->check(CLI::PositiveNumber);
  ab->add_option("--split", ablate_split, "evaluation split");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_args);
    if (tr->parsed()) return cmd_train(train_args, train_data);
    if (ev->parsed()) return cmd_eval(eval_ckpt, eval_data, eval_split);
    if (be->parsed()) return cmd_bench(bench_args);
    if (ab->parsed()) return cmd_ablate(ablate_args, ablate_data, ablate_variants, ablate_seeds, ablate_split);
  } catch (const tbin::ConfigError& e) {
    std::cerr << "error: config: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
