#pragma once

// Flat JSON run configuration shared by every CLI command. Keys are fixed;
// a config file and key=value overrides are applied in order, last wins.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "tbin/bench.hpp"
#include "tbin/data.hpp"
#include "tbin/model.hpp"
#include "tbin/train.hpp"

namespace tbin {

inline nlohmann::json default_run_config() {
  const data::SyntheticSpec s;
  const ModelConfig m;
  const TrainConfig t;
  const bench::SweepConfig b;
  return {
      // data
      {"clusters", s.clusters},
      {"input_dim", s.input_dim},
      {"items_per_cluster", s.items_per_cluster},
      {"users", s.users},
      {"samples_per_user", s.samples_per_user},
      {"seq_len", s.seq_len},
      {"interests_per_user", s.interests_per_user},
      {"user_dim", s.user_dim},
      {"label_noise", s.label_noise},
      {"noise_scale", s.noise_scale},
      {"min_center_angle_deg", s.min_center_angle_deg},
      {"val_fraction", s.val_fraction},
      {"test_fraction", s.test_fraction},
      {"data_seed", s.seed},
      // model
      {"model_dim", m.model_dim},
      {"blocks", m.blocks},
      {"chunk_size", m.chunk_size},
      {"hash_bits", m.hash_bits},
      {"heads", m.heads},
      {"score_hidden", m.score_hidden},
      {"head_hidden", m.head_hidden},
      {"schema", std::string(schema_name(m.schema))},
      {"ln_eps", m.ln_eps},
      {"seed", m.seed},
      // training
      {"learning_rate", t.optimizer.learning_rate},
      {"batch_size", t.batch_size},
      {"steps", t.steps},
      {"optimizer", "adam"},
      {"eval_every", t.eval_every},
      // benchmark
      {"bench_lengths", "256,512,1024,2048"},
      {"bench_schemas", "G-SA,B-SA,C-SA,SC-SA"},
      {"bench_chunk_size", b.chunk_size},
      {"bench_dim", b.dim},
      {"bench_trials", b.trials},
      {"bench_min_trial_ms", b.min_trial_ms},
  };
}

class RunConfig {
 public:
  RunConfig() : values_(default_run_config()) {}

  const nlohmann::json& values() const noexcept { return values_; }

  // Merges a flat JSON object; unknown keys and type changes are rejected.
  void merge(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
    for (const auto& [key, value] : j.items()) set(key, value);
  }

  void merge_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path.string());
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config: " + path.string() + ": " + e.what());
    }
    merge(j);
  }

  // Parses "key=value" using the type of the key's default.
  void apply_override(std::string_view kv) {
    const auto eq = kv.find('=');
    if (eq == std::string_view::npos || eq == 0) {
      throw ConfigError("config: override '" + std::string(kv) + "' is not key=value");
    }
    const std::string key(kv.substr(0, eq));
    const std::string text(kv.substr(eq + 1));
    const nlohmann::json& def = lookup(key);
    nlohmann::json value;
    if (def.is_string()) {
      value = text;
    } else if (def.is_boolean()) {
      if (text != "true" && text != "false") throw ConfigError("config: " + key + " expects true or false");
      value = text == "true";
    } else if (def.is_number_unsigned() || def.is_number_integer()) {
      std::uint64_t v = 0;
      const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
      if (ec != std::errc() || ptr != text.data() + text.size()) {
        throw ConfigError("config: " + key + " expects a non-negative integer, got '" + text + "'");
      }
      value = v;
    } else {
      double v = 0.0;
      std::size_t used = 0;
      try {
        v = std::stod(text, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != text.size() || text.empty()) throw ConfigError("config: " + key + " expects a number, got '" + text + "'");
      value = v;
    }
    values_[key] = value;
  }

  template <class T>
  T get(const std::string& key) const {
    return lookup(key).get<T>();
  }

 private:
  const nlohmann::json& lookup(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("config: unknown key '" + key + "'");
    return *it;
  }

  void set(const std::string& key, const nlohmann::json& value) {
    const nlohmann::json& def = lookup(key);
    const bool ok = (def.is_string() && value.is_string()) || (def.is_boolean() && value.is_boolean()) ||
                    ((def.is_number_unsigned() || def.is_number_integer()) && value.is_number_unsigned()) ||
                    (def.is_number_float() && value.is_number());
    if (!ok) throw ConfigError("config: key '" + key + "' has the wrong type");
    values_[key] = def.is_number_float() ? nlohmann::json(value.get<double>()) : value;
  }

  nlohmann::json values_;
};

inline data::SyntheticSpec synthetic_spec(const RunConfig& c) {
  data::SyntheticSpec s;
  s.clusters = c.get<std::size_t>("clusters");
  s.input_dim = c.get<std::size_t>("input_dim");
  s.items_per_cluster = c.get<std::size_t>("items_per_cluster");
  s.users = c.get<std::size_t>("users");
  s.samples_per_user = c.get<std::size_t>("samples_per_user");
  s.seq_len = c.get<std::size_t>("seq_len");
  s.interests_per_user = c.get<std::size_t>("interests_per_user");
  s.user_dim = c.get<std::size_t>("user_dim");
  s.label_noise = c.get<double>("label_noise");
  s.noise_scale = c.get<double>("noise_scale");
  s.min_center_angle_deg = c.get<double>("min_center_angle_deg");
  s.val_fraction = c.get<double>("val_fraction");
  s.test_fraction = c.get<double>("test_fraction");
  s.seed = c.get<std::uint64_t>("data_seed");
  s.validate();
  return s;
}

inline ModelConfig model_config(const RunConfig& c) {
  ModelConfig m;
  m.input_dim = c.get<std::size_t>("input_dim");
  m.target_dim = m.input_dim;
  m.user_dim = c.get<std::size_t>("user_dim");
  m.model_dim = c.get<std::size_t>("model_dim");
  m.blocks = c.get<std::size_t>("blocks");
  m.chunk_size = c.get<std::size_t>("chunk_size");
  m.hash_bits = c.get<std::size_t>("hash_bits");
  m.heads = c.get<std::size_t>("heads");
  m.score_hidden = c.get<std::size_t>("score_hidden");
  m.head_hidden = c.get<std::size_t>("head_hidden");
  m.seq_len = c.get<std::size_t>("seq_len");
  m.schema = parse_schema(c.get<std::string>("schema"));
  m.ln_eps = c.get<double>("ln_eps");
  m.seed = c.get<std::uint64_t>("seed");
  m.validate();
  return m;
}

inline TrainConfig train_config(const RunConfig& c) {
  TrainConfig t;
  t.optimizer.kind = parse_optimizer(c.get<std::string>("optimizer"));
  t.optimizer.learning_rate = c.get<double>("learning_rate");
  t.batch_size = c.get<std::size_t>("batch_size");
  t.steps = c.get<std::size_t>("steps");
  t.eval_every = c.get<std::size_t>("eval_every");
  t.seed = c.get<std::uint64_t>("seed");
  t.validate();
  return t;
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline bench::SweepConfig sweep_config(const RunConfig& c) {
  bench::SweepConfig b;
  b.lengths.clear();
  for (const auto& s : split_list(c.get<std::string>("bench_lengths"))) {
    try {
      b.lengths.push_back(std::stoull(s));
    } catch (const std::exception&) {
      throw ConfigError("config: bench_lengths entry '" + s + "' is not an integer");
    }
  }
  b.schemas.clear();
  for (const auto& s : split_list(c.get<std::string>("bench_schemas"))) b.schemas.push_back(bench::parse_schema(s));
  b.chunk_size = c.get<std::size_t>("bench_chunk_size");
  b.dim = c.get<std::size_t>("bench_dim");
  b.trials = c.get<std::size_t>("bench_trials");
  b.min_trial_ms = c.get<double>("bench_min_trial_ms");
  b.hash_bits = c.get<std::size_t>("hash_bits");
  b.seed = c.get<std::uint64_t>("seed");
  b.validate();
  return b;
}

}  // namespace tbin
