#pragma once

// Checkpoint file layout (all integers little-endian):
//
//   "TBIN"                      magic
//   u32 version                 kCheckpointVersion
//   u32 n, n bytes              UTF-8 JSON header (model config, tensor names)
//   u32 count                   number of tensors
//   count x { u32 rows, u32 cols, rows*cols f32 }
//
// Tensors appear in a fixed order: the LSH projection matrix, then the model
// weights in for_each_tensor order.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>
#include <vector>

#include "json.hpp"
#include "tbin/model.hpp"

namespace tbin {

inline constexpr std::array<char, 4> kCheckpointMagic{'T', 'B', 'I', 'N'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"input_dim", c.input_dim},   {"model_dim", c.model_dim},       {"target_dim", c.target_dim},
          {"user_dim", c.user_dim},     {"blocks", c.blocks},             {"chunk_size", c.chunk_size},
          {"hash_bits", c.hash_bits},   {"heads", c.heads},               {"score_hidden", c.score_hidden},
          {"head_hidden", c.head_hidden}, {"seq_len", c.seq_len},
          {"schema", std::string(schema_name(c.schema))},
          {"ln_eps", c.ln_eps},         {"seed", c.seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.input_dim = j.at("input_dim").get<std::size_t>();
  c.model_dim = j.at("model_dim").get<std::size_t>();
  c.target_dim = j.at("target_dim").get<std::size_t>();
  c.user_dim = j.at("user_dim").get<std::size_t>();
  c.blocks = j.at("blocks").get<std::size_t>();
  c.chunk_size = j.at("chunk_size").get<std::size_t>();
  c.hash_bits = j.at("hash_bits").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.score_hidden = j.at("score_hidden").get<std::size_t>();
  c.head_hidden = j.at("head_hidden").get<std::size_t>();
  c.seq_len = j.at("seq_len").get<std::size_t>();
  c.schema = parse_schema(j.at("schema").get<std::string>());
  c.ln_eps = j.at("ln_eps").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.validate();
  return c;
}

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline void put_f32(std::string& out, double v) { put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v))); }

// Bounds-checked reader over an in-memory file image.
class ByteReader {
 public:
  ByteReader(const std::string& buf, std::string what) : buf_(buf), what_(std::move(what)) {}

  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw FormatError(what_ + ": truncated file");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == buf_.size(); }

 private:
  const std::string& buf_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& path, const std::string& what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(what + ": cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes, const std::string& what) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(what + ": cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(what + ": write failed for " + path.string());
}

}  // namespace detail

inline std::string serialize_checkpoint(const Model& model) {
  nlohmann::json header;
  header["model"] = to_json(model.config);
  header["projection_seed"] = model.projection.seed;
  std::vector<std::string> names{"lsh.projection"};
  std::vector<const Tensor2*> tensors{&model.projection.r};
  for_each_tensor(model.weights, [&](const std::string& n, const Tensor2& t) {
    names.push_back(n);
    tensors.push_back(&t);
  });
  header["tensors"] = names;
  const std::string text = header.dump();

  std::string out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  detail::put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const Tensor2* t : tensors) {
    detail::put_u32(out, static_cast<std::uint32_t>(t->rows()));
    detail::put_u32(out, static_cast<std::uint32_t>(t->cols()));
    for (double v : t->data()) detail::put_f32(out, v);
  }
  return out;
}

inline Model deserialize_checkpoint(const std::string& bytes) {
  const std::string what = "checkpoint";
  detail::ByteReader r(bytes, what);
  if (r.bytes(4) != std::string(kCheckpointMagic.begin(), kCheckpointMagic.end())) {
    throw FormatError("checkpoint: bad magic bytes");
  }
  if (const std::uint32_t v = r.u32(); v != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(v));
  }
  const std::uint32_t len = r.u32();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.bytes(len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad header: ") + e.what());
  }

  Model m;
  try {
    m.config = model_config_from_json(header.at("model"));
    m.projection.seed = header.at("projection_seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad header: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: bad model config: ") + e.what());
  }
  m.projection.r = Tensor2(m.config.input_dim, m.config.hash_bits);
  m.weights = zero_weights(m.config);

  std::vector<Tensor2*> tensors{&m.projection.r};
  for_each_tensor(m.weights, [&](const std::string&, Tensor2& t) { tensors.push_back(&t); });
  if (const std::uint32_t count = r.u32(); count != tensors.size()) {
    throw FormatError("checkpoint: expected " + std::to_string(tensors.size()) + " tensors, found " +
                      std::to_string(count));
  }
  for (Tensor2* t : tensors) {
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    if (rows != t->rows() || cols != t->cols()) {
      throw FormatError("checkpoint: tensor shape " + Tensor2::shape_string(rows, cols) + " expected " +
                        t->shape());
    }
    r.need(static_cast<std::size_t>(rows) * cols * 4);
    for (double& v : t->data()) v = static_cast<double>(r.f32());
  }
  if (!r.at_end()) throw FormatError("checkpoint: trailing bytes");
  return m;
}

inline void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  detail::write_file(path, serialize_checkpoint(model), "checkpoint");
}

inline Model load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(detail::read_file(path, "checkpoint"));
}

}  // namespace tbin
