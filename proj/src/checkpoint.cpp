#include "memaudit/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "memaudit/rng.hpp"

namespace memaudit {

using nlohmann::ordered_json;

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");
static_assert(sizeof(float) == 4, "checkpoint format stores 32-bit floats");

void save_checkpoint(const MicroTransformer& model, const TrainingMeta& meta, const std::string& path) {
  const MicroTransformerConfig& cfg = model.config();
  ordered_json header;
  header["format_version"] = 1;
  header["config"] = {
      {"vocab_size", cfg.vocab_size},   {"embed_dim", cfg.embed_dim},
      {"layers", cfg.layers},           {"heads", cfg.heads},
      {"context_len", cfg.context_len}, {"seed", cfg.seed},
      {"learning_rate", cfg.learning_rate}, {"epochs", cfg.epochs},
  };
  ordered_json tensors = ordered_json::array();
  for (const auto& t : model.tensors()) {
    tensors.push_back({{"name", t.name},
                       {"shape", t.shape},
                       {"offset_bytes", t.offset * sizeof(float)},
                       {"count", t.count}});
  }
  header["tensors"] = std::move(tensors);
  header["training"] = {
      {"corpus_hash", meta.corpus_hash},
      {"epochs", meta.epochs},
      {"final_loss", meta.final_loss},
  };
  const std::string header_str = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataFormatError("cannot write checkpoint " + path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::uint64_t header_len = header_str.size();
  out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  const auto& params = model.parameters();
  out.write(reinterpret_cast<const char*>(params.data()),
            static_cast<std::streamsize>(params.size() * sizeof(float)));
  if (!out) throw DataFormatError("failed while writing checkpoint " + path);
}

LoadedModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataFormatError("cannot open checkpoint " + path);
  char magic[sizeof(kCheckpointMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw DataFormatError(path + ": not a MTCKPT01 checkpoint");
  }
  std::uint64_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  if (!in || header_len == 0 || header_len > (1u << 24)) {
    throw DataFormatError(path + ": implausible checkpoint header length");
  }
  std::string header_str(header_len, '\0');
  in.read(header_str.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw DataFormatError(path + ": truncated checkpoint header");

  ordered_json header;
  try {
    header = ordered_json::parse(header_str);
  } catch (const std::exception& e) {
    throw DataFormatError(path + ": bad checkpoint header JSON: " + std::string(e.what()));
  }
  if (header.value("format_version", 0) != 1) {
    throw DataFormatError(path + ": unsupported checkpoint format version");
  }
  const auto& jc = header.at("config");
  MicroTransformerConfig cfg;
  cfg.vocab_size = jc.at("vocab_size").get<int>();
  cfg.embed_dim = jc.at("embed_dim").get<int>();
  cfg.layers = jc.at("layers").get<int>();
  cfg.heads = jc.at("heads").get<int>();
  cfg.context_len = jc.at("context_len").get<int>();
  cfg.seed = jc.at("seed").get<std::uint64_t>();
  cfg.learning_rate = jc.at("learning_rate").get<double>();
  cfg.epochs = jc.at("epochs").get<int>();

  std::size_t total = 0;
  for (const auto& t : header.at("tensors")) total += t.at("count").get<std::size_t>();
  std::vector<float> params(total, 0.0f);
  in.read(reinterpret_cast<char*>(params.data()), static_cast<std::streamsize>(total * sizeof(float)));
  if (!in || in.gcount() != static_cast<std::streamsize>(total * sizeof(float))) {
    throw DataFormatError(path + ": truncated parameter data");
  }

  TrainingMeta meta;
  if (header.contains("training")) {
    const auto& jt = header["training"];
    meta.corpus_hash = jt.value("corpus_hash", std::string{});
    meta.epochs = jt.value("epochs", 0);
    meta.final_loss = jt.value("final_loss", 0.0);
  }
  return LoadedModel{MicroTransformer(cfg, std::move(params)), std::move(meta)};
}

std::string checkpoint_file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataFormatError("cannot open " + path);
  std::uint64_t h = 14695981039346656037ULL;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    const std::streamsize got = in.gcount();
    if (got > 0) h = fnv1a64(buf, static_cast<std::size_t>(got), h);
  }
  char out[32];
  std::snprintf(out, sizeof(out), "fnv1a:%016llx", static_cast<unsigned long long>(h));
  return out;
}

}  // namespace memaudit
