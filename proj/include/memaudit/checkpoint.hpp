#pragma once

// Versioned checkpoint container (.mtckpt): an 8-byte magic, a little-endian
// u64 header length, a JSON header (config, named tensor shapes, byte
// offsets, training metadata), then the raw little-endian float32 parameter
// arrays. Save followed by load reproduces bit-identical parameters.

#include <string>

#include "memaudit/micro_transformer.hpp"

namespace memaudit {

inline constexpr char kCheckpointMagic[8] = {'M', 'T', 'C', 'K', 'P', 'T', '0', '1'};

void save_checkpoint(const MicroTransformer& model, const TrainingMeta& meta, const std::string& path);

struct LoadedModel {
  MicroTransformer model;
  TrainingMeta training;
};

LoadedModel load_checkpoint(const std::string& path);

// FNV-1a over the whole checkpoint file, as "fnv1a:<hex>".
std::string checkpoint_file_hash(const std::string& path);

}  // namespace memaudit
