#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "metarl/tensor.hpp"

namespace metarl {

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

// Binary layout, all integers little-endian:
//
//   magic   8 bytes  "MRLCKPT1"
//   count   u64
//   count x {
//     name_len u32, name bytes (UTF-8, no terminator)
//     rank     u32, rank x u64 dims
//     values   prod(dims) x f64 (IEEE-754 binary64)
//   }
//
// Entries keep their insertion order, so equal inputs give equal bytes.

std::vector<char> encode_checkpoint(const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> decode_checkpoint(const std::vector<char>& bytes);

void save_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> load_checkpoint(const std::filesystem::path& path);

}  // namespace metarl
