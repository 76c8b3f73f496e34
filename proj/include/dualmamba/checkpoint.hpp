#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "dualmamba/tensor.hpp"

// Checkpoint container, little-endian:
//   "DMCK" | version u32 | entry count u32 |
//   entries: name length u16 | UTF-8 name | rank u8 | extents u32 x rank | f32 payload
// Optimizer state is stored as ordinary entries under the reserved prefix
// "__adamw." (see kOptimizerPrefix).

namespace dualmamba {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::string_view kOptimizerPrefix = "__adamw.";

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

std::string encode_checkpoint(const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> decode_checkpoint(std::string_view bytes);

void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path);

template <typename T>
CheckpointEntry to_entry(std::string name, const Tensor<T>& t);

}  // namespace dualmamba
