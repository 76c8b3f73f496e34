#include "dualmamba/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <limits>

#include "byte_io.hpp"

namespace dualmamba {

std::string encode_checkpoint(const std::vector<CheckpointEntry>& entries) {
  ByteWriter w;
  w.bytes("DMCK");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (e.name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw FormatError("checkpoint: entry name too long: " + e.name.substr(0, 32) + "...");
    }
    if (e.shape.size() > std::numeric_limits<std::uint8_t>::max()) {
      throw FormatError("checkpoint: rank too large for entry " + e.name);
    }
    if (shape_numel(e.shape) != e.values.size()) {
      throw FormatError("checkpoint: entry " + e.name + " payload does not match its shape");
    }
    w.u16(static_cast<std::uint16_t>(e.name.size()));
    w.bytes(e.name);
    w.u8(static_cast<std::uint8_t>(e.shape.size()));
    for (auto d : e.shape) w.u32(static_cast<std::uint32_t>(d));
    for (float v : e.values) w.f32(v);
  }
  return w.take();
}

std::vector<CheckpointEntry> decode_checkpoint(std::string_view bytes) {
  ByteReader r(bytes, "checkpoint");
  if (r.bytes(4) != "DMCK") throw BadMagicError("checkpoint: bad magic (expected DMCK)");
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw UnsupportedVersionError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto count = r.u32();
  std::vector<CheckpointEntry> entries;
  for (std::uint32_t k = 0; k < count; ++k) {
    CheckpointEntry e;
    const auto len = r.u16();
    e.name = std::string(r.bytes(len));
    const auto rank = r.u8();
    for (std::uint8_t d = 0; d < rank; ++d) e.shape.push_back(r.u32());
    const std::size_t n = shape_numel(e.shape);
    r.require(n * 4, "payload of entry " + e.name);
    e.values.resize(n);
    for (auto& v : e.values) v = r.f32();
    entries.push_back(std::move(e));
  }
  if (!r.at_end()) throw FormatError("checkpoint: trailing bytes after last entry");
  return entries;
}

void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointEntry>& entries) {
  const std::string bytes = encode_checkpoint(entries);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("checkpoint: cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("checkpoint: write failed for " + path.string());
}

std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path, "checkpoint"));
}

template <typename T>
CheckpointEntry to_entry(std::string name, const Tensor<T>& t) {
  CheckpointEntry e{std::move(name), t.shape(), {}};
  e.values.reserve(t.numel());
  for (T v : t.data()) e.values.push_back(static_cast<float>(v));
  return e;
}

template CheckpointEntry to_entry<float>(std::string, const Tensor<float>&);
template CheckpointEntry to_entry<double>(std::string, const Tensor<double>&);

}  // namespace dualmamba
