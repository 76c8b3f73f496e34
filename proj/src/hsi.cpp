#include "dualmamba/hsi.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "byte_io.hpp"
#include "dualmamba/log.hpp"
#include "dualmamba/parallel.hpp"

namespace dualmamba {

namespace {

constexpr std::uint32_t kRasterVersion = 1;
constexpr std::uint8_t kDtypeF32 = 1;

void write_bytes(const std::filesystem::path& path, const std::string& bytes, const char* what) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(std::string(what) + ": cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(std::string(what) + ": write failed for " + path.string());
}

void check_header(ByteReader& r, std::string_view magic, const char* what) {
  if (r.bytes(4) != magic) throw BadMagicError(std::string(what) + ": bad magic (expected " + std::string(magic) + ")");
  const auto version = r.u32();
  if (version != kRasterVersion) {
    throw UnsupportedVersionError(std::string(what) + ": unsupported version " + std::to_string(version));
  }
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > std::numeric_limits<std::uint32_t>::max()) throw DimensionError(std::string(what) + ": dimension too large");
  return static_cast<std::uint32_t>(v);
}

}  // namespace

std::string encode_hsic(const CubeRaster& cube) {
  if (cube.values.size() != cube.height * cube.width * cube.bands) {
    throw DimensionError("HSIC: payload holds " + std::to_string(cube.values.size()) + " values, dims require " +
                         std::to_string(cube.height * cube.width * cube.bands));
  }
  ByteWriter w;
  w.bytes("HSIC");
  w.u32(kRasterVersion);
  w.u32(checked_u32(cube.height, "HSIC"));
  w.u32(checked_u32(cube.width, "HSIC"));
  w.u32(checked_u32(cube.bands, "HSIC"));
  w.u8(kDtypeF32);
  w.bytes(std::string_view("\0\0\0", 3));
  for (float v : cube.values) w.f32(v);
  return w.take();
}

CubeRaster decode_hsic(std::string_view bytes) {
  ByteReader r(bytes, "HSIC");
  check_header(r, "HSIC", "HSIC");
  CubeRaster cube;
  cube.height = r.u32();
  cube.width = r.u32();
  cube.bands = r.u32();
  const auto dtype = r.u8();
  r.bytes(3);
  if (cube.height == 0 || cube.width == 0 || cube.bands == 0) {
    throw DimensionError("HSIC: zero dimension in header (" + std::to_string(cube.height) + "x" +
                         std::to_string(cube.width) + "x" + std::to_string(cube.bands) + ")");
  }
  if (dtype != kDtypeF32) throw FormatError("HSIC: unsupported dtype " + std::to_string(dtype) + " (expected 1 = f32)");
  const std::size_t n = cube.height * cube.width * cube.bands;
  r.require(n * 4, "payload");
  cube.values.resize(n);
  for (auto& v : cube.values) v = r.f32();
  if (!r.at_end()) {
    throw DimensionError("HSIC: " + std::to_string(r.remaining()) + " bytes beyond the payload declared by the header");
  }
  return cube;
}

std::string encode_hsil(const LabelRaster& labels) {
  if (labels.labels.size() != labels.height * labels.width) {
    throw DimensionError("HSIL: payload holds " + std::to_string(labels.labels.size()) + " labels, dims require " +
                         std::to_string(labels.height * labels.width));
  }
  if (labels.class_names.size() > std::numeric_limits<std::uint16_t>::max()) {
    throw FormatError("HSIL: too many classes");
  }
  ByteWriter w;
  w.bytes("HSIL");
  w.u32(kRasterVersion);
  w.u32(checked_u32(labels.height, "HSIL"));
  w.u32(checked_u32(labels.width, "HSIL"));
  w.u16(static_cast<std::uint16_t>(labels.class_names.size()));
  for (const auto& name : labels.class_names) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) throw FormatError("HSIL: class name too long");
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name);
  }
  for (auto v : labels.labels) w.u16(v);
  return w.take();
}

LabelRaster decode_hsil(std::string_view bytes) {
  ByteReader r(bytes, "HSIL");
  check_header(r, "HSIL", "HSIL");
  LabelRaster out;
  out.height = r.u32();
  out.width = r.u32();
  if (out.height == 0 || out.width == 0) {
    throw DimensionError("HSIL: zero dimension in header (" + std::to_string(out.height) + "x" +
                         std::to_string(out.width) + ")");
  }
  const auto count = r.u16();
  for (std::uint16_t k = 0; k < count; ++k) {
    const auto len = r.u16();
    out.class_names.emplace_back(r.bytes(len));
  }
  const std::size_t n = out.height * out.width;
  r.require(n * 2, "payload");
  out.labels.resize(n);
  for (auto& v : out.labels) {
    v = r.u16();
    if (v > count) {
      throw FormatError("HSIL: label " + std::to_string(v) + " exceeds class count " + std::to_string(count));
    }
  }
  if (!r.at_end()) {
    throw DimensionError("HSIL: " + std::to_string(r.remaining()) + " bytes beyond the payload declared by the header");
  }
  return out;
}

void write_hsic(const std::filesystem::path& path, const CubeRaster& cube) {
  write_bytes(path, encode_hsic(cube), "HSIC");
}

CubeRaster read_hsic(const std::filesystem::path& path) { return decode_hsic(read_file_bytes(path, "HSIC")); }

void write_hsil(const std::filesystem::path& path, const LabelRaster& labels) {
  write_bytes(path, encode_hsil(labels), "HSIL");
}

LabelRaster read_hsil(const std::filesystem::path& path) { return decode_hsil(read_file_bytes(path, "HSIL")); }

void HsiCube::validate() const {
  if (values.size() != height * width * bands) throw DimensionError("cube: value count does not match dimensions");
  if (labels.size() != height * width) throw DimensionError("cube: label count does not match dimensions");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] > class_names.size()) {
      throw FormatError("cube: label " + std::to_string(labels[i]) + " at pixel " + std::to_string(i) +
                        " exceeds class count " + std::to_string(class_names.size()));
    }
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw FormatError("cube: non-finite value at pixel " + std::to_string(i / bands) + ", band " +
                        std::to_string(i % bands));
    }
  }
}

HsiCube make_cube(CubeRaster cube, LabelRaster labels) {
  if (cube.height != labels.height || cube.width != labels.width) {
    throw DimensionError("cube is " + std::to_string(cube.height) + "x" + std::to_string(cube.width) +
                         " but label raster is " + std::to_string(labels.height) + "x" + std::to_string(labels.width));
  }
  HsiCube out;
  out.height = cube.height;
  out.width = cube.width;
  out.bands = cube.bands;
  out.values = std::move(cube.values);
  out.labels = std::move(labels.labels);
  out.class_names = std::move(labels.class_names);
  out.validate();
  return out;
}

HsiCube load_cube(const std::filesystem::path& data_path, const std::filesystem::path& label_path) {
  return make_cube(read_hsic(data_path), read_hsil(label_path));
}

void normalize(HsiCube& cube, Normalization mode) {
  const std::size_t pixels = cube.height * cube.width, B = cube.bands;
  for (std::size_t b = 0; b < B; ++b) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo, sum = 0.0;
    for (std::size_t p = 0; p < pixels; ++p) {
      const double v = cube.values[p * B + b];
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      sum += v;
    }
    const double mean = sum / static_cast<double>(pixels);
    double offset = 0.0, inv = 0.0;
    if (mode == Normalization::standardize) {
      double ss = 0.0;
      for (std::size_t p = 0; p < pixels; ++p) {
        const double d = cube.values[p * B + b] - mean;
        ss += d * d;
      }
      const double sd = std::sqrt(ss / static_cast<double>(pixels));
      offset = mean;
      inv = sd > 0.0 ? 1.0 / sd : 0.0;
    } else {
      offset = lo;
      inv = hi > lo ? 1.0 / (hi - lo) : 0.0;
    }
    if (inv == 0.0) warn("band " + std::to_string(b) + " is constant; set to zero");
    for (std::size_t p = 0; p < pixels; ++p) {
      auto& v = cube.values[p * B + b];
      v = static_cast<float>((v - offset) * inv);
    }
  }
}

std::size_t reflect_index(long long i, std::size_t n) {
  if (n == 1) return 0;
  const long long period = 2 * (static_cast<long long>(n) - 1);
  long long m = i % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < static_cast<long long>(n) ? m : period - m);
}

void extract_patch_into(const HsiCube& cube, Pixel pixel, std::size_t patch, std::span<float> out) {
  if (patch == 0 || patch % 2 == 0) {
    throw ShapeError("extract_patch: patch side must be odd, got " + std::to_string(patch));
  }
  if (pixel.row >= cube.height || pixel.col >= cube.width) {
    throw ShapeError("extract_patch: pixel (" + std::to_string(pixel.row) + "," + std::to_string(pixel.col) +
                     ") outside " + std::to_string(cube.height) + "x" + std::to_string(cube.width));
  }
  const std::size_t B = cube.bands;
  if (out.size() != patch * patch * B) throw ShapeError("extract_patch: output buffer has the wrong size");
  const long long half = static_cast<long long>(patch / 2);
  for (std::size_t i = 0; i < patch; ++i) {
    const auto r = reflect_index(static_cast<long long>(pixel.row) + static_cast<long long>(i) - half, cube.height);
    for (std::size_t j = 0; j < patch; ++j) {
      const auto c = reflect_index(static_cast<long long>(pixel.col) + static_cast<long long>(j) - half, cube.width);
      const float* src = &cube.values[(r * cube.width + c) * B];
      std::copy(src, src + B, out.begin() + static_cast<std::ptrdiff_t>((i * patch + j) * B));
    }
  }
}

Tensor<float> extract_patch(const HsiCube& cube, Pixel pixel, std::size_t patch) {
  Tensor<float> t(Shape{patch, patch, cube.bands});
  extract_patch_into(cube, pixel, patch, t.data());
  return t;
}

Tensor<float> extract_batch(const HsiCube& cube, std::span<const Pixel> pixels, std::size_t patch) {
  const std::size_t stride = patch * patch * cube.bands;
  Tensor<float> t(Shape{pixels.size(), patch, patch, cube.bands});
  auto data = t.data();
  parallel_for(pixels.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) extract_patch_into(cube, pixels[k], patch, data.subspan(k * stride, stride));
  });
  return t;
}

}  // namespace dualmamba
