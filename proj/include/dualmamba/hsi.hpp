#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dualmamba/tensor.hpp"

// Hyperspectral rasters and their on-disk formats (all little-endian).
//
// HSIC cube:   "HSIC" | version u32 = 1 | H u32 | W u32 | B u32 | dtype u8 = 1 (f32)
//              | 3 reserved bytes | H*W*B f32, band fastest: ((r*W)+c)*B + b
// HSIL labels: "HSIL" | version u32 = 1 | H u32 | W u32 | class_count u16
//              | class_count names (u16 byte length + UTF-8) | H*W u16, 0 = unlabeled

namespace dualmamba {

struct Pixel {
  std::size_t row = 0;
  std::size_t col = 0;
  friend bool operator==(const Pixel&, const Pixel&) = default;
  friend auto operator<=>(const Pixel&, const Pixel&) = default;
};

struct CubeRaster {
  std::size_t height = 0, width = 0, bands = 0;
  std::vector<float> values;  // band fastest
};

struct LabelRaster {
  std::size_t height = 0, width = 0;
  std::vector<std::string> class_names;
  std::vector<std::uint16_t> labels;  // row-major, 0 = unlabeled, classes 1..class_count
};

std::string encode_hsic(const CubeRaster& cube);
CubeRaster decode_hsic(std::string_view bytes);
std::string encode_hsil(const LabelRaster& labels);
LabelRaster decode_hsil(std::string_view bytes);

void write_hsic(const std::filesystem::path& path, const CubeRaster& cube);
CubeRaster read_hsic(const std::filesystem::path& path);
void write_hsil(const std::filesystem::path& path, const LabelRaster& labels);
LabelRaster read_hsil(const std::filesystem::path& path);

/// Reflectance cube with its ground truth.
struct HsiCube {
  std::size_t height = 0, width = 0, bands = 0;
  std::vector<float> values;          // (H, W, B), band fastest
  std::vector<std::uint16_t> labels;  // (H, W)
  std::vector<std::string> class_names;

  std::size_t num_classes() const { return class_names.size(); }
  float value(std::size_t r, std::size_t c, std::size_t b) const { return values[(r * width + c) * bands + b]; }
  std::uint16_t label(std::size_t r, std::size_t c) const { return labels[r * width + c]; }

  // Sizes consistent, labels <= class count, values finite; FormatError otherwise.
  void validate() const;
};

HsiCube make_cube(CubeRaster cube, LabelRaster labels);
// Reads both files; DimensionError when their H, W disagree.
HsiCube load_cube(const std::filesystem::path& data_path, const std::filesystem::path& label_path);

enum class Normalization { standardize, minmax };

// Per band over all pixels: zero mean / unit (population) variance, or
// [0,1] min-max scaling. Constant bands become zero with a warning.
void normalize(HsiCube& cube, Normalization mode = Normalization::standardize);

// Mirror-reflected index into [0, n): -1 -> 1, n -> n-2.
std::size_t reflect_index(long long i, std::size_t n);

// P x P x B window centered at pixel, mirror padded; ShapeError for even P
// or out-of-range pixels.
Tensor<float> extract_patch(const HsiCube& cube, Pixel pixel, std::size_t patch);
void extract_patch_into(const HsiCube& cube, Pixel pixel, std::size_t patch, std::span<float> out);

// Stacks patches for `pixels` into (N,P,P,B).
Tensor<float> extract_batch(const HsiCube& cube, std::span<const Pixel> pixels, std::size_t patch);

}  // namespace dualmamba
