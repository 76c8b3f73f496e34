#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace dualmamba {

using Color = std::array<std::uint8_t, 3>;

// Deterministic, visually distinct colors for classes 1..n.
std::vector<Color> default_palette(std::size_t n);

/// Binary PPM (P6): "P6\n<W> <H>\n255\n" then RGB triples row-major.
/// classes holds 0 (masked, black) or 1..palette.size(); anything larger
/// raises ConfigError.
std::string encode_ppm(std::size_t height, std::size_t width, const std::vector<std::uint16_t>& classes,
                       const std::vector<Color>& palette);
void write_ppm(const std::filesystem::path& path, std::size_t height, std::size_t width,
               const std::vector<std::uint16_t>& classes, const std::vector<Color>& palette);

}  // namespace dualmamba
