#include "dualmamba/render.hpp"

#include <cmath>
#include <fstream>

#include "dualmamba/error.hpp"

namespace dualmamba {

std::vector<Color> default_palette(std::size_t n) {
  std::vector<Color> out;
  out.reserve(n);
  // Golden-angle hue walk at two alternating lightness levels.
  for (std::size_t k = 0; k < n; ++k) {
    const double h = std::fmod(static_cast<double>(k) * 137.508, 360.0) / 60.0;
    const double v = (k % 2 == 0) ? 0.95 : 0.7;
    const double s = 0.85;
    const double c = v * s;
    const double x = c * (1.0 - std::fabs(std::fmod(h, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    switch (static_cast<int>(h)) {
      case 0: r = c, g = x; break;
      case 1: r = x, g = c; break;
      case 2: g = c, b = x; break;
      case 3: g = x, b = c; break;
      case 4: r = x, b = c; break;
      default: r = c, b = x; break;
    }
    const double m = v - c;
    auto to8 = [](double u) { return static_cast<std::uint8_t>(std::lround(u * 255.0)); };
    out.push_back({to8(r + m), to8(g + m), to8(b + m)});
  }
  return out;
}

std::string encode_ppm(std::size_t height, std::size_t width, const std::vector<std::uint16_t>& classes,
                       const std::vector<Color>& palette) {
  if (classes.size() != height * width) {
    throw ShapeError("render_map: " + std::to_string(classes.size()) + " predictions for a " + std::to_string(height) +
                     "x" + std::to_string(width) + " raster");
  }
  std::string out = "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  out.reserve(out.size() + classes.size() * 3);
  for (auto k : classes) {
    if (k > palette.size()) {
      throw ConfigError("render_map: class " + std::to_string(k) + " outside palette of " +
                        std::to_string(palette.size()) + " colors");
    }
    const Color c = k == 0 ? Color{0, 0, 0} : palette[k - 1];
    for (auto ch : c) out.push_back(static_cast<char>(ch));
  }
  return out;
}

void write_ppm(const std::filesystem::path& path, std::size_t height, std::size_t width,
               const std::vector<std::uint16_t>& classes, const std::vector<Color>& palette) {
  const std::string bytes = encode_ppm(height, width, classes, palette);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("render_map: cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("render_map: write failed for " + path.string());
}

}  // namespace dualmamba
