#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace fetrack {

/// 8-bit grayscale image, row-major.
struct Image8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  Image8() = default;
  Image8(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

  std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }

  bool operator==(const Image8& o) const = default;
};

/// Binary PGM (P5, maxval 255).
Image8 read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const Image8& img);

/// Binary PPM (P6) writer for visualization dumps.
struct Rgb {
  std::uint8_t r, g, b;
};
void write_ppm(const std::filesystem::path& path, int width, int height,
               const std::vector<Rgb>& pixels);

}  // namespace fetrack
