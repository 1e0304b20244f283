#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace rccm::plot {

// RGB8 canvas with the handful of drawing primitives the report plots need.
struct Canvas {
  int width = 0, height = 0;
  std::vector<uint8_t> rgb;

  Canvas(int w, int h) : width(w), height(h), rgb(static_cast<size_t>(w * h * 3), 255) {}
  void set(int x, int y, uint8_t r, uint8_t g, uint8_t b);
  void hline(int x0, int x1, int y, uint8_t r, uint8_t g, uint8_t b);
  void vline(int x, int y0, int y1, uint8_t r, uint8_t g, uint8_t b);
  void dot(int x, int y, int radius, uint8_t r, uint8_t g, uint8_t b);
  void line(int x0, int y0, int x1, int y1, uint8_t r, uint8_t g, uint8_t b);
  // 5x7 bitmap glyphs: digits, '-', '.', ' '
  void text(int x, int y, const std::string& s, uint8_t r, uint8_t g, uint8_t b);
};

// Uncompressed-deflate PNG; dependency-free.
void write_png(const std::filesystem::path& path, const Canvas& canvas);

// y-vs-x scatter with an identity line (manual vs algorithm areas).
void scatter_plot(const std::filesystem::path& path, const std::vector<double>& x,
                  const std::vector<double>& y);

// Bland-Altman: (mean, difference) points with bias and limit lines.
void bland_altman_plot(const std::filesystem::path& path, const std::vector<double>& x,
                       const std::vector<double>& y);

}  // namespace rccm::plot
