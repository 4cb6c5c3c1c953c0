#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace einv {

// 8-bit RGB raster with a tiny drawing vocabulary for charts.
struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
};

class Canvas {
 public:
  Canvas(int width, int height, Rgb background = {255, 255, 255});
  int width() const { return width_; }
  int height() const { return height_; }
  void set(int x, int y, Rgb c);
  void fill_rect(int x0, int y0, int x1, int y1, Rgb c);
  void line(int x0, int y0, int x1, int y1, Rgb c);
  void dot(int cx, int cy, int radius, Rgb c);
  // 5x7 bitmap text; unsupported characters render as blanks.
  void text(int x, int y, const std::string& s, Rgb c, int scale = 1);
  static int text_width(const std::string& s, int scale = 1) { return static_cast<int>(s.size()) * 6 * scale; }
  std::vector<std::uint8_t> png() const;
  void save_png(const std::filesystem::path& path) const;

 private:
  int width_, height_;
  std::vector<std::uint8_t> pixels_;
};

std::vector<std::uint8_t> encode_png(int width, int height, int channels, const std::vector<std::uint8_t>& pixels);

// Tiles [N,1,H,W] images in [-1,1] into a grid PNG, `columns` per row.
void save_image_grid(const std::filesystem::path& path, const torch::Tensor& images, std::int64_t columns,
                     std::int64_t padding = 2);

// Heatmap of a matrix (blue negative, red positive) scaled by max |value|.
void save_heatmap(const std::filesystem::path& path, const std::vector<std::vector<double>>& values,
                  int cell = 24);

}  // namespace einv
