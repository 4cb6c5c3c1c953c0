#include "einv/image.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <span>

#include "einv/artifact.hpp"
#include "einv/dataset.hpp"
#include "einv/error.hpp"

namespace einv {

namespace {

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

void chunk(std::vector<std::uint8_t>& out, const char* type, const std::vector<std::uint8_t>& data) {
  put_be32(out, static_cast<std::uint32_t>(data.size()));
  const auto start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const auto crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
  put_be32(out, static_cast<std::uint32_t>(crc));
}

// Glyphs for digits, upper-case letters and a few symbols; 7 rows of 5 bits.
const std::array<std::uint8_t, 7>* glyph(char ch) {
  struct Entry {
    char c;
    std::array<std::uint8_t, 7> rows;
  };
  static const Entry table[] = {
      {'0', {14, 17, 19, 21, 25, 17, 14}}, {'1', {4, 12, 4, 4, 4, 4, 14}},     {'2', {14, 17, 1, 2, 4, 8, 31}},
      {'3', {31, 2, 4, 2, 1, 17, 14}},     {'4', {2, 6, 10, 18, 31, 2, 2}},    {'5', {31, 16, 30, 1, 1, 17, 14}},
      {'6', {6, 8, 16, 30, 17, 17, 14}},   {'7', {31, 1, 2, 4, 8, 8, 8}},      {'8', {14, 17, 17, 14, 17, 17, 14}},
      {'9', {14, 17, 17, 15, 1, 2, 12}},   {'A', {14, 17, 17, 31, 17, 17, 17}}, {'B', {30, 17, 17, 30, 17, 17, 30}},
      {'C', {14, 17, 16, 16, 16, 17, 14}}, {'D', {28, 18, 17, 17, 17, 18, 28}}, {'E', {31, 16, 16, 30, 16, 16, 31}},
      {'F', {31, 16, 16, 30, 16, 16, 16}}, {'G', {14, 17, 16, 23, 17, 17, 15}}, {'H', {17, 17, 17, 31, 17, 17, 17}},
      {'I', {14, 4, 4, 4, 4, 4, 14}},      {'J', {7, 2, 2, 2, 2, 18, 12}},     {'K', {17, 18, 20, 24, 20, 18, 17}},
      {'L', {16, 16, 16, 16, 16, 16, 31}}, {'M', {17, 27, 21, 21, 17, 17, 17}}, {'N', {17, 17, 25, 21, 19, 17, 17}},
      {'O', {14, 17, 17, 17, 17, 17, 14}}, {'P', {30, 17, 17, 30, 16, 16, 16}}, {'Q', {14, 17, 17, 17, 21, 18, 13}},
      {'R', {30, 17, 17, 30, 20, 18, 17}}, {'S', {15, 16, 16, 14, 1, 1, 30}},   {'T', {31, 4, 4, 4, 4, 4, 4}},
      {'U', {17, 17, 17, 17, 17, 17, 14}}, {'V', {17, 17, 17, 17, 17, 10, 4}},  {'W', {17, 17, 17, 21, 21, 21, 10}},
      {'X', {17, 17, 10, 4, 10, 17, 17}},  {'Y', {17, 17, 10, 4, 4, 4, 4}},     {'Z', {31, 1, 2, 4, 8, 16, 31}},
      {'.', {0, 0, 0, 0, 0, 12, 12}},      {'-', {0, 0, 0, 31, 0, 0, 0}},      {'+', {0, 4, 4, 31, 4, 4, 0}},
      {'=', {0, 0, 31, 0, 31, 0, 0}},      {':', {0, 12, 12, 0, 12, 12, 0}},   {'/', {1, 1, 2, 4, 8, 16, 16}},
      {'(', {2, 4, 8, 8, 8, 4, 2}},        {')', {8, 4, 2, 2, 2, 4, 8}},       {'_', {0, 0, 0, 0, 0, 0, 31}},
      {'%', {24, 25, 2, 4, 8, 19, 3}},     {',', {0, 0, 0, 0, 12, 4, 8}},
  };
  const char up = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  for (const auto& e : table) {
    if (e.c == up) return &e.rows;
  }
  return nullptr;
}

}  // namespace

std::vector<std::uint8_t> encode_png(int width, int height, int channels, const std::vector<std::uint8_t>& pixels) {
  if (channels != 1 && channels != 3) throw ValidationError("png: 1 or 3 channels");
  const std::size_t stride = static_cast<std::size_t>(width) * channels;
  if (pixels.size() != stride * height) throw ValidationError("png: pixel buffer size mismatch");
  std::vector<std::uint8_t> raw;
  raw.reserve((stride + 1) * height);
  for (int y = 0; y < height; ++y) {
    raw.push_back(0);  // filter: none
    raw.insert(raw.end(), pixels.begin() + static_cast<long>(y * stride),
               pixels.begin() + static_cast<long>((y + 1) * stride));
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> z(bound);
  if (compress2(z.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK) {
    throw IoError("png: deflate failed");
  }
  z.resize(bound);

  std::vector<std::uint8_t> out{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  std::vector<std::uint8_t> ihdr;
  put_be32(ihdr, static_cast<std::uint32_t>(width));
  put_be32(ihdr, static_cast<std::uint32_t>(height));
  ihdr.insert(ihdr.end(), {8, static_cast<std::uint8_t>(channels == 3 ? 2 : 0), 0, 0, 0});
  chunk(out, "IHDR", ihdr);
  chunk(out, "IDAT", z);
  chunk(out, "IEND", {});
  return out;
}

Canvas::Canvas(int width, int height, Rgb background)
    : width_(width), height_(height), pixels_(static_cast<std::size_t>(width) * height * 3) {
  fill_rect(0, 0, width - 1, height - 1, background);
}

void Canvas::set(int x, int y, Rgb c) {
  if (x < 0 || y < 0 || x >= width_ || y >= height_) return;
  auto* p = &pixels_[(static_cast<std::size_t>(y) * width_ + x) * 3];
  p[0] = c.r;
  p[1] = c.g;
  p[2] = c.b;
}

void Canvas::fill_rect(int x0, int y0, int x1, int y1, Rgb c) {
  if (x0 > x1) std::swap(x0, x1);
  if (y0 > y1) std::swap(y0, y1);
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) set(x, y, c);
  }
}

void Canvas::line(int x0, int y0, int x1, int y1, Rgb c) {
  const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
  const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    set(x0, y0, c);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

void Canvas::dot(int cx, int cy, int radius, Rgb c) {
  for (int y = -radius; y <= radius; ++y) {
    for (int x = -radius; x <= radius; ++x) {
      if (x * x + y * y <= radius * radius) set(cx + x, cy + y, c);
    }
  }
}

void Canvas::text(int x, int y, const std::string& s, Rgb c, int scale) {
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto* g = glyph(s[i]);
    if (g == nullptr) continue;
    const int ox = x + static_cast<int>(i) * 6 * scale;
    for (int row = 0; row < 7; ++row) {
      for (int col = 0; col < 5; ++col) {
        if (((*g)[row] >> (4 - col)) & 1) {
          fill_rect(ox + col * scale, y + row * scale, ox + (col + 1) * scale - 1, y + (row + 1) * scale - 1, c);
        }
      }
    }
  }
}

std::vector<std::uint8_t> Canvas::png() const { return encode_png(width_, height_, 3, pixels_); }

void Canvas::save_png(const std::filesystem::path& path) const {
  const auto bytes = png();
  write_file_bytes(path, std::as_bytes(std::span(bytes)));
}

void save_image_grid(const std::filesystem::path& path, const torch::Tensor& images, std::int64_t columns,
                     std::int64_t padding) {
  const auto n = images.size(0);
  if (n == 0) throw ValidationError("image grid of an empty batch");
  const auto h = images.size(2), w = images.size(3);
  const auto cols = std::min(columns, n);
  const auto rows = (n + cols - 1) / cols;
  const auto gw = cols * (w + padding) + padding, gh = rows * (h + padding) + padding;
  std::vector<std::uint8_t> px(static_cast<std::size_t>(gw * gh), 64);
  const auto u8 = denormalize_pixels(images).contiguous();
  const auto* src = u8.data_ptr<std::uint8_t>();
  for (std::int64_t i = 0; i < n; ++i) {
    const auto oy = padding + (i / cols) * (h + padding), ox = padding + (i % cols) * (w + padding);
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) px[(oy + y) * gw + ox + x] = src[(i * h + y) * w + x];
    }
  }
  const auto bytes = encode_png(static_cast<int>(gw), static_cast<int>(gh), 1, px);
  write_file_bytes(path, std::as_bytes(std::span(bytes)));
}

void save_heatmap(const std::filesystem::path& path, const std::vector<std::vector<double>>& values, int cell) {
  if (values.empty() || values.front().empty()) throw ValidationError("heatmap of an empty matrix");
  double scale = 0.0;
  for (const auto& row : values) {
    for (const double v : row) scale = std::max(scale, std::abs(v));
  }
  if (scale == 0.0) scale = 1.0;
  const int rows = static_cast<int>(values.size()), cols = static_cast<int>(values.front().size());
  Canvas canvas(cols * cell, rows * cell);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const double t = std::clamp(values[r][c] / scale, -1.0, 1.0);
      const auto fade = static_cast<std::uint8_t>(255.0 * (1.0 - std::abs(t)));
      const Rgb color = t >= 0 ? Rgb{255, fade, fade} : Rgb{fade, fade, 255};
      canvas.fill_rect(c * cell, r * cell, (c + 1) * cell - 1, (r + 1) * cell - 1, color);
    }
  }
  canvas.save_png(path);
}

}  // namespace einv
