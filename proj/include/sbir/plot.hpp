#pragma once

// Minimal line charts rendered into an RGB raster (saved as PPM). Text uses
// a built-in 5x7 bitmap font; lowercase is drawn as uppercase.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "sbir/corpus.hpp"
#include "sbir/evaluation.hpp"

namespace sbir {

struct Series {
  std::string name;
  std::vector<double> x, y;
};

struct PlotSpec {
  std::string title, xlabel, ylabel;
  std::vector<Series> series;
  int width = 720;
  int height = 440;
  bool markers = false;
};

class PlotError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

using Glyph = std::array<std::uint8_t, 7>;

inline const std::map<char, Glyph>& font() {
  static const std::map<char, Glyph> f = {
      {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}}, {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
      {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}}, {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
      {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}}, {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
      {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}}, {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
      {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}}, {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
      {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}}, {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
      {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}}, {'D', {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C}},
      {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}}, {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
      {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}}, {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
      {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}}, {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
      {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}}, {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
      {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}}, {'N', {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11}},
      {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}}, {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
      {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}}, {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
      {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}}, {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
      {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}}, {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
      {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}}, {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
      {'Y', {0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04}}, {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
      {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}}, {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
      {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F}}, {':', {0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00}},
      {'@', {0x0E, 0x11, 0x17, 0x15, 0x17, 0x10, 0x0E}}, {'%', {0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03}},
      {'/', {0x00, 0x01, 0x02, 0x04, 0x08, 0x10, 0x00}}, {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}},
      {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}}, {'=', {0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00}},
      {',', {0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08}}, {'+', {0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00}},
  };
  return f;
}

using Rgb = std::array<float, 3>;

inline const std::vector<Rgb>& palette() {
  static const std::vector<Rgb> p = {{0.12f, 0.47f, 0.71f}, {0.84f, 0.15f, 0.16f}, {0.17f, 0.63f, 0.17f},
                                     {1.00f, 0.50f, 0.05f}, {0.58f, 0.40f, 0.74f}, {0.55f, 0.34f, 0.29f},
                                     {0.89f, 0.47f, 0.76f}, {0.50f, 0.50f, 0.50f}};
  return p;
}

inline void put(RasterImage& img, int x, int y, const Rgb& c) {
  if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
  for (int k = 0; k < 3; ++k) img.at(k, y, x) = c[k];
}

inline void line(RasterImage& img, int x0, int y0, int x1, int y1, const Rgb& c, int thick = 1) {
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  for (;;) {
    for (int a = 0; a < thick; ++a)
      for (int b = 0; b < thick; ++b) put(img, x0 + a - thick / 2, y0 + b - thick / 2, c);
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

inline int text_width(const std::string& s, int scale = 1) { return static_cast<int>(s.size()) * 6 * scale; }

inline void text(RasterImage& img, int x, int y, const std::string& s, const Rgb& c, int scale = 1) {
  const auto& f = font();
  for (char ch : s) {
    const char u = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    auto it = f.find(u);
    if (it != f.end())
      for (int r = 0; r < 7; ++r)
        for (int col = 0; col < 5; ++col)
          if (it->second[r] & (0x10 >> col))
            for (int a = 0; a < scale; ++a)
              for (int b = 0; b < scale; ++b) put(img, x + col * scale + a, y + r * scale + b, c);
    x += 6 * scale;
  }
}

// Text rotated a quarter turn counter-clockwise, reading bottom to top.
inline void text_vertical(RasterImage& img, int x, int y, const std::string& s, const Rgb& c) {
  const auto& f = font();
  for (char ch : s) {
    const char u = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    auto it = f.find(u);
    if (it != f.end())
      for (int r = 0; r < 7; ++r)
        for (int col = 0; col < 5; ++col)
          if (it->second[r] & (0x10 >> col)) put(img, x + r, y - col, c);
    y -= 6;
  }
}

inline std::string tick_label(double v, double span) {
  const int digits = span >= 100 ? 0 : span >= 10 ? 1 : span >= 1 ? 2 : 3;
  return fmt(v, digits);
}

}  // namespace detail

// Throws PlotError("no data") when no series has a finite point.
inline RasterImage render_plot(const PlotSpec& spec) {
  using namespace detail;
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : spec.series) {
    if (s.x.size() != s.y.size()) throw std::invalid_argument("plot: series '" + s.name + "' has mismatched x/y");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (!(x0 <= x1)) throw PlotError("no data to plot" + (spec.title.empty() ? "" : " for '" + spec.title + "'"));
  if (x1 == x0) x1 = x0 + 1.0;
  if (y1 == y0) {
    y0 -= 0.5;
    y1 += 0.5;
  }
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;

  RasterImage img(spec.height, spec.width, 1.0f);
  const int left = 70, right = 170, top = 36, bottom = 50;
  const int pw = spec.width - left - right, ph = spec.height - top - bottom;
  auto px = [&](double x) { return left + static_cast<int>(std::lround((x - x0) / (x1 - x0) * pw)); };
  auto py = [&](double y) { return top + ph - static_cast<int>(std::lround((y - y0) / (y1 - y0) * ph)); };
  const Rgb black{0, 0, 0}, grid{0.88f, 0.88f, 0.88f};

  for (int k = 0; k <= 5; ++k) {
    const double xv = x0 + (x1 - x0) * k / 5.0, yv = y0 + (y1 - y0) * k / 5.0;
    line(img, px(xv), top, px(xv), top + ph, grid);
    line(img, left, py(yv), left + pw, py(yv), grid);
    const auto xl = tick_label(xv, x1 - x0), yl = tick_label(yv, y1 - y0);
    text(img, px(xv) - text_width(xl) / 2, top + ph + 6, xl, black);
    text(img, left - 6 - text_width(yl), py(yv) - 3, yl, black);
  }
  line(img, left, top, left, top + ph, black);
  line(img, left, top + ph, left + pw, top + ph, black);
  text(img, left + (pw - text_width(spec.title, 2)) / 2, 8, spec.title, black, 2);
  text(img, left + (pw - text_width(spec.xlabel)) / 2, spec.height - 20, spec.xlabel, black);
  text_vertical(img, 10, top + (ph + text_width(spec.ylabel)) / 2, spec.ylabel, black);

  for (std::size_t k = 0; k < spec.series.size(); ++k) {
    const auto& s = spec.series[k];
    const Rgb c = palette()[k % palette().size()];
    int lx = 0, ly = 0;
    bool have = false;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) {
        have = false;
        continue;
      }
      const int cx = px(s.x[i]), cy = py(s.y[i]);
      if (have) line(img, lx, ly, cx, cy, c, 2);
      if (spec.markers)
        for (int a = -3; a <= 3; ++a) line(img, cx - 3, cy + a, cx + 3, cy + a, c);
      lx = cx;
      ly = cy;
      have = true;
    }
    const int ly0 = top + 10 + static_cast<int>(k) * 16;
    for (int a = 0; a < 4; ++a) line(img, left + pw + 12, ly0 + a, left + pw + 28, ly0 + a, c);
    text(img, left + pw + 34, ly0 - 1, s.name, black);
  }
  return img;
}

inline void save_plot(const std::filesystem::path& path, const PlotSpec& spec) { write_ppm(path, render_plot(spec)); }

// Trailing moving average, for noisy per-step curves.
inline std::vector<double> smooth(const std::vector<double>& v, std::size_t window) {
  std::vector<double> out(v.size());
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    s += v[i];
    if (i >= window) s -= v[i - window];
    out[i] = s / static_cast<double>(std::min(i + 1, window));
  }
  return out;
}

}  // namespace sbir
