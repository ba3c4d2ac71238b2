#pragma once

// Stroke-5 sketch data model, offset normalization and rasterization.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sbir {

enum class Pen : std::uint8_t { down = 0, lift = 1, end = 2 };

struct StrokePoint {
  double dx = 0.0;
  double dy = 0.0;
  Pen pen = Pen::down;

  std::array<double, 5> stroke5() const {
    return {dx, dy, pen == Pen::down ? 1.0 : 0.0, pen == Pen::lift ? 1.0 : 0.0, pen == Pen::end ? 1.0 : 0.0};
  }
  bool operator==(const StrokePoint&) const = default;
};

class SketchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline Pen pen_from_one_hot(double p1, double p2, double p3) {
  const std::array<double, 3> p{p1, p2, p3};
  int ones = 0, zeros = 0, hot = -1;
  for (int i = 0; i < 3; ++i) {
    if (p[i] == 1.0) {
      ++ones;
      hot = i;
    } else if (p[i] == 0.0) {
      ++zeros;
    }
  }
  if (ones != 1 || zeros != 2) throw SketchError("pen state is not one-hot");
  return static_cast<Pen>(hot);
}

inline constexpr int kDefaultMaxLength = 100;

// Ordered stroke-5 points. The implicit start token P0 = (0, 0, down) is not
// stored. Nothing may follow a point whose pen is `end`.
class StrokeSequence {
 public:
  StrokeSequence() = default;
  explicit StrokeSequence(std::vector<StrokePoint> points, int max_length = kDefaultMaxLength)
      : points_(std::move(points)) {
    validate(max_length);
  }

  void validate(int max_length = kDefaultMaxLength) const {
    if (points_.empty()) throw SketchError("stroke sequence is empty");
    if (static_cast<int>(points_.size()) > max_length)
      throw SketchError("stroke sequence length " + std::to_string(points_.size()) + " exceeds maximum " +
                        std::to_string(max_length));
    for (std::size_t i = 0; i + 1 < points_.size(); ++i)
      if (points_[i].pen == Pen::end) throw SketchError("point follows end-of-sketch at index " + std::to_string(i));
    for (const auto& p : points_)
      if (!std::isfinite(p.dx) || !std::isfinite(p.dy)) throw SketchError("non-finite offset");
  }

  const std::vector<StrokePoint>& points() const { return points_; }
  std::vector<StrokePoint>& mutable_points() { return points_; }
  std::size_t size() const { return points_.size(); }
  const StrokePoint& operator[](std::size_t i) const { return points_[i]; }
  bool ends() const { return !points_.empty() && points_.back().pen == Pen::end; }

  bool operator==(const StrokeSequence&) const = default;

 private:
  std::vector<StrokePoint> points_;
};

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point2&) const = default;
};

// Cumulative sums of the offsets, starting from the origin (the start token
// is excluded from the output).
inline std::vector<Point2> to_absolute(const StrokeSequence& seq) {
  std::vector<Point2> out;
  out.reserve(seq.size());
  double x = 0.0, y = 0.0;
  for (const auto& p : seq.points()) {
    x += p.dx;
    y += p.dy;
    out.push_back({x, y});
  }
  return out;
}

// Inverse of to_absolute: consecutive differences, starting from the origin.
inline StrokeSequence from_absolute(const std::vector<Point2>& coords, const std::vector<Pen>& pens,
                                    int max_length = kDefaultMaxLength) {
  if (coords.size() != pens.size()) throw SketchError("coordinate and pen lists differ in length");
  std::vector<StrokePoint> pts;
  pts.reserve(coords.size());
  Point2 prev{};
  for (std::size_t i = 0; i < coords.size(); ++i) {
    pts.push_back({coords[i].x - prev.x, coords[i].y - prev.y, pens[i]});
    prev = coords[i];
  }
  return StrokeSequence(std::move(pts), max_length);
}

// Population standard deviation of every dx and dy value pooled together.
inline double offset_std(const std::vector<const StrokeSequence*>& seqs) {
  double sum = 0.0, sum_sq = 0.0;
  std::size_t n = 0;
  for (const auto* s : seqs)
    for (const auto& p : s->points()) {
      sum += p.dx + p.dy;
      n += 2;
    }
  if (n == 0) return 0.0;
  const double m = sum / static_cast<double>(n);
  for (const auto* s : seqs)
    for (const auto& p : s->points()) sum_sq += (p.dx - m) * (p.dx - m) + (p.dy - m) * (p.dy - m);
  return std::sqrt(sum_sq / static_cast<double>(n));
}

inline StrokeSequence scale_offsets(const StrokeSequence& seq, double factor, int max_length = kDefaultMaxLength) {
  auto pts = seq.points();
  for (auto& p : pts) {
    p.dx *= factor;
    p.dy *= factor;
  }
  return StrokeSequence(std::move(pts), max_length);
}

// ---------------------------------------------------------------------------
// Raster images

// H x W x 3 image with values in [0, 1], stored channel-major (CHW).
struct RasterImage {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  RasterImage() = default;
  RasterImage(int h, int w, float fill = 0.0f) : height(h), width(w), pixels(static_cast<std::size_t>(3) * h * w, fill) {}

  float& at(int c, int y, int x) { return pixels[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  float at(int c, int y, int x) const { return pixels[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  void set_gray(int y, int x, float v) {
    for (int c = 0; c < 3; ++c) at(c, y, x) = v;
  }
  bool operator==(const RasterImage&) const = default;
};

struct PenPoint {
  Point2 pos;
  Pen pen = Pen::down;
};

// Absolute polyline including the start token at the origin; the pen state of
// entry i governs the segment from entry i to entry i + 1.
inline std::vector<PenPoint> absolute_polyline(const StrokeSequence& seq) {
  std::vector<PenPoint> out;
  out.reserve(seq.size() + 1);
  out.push_back({{0.0, 0.0}, Pen::down});
  double x = 0.0, y = 0.0;
  for (const auto& p : seq.points()) {
    x += p.dx;
    y += p.dy;
    out.push_back({{x, y}, p.pen});
  }
  return out;
}

// Integer Bresenham line, all octants, endpoints inclusive.
template <class Plot>
void bresenham(int x0, int y0, int x1, int y1, Plot&& plot) {
  const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
  const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  for (;;) {
    plot(x0, y0);
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

namespace detail {

inline double frac(double v) { return v - std::floor(v); }

// Xiaolin Wu anti-aliased line; intensities combine with max.
inline void wu_line(RasterImage& img, double x0, double y0, double x1, double y1) {
  auto plot = [&](int x, int y, double c) {
    if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
    const float v = std::max(img.at(0, y, x), static_cast<float>(std::clamp(c, 0.0, 1.0)));
    img.set_gray(y, x, v);
  };
  const bool steep = std::abs(y1 - y0) > std::abs(x1 - x0);
  if (steep) {
    std::swap(x0, y0);
    std::swap(x1, y1);
  }
  if (x0 > x1) {
    std::swap(x0, x1);
    std::swap(y0, y1);
  }
  const double dx = x1 - x0, dy = y1 - y0;
  const double gradient = dx == 0.0 ? 1.0 : dy / dx;
  auto put = [&](int a, int b, double c) { steep ? plot(b, a, c) : plot(a, b, c); };
  const int xs = static_cast<int>(std::lround(x0)), xe = static_cast<int>(std::lround(x1));
  double inter = y0 + gradient * (xs - x0);
  for (int x = xs; x <= xe; ++x) {
    const int yi = static_cast<int>(std::floor(inter));
    put(x, yi, 1.0 - frac(inter));
    put(x, yi + 1, frac(inter));
    inter += gradient;
  }
}

}  // namespace detail

struct RasterOptions {
  int height = 64;
  int width = 64;
  int pad = 2;
  bool antialias = false;
};

// Draws an absolute polyline: the bounding box is uniformly scaled to fit the
// padded canvas and centred; segments leaving a pen-down point are drawn with
// value 1 on a 0 background. A degenerate polyline lights the centre pixel.
inline RasterImage rasterize_polyline(const std::vector<PenPoint>& poly, const RasterOptions& opt) {
  if (opt.height <= 2 * opt.pad || opt.width <= 2 * opt.pad)
    throw SketchError("canvas " + std::to_string(opt.height) + "x" + std::to_string(opt.width) +
                      " too small for padding " + std::to_string(opt.pad));
  RasterImage img(opt.height, opt.width, 0.0f);
  if (poly.empty()) return img;

  double xmin = poly[0].pos.x, xmax = xmin, ymin = poly[0].pos.y, ymax = ymin;
  for (const auto& p : poly) {
    xmin = std::min(xmin, p.pos.x);
    xmax = std::max(xmax, p.pos.x);
    ymin = std::min(ymin, p.pos.y);
    ymax = std::max(ymax, p.pos.y);
  }
  const double bw = xmax - xmin, bh = ymax - ymin;
  const double span_x = opt.width - 1 - 2 * opt.pad, span_y = opt.height - 1 - 2 * opt.pad;
  const double cx = 0.5 * (xmin + xmax), cy = 0.5 * (ymin + ymax);
  const double mid_x = 0.5 * (opt.width - 1), mid_y = 0.5 * (opt.height - 1);

  if (bw == 0.0 && bh == 0.0) {
    img.set_gray(opt.height / 2, opt.width / 2, 1.0f);
    return img;
  }
  double s = std::numeric_limits<double>::infinity();
  if (bw > 0.0) s = std::min(s, span_x / bw);
  if (bh > 0.0) s = std::min(s, span_y / bh);

  auto map = [&](const Point2& p) { return Point2{(p.x - cx) * s + mid_x, (p.y - cy) * s + mid_y}; };
  auto clamp_x = [&](long v) { return static_cast<int>(std::clamp<long>(v, 0, opt.width - 1)); };
  auto clamp_y = [&](long v) { return static_cast<int>(std::clamp<long>(v, 0, opt.height - 1)); };

  for (std::size_t i = 0; i + 1 < poly.size(); ++i) {
    if (poly[i].pen != Pen::down) continue;
    const Point2 a = map(poly[i].pos), b = map(poly[i + 1].pos);
    if (opt.antialias) {
      detail::wu_line(img, a.x, a.y, b.x, b.y);
    } else {
      bresenham(clamp_x(std::lround(a.x)), clamp_y(std::lround(a.y)), clamp_x(std::lround(b.x)),
                clamp_y(std::lround(b.y)), [&](int x, int y) { img.set_gray(y, x, 1.0f); });
    }
  }
  return img;
}

inline RasterImage rasterize(const StrokeSequence& seq, const RasterOptions& opt = {}) {
  return rasterize_polyline(absolute_polyline(seq), opt);
}

inline RasterImage rasterize(const StrokeSequence& seq, int height, int width, int pad) {
  return rasterize(seq, RasterOptions{height, width, pad, false});
}

}  // namespace sbir
