#pragma once

// Procedural photo/sketch pairs: a filled, anti-aliased shape on a lightly
// textured background, and a jittered stroke-5 tracing of its outline.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "sbir/rng.hpp"
#include "sbir/sketch.hpp"

namespace sbir {

enum class ShapeFamily { polygon, ellipse, composite, mixed };

inline ShapeFamily parse_shape_family(const std::string& s) {
  if (s == "polygon") return ShapeFamily::polygon;
  if (s == "ellipse") return ShapeFamily::ellipse;
  if (s == "composite") return ShapeFamily::composite;
  if (s == "mixed") return ShapeFamily::mixed;
  throw std::invalid_argument("unknown shape family '" + s + "' (expected polygon|ellipse|composite|mixed)");
}

inline std::string to_string(ShapeFamily f) {
  switch (f) {
    case ShapeFamily::polygon: return "polygon";
    case ShapeFamily::ellipse: return "ellipse";
    case ShapeFamily::composite: return "composite";
    case ShapeFamily::mixed: return "mixed";
  }
  return "?";
}

struct ShapeSpec {
  ShapeFamily family = ShapeFamily::mixed;
  int min_sides = 3;
  int max_sides = 8;
  int ellipse_vertices = 10;
  // Vertex radius as a fraction of the nominal radius (1 = regular polygon).
  double min_radius = 0.55;
  double max_radius = 1.0;
  // Random perturbation of vertex angles, as a fraction of the angular step.
  double angle_jitter = 0.3;
  // Axis ratio range of the enclosing ellipse.
  double min_aspect = 0.5;
  double max_aspect = 1.0;
  double min_rotation = 0.0;
  double max_rotation = 2.0 * std::numbers::pi;
  // Fraction of the padded canvas occupied by the shape's bounding box.
  double min_size = 0.7;
  double max_size = 0.95;
  double max_shift_px = 3.0;
  double stroke_jitter = 0.5;  // sigma_j, pixels
  double vertex_dropout = 0.1;
  int image_size = 64;
  int pad = 2;

  void validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("invalid shape spec: " + what); };
    if (min_sides < 3 || max_sides > 8 || min_sides > max_sides) fail("polygon sides must satisfy 3 <= min <= max <= 8");
    if (ellipse_vertices < 4) fail("ellipse_vertices < 4");
    if (!(min_radius > 0.0 && min_radius <= max_radius && max_radius <= 1.0)) fail("radius range");
    if (!(angle_jitter >= 0.0 && angle_jitter < 0.5)) fail("angle_jitter must be in [0, 0.5)");
    if (!(min_aspect > 0.0 && min_aspect <= max_aspect && max_aspect <= 1.0)) fail("aspect range");
    if (!(min_rotation <= max_rotation)) fail("rotation range");
    if (!(min_size > 0.0 && min_size <= max_size && max_size <= 1.0)) fail("size range");
    if (!(max_shift_px >= 0.0)) fail("max_shift_px < 0");
    if (!(stroke_jitter >= 0.0)) fail("stroke_jitter < 0");
    if (!(vertex_dropout >= 0.0 && vertex_dropout <= 0.2)) fail("vertex_dropout must be in [0, 0.2]");
    if (image_size <= 2 * pad + 4) fail("image_size too small for padding");
  }
};

struct SyntheticPair {
  RasterImage photo;
  StrokeSequence sketch;
  // Closed outlines in photo pixel coordinates (x = column, y = row), as
  // traced by the noise-free sketch.
  std::vector<std::vector<Point2>> outline;
};

namespace detail {

inline std::vector<Point2> polygon_outline(int sides, const ShapeSpec& spec, Rng& rng) {
  const double rot = uniform(rng, spec.min_rotation, spec.max_rotation);
  const double aspect = uniform(rng, spec.min_aspect, spec.max_aspect);
  const double step = 2.0 * std::numbers::pi / sides;
  std::vector<Point2> v;
  for (int i = 0; i < sides; ++i) {
    const double r = uniform(rng, spec.min_radius, spec.max_radius);
    const double a = i * step + uniform(rng, -spec.angle_jitter, spec.angle_jitter) * step;
    const double x = r * std::cos(a), y = aspect * r * std::sin(a);
    v.push_back({x * std::cos(rot) - y * std::sin(rot), x * std::sin(rot) + y * std::cos(rot)});
  }
  return v;
}

inline std::vector<Point2> ellipse_outline(int vertices, double rot, double aspect) {
  std::vector<Point2> v;
  for (int i = 0; i < vertices; ++i) {
    const double a = 2.0 * std::numbers::pi * i / vertices;
    const double x = std::cos(a), y = aspect * std::sin(a);
    v.push_back({x * std::cos(rot) - y * std::sin(rot), x * std::sin(rot) + y * std::cos(rot)});
  }
  return v;
}

// Rotates a closed vertex list to start at its topmost vertex (smallest y,
// then smallest x).
inline void start_at_top(std::vector<Point2>& v) {
  auto it = std::min_element(v.begin(), v.end(), [](const Point2& a, const Point2& b) {
    return a.y < b.y || (a.y == b.y && a.x < b.x);
  });
  std::rotate(v.begin(), it, v.end());
}

inline bool inside(const std::vector<Point2>& poly, double x, double y) {
  bool in = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const Point2 &a = poly[i], &b = poly[j];
    if ((a.y > y) != (b.y > y) && x < (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x) in = !in;
  }
  return in;
}

inline float quantize(double v) { return static_cast<float>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0); }

}  // namespace detail

// Produces one photo/sketch pair. The result is a pure function of (spec, rng
// state).
inline SyntheticPair generate_synthetic_pair(const ShapeSpec& spec, Rng& rng) {
  spec.validate();
  ShapeFamily family = spec.family;
  if (family == ShapeFamily::mixed) family = static_cast<ShapeFamily>(uniform_int(rng, 0, 2));

  // Outline primitives in unit coordinates, plus a densely sampled fill
  // boundary for each (ellipses render smooth, sketches stay coarse).
  std::vector<std::vector<Point2>> prims, fills;
  auto add_primitive = [&](bool ellipse, Point2 centre, double scale) {
    std::vector<Point2> v, fill;
    if (ellipse) {
      const double rot = uniform(rng, spec.min_rotation, spec.max_rotation);
      const double aspect = uniform(rng, spec.min_aspect, spec.max_aspect);
      v = detail::ellipse_outline(spec.ellipse_vertices, rot, aspect);
      fill = detail::ellipse_outline(64, rot, aspect);
    } else {
      v = detail::polygon_outline(uniform_int(rng, spec.min_sides, spec.max_sides), spec, rng);
      fill = v;
    }
    for (auto& p : v) p = {centre.x + scale * p.x, centre.y + scale * p.y};
    for (auto& p : fill) p = {centre.x + scale * p.x, centre.y + scale * p.y};
    detail::start_at_top(v);
    prims.push_back(std::move(v));
    fills.push_back(std::move(fill));
  };

  if (family == ShapeFamily::composite) {
    const double ang = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    const double sep = uniform(rng, 0.7, 1.1);
    const Point2 c1{-0.5 * sep * std::cos(ang), -0.5 * sep * std::sin(ang)};
    const Point2 c2{0.5 * sep * std::cos(ang), 0.5 * sep * std::sin(ang)};
    add_primitive(bernoulli(rng, 0.5), c1, uniform(rng, 0.45, 0.7));
    add_primitive(bernoulli(rng, 0.5), c2, uniform(rng, 0.45, 0.7));
    // Draw the upper primitive first.
    if (prims[1][0].y < prims[0][0].y) {
      std::swap(prims[0], prims[1]);
      std::swap(fills[0], fills[1]);
    }
  } else {
    add_primitive(family == ShapeFamily::ellipse, {0.0, 0.0}, 1.0);
  }

  // Place the shape: bounding box scaled into the padded canvas and centred,
  // then shrunk and shifted slightly.
  const int n = spec.image_size;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& f : fills)
    for (const auto& p : f) {
      xmin = std::min(xmin, p.x);
      xmax = std::max(xmax, p.x);
      ymin = std::min(ymin, p.y);
      ymax = std::max(ymax, p.y);
    }
  for (const auto& f : prims)
    for (const auto& p : f) {
      xmin = std::min(xmin, p.x);
      xmax = std::max(xmax, p.x);
      ymin = std::min(ymin, p.y);
      ymax = std::max(ymax, p.y);
    }
  const double span = n - 1 - 2 * spec.pad;
  const double fit = span / std::max(xmax - xmin, ymax - ymin);
  const double s = fit * uniform(rng, spec.min_size, spec.max_size);
  const double shift_x = uniform(rng, -spec.max_shift_px, spec.max_shift_px);
  const double shift_y = uniform(rng, -spec.max_shift_px, spec.max_shift_px);
  const double cx = 0.5 * (xmin + xmax), cy = 0.5 * (ymin + ymax);
  auto place = [&](Point2 p) { return Point2{(p.x - cx) * s + 0.5 * (n - 1) + shift_x, (p.y - cy) * s + 0.5 * (n - 1) + shift_y}; };
  for (auto& f : prims)
    for (auto& p : f) p = place(p);
  for (auto& f : fills)
    for (auto& p : f) p = place(p);

  // Photo: textured light background, one fill colour per primitive.
  SyntheticPair out;
  out.photo = RasterImage(n, n);
  const double base = uniform(rng, 0.82, 0.97);
  const double fx = uniform(rng, 0.05, 0.25), fy = uniform(rng, 0.05, 0.25), ph = uniform(rng, 0.0, 6.3);
  std::vector<std::array<double, 3>> colours;
  for (std::size_t k = 0; k < fills.size(); ++k)
    colours.push_back({uniform(rng, 0.05, 0.7), uniform(rng, 0.05, 0.7), uniform(rng, 0.05, 0.7)});
  constexpr int kSuper = 4;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const double tex = base + 0.03 * std::sin(fx * x + fy * y + ph) + 0.015 * normal(rng);
      std::array<double, 3> acc{0.0, 0.0, 0.0};
      for (int sy = 0; sy < kSuper; ++sy)
        for (int sx = 0; sx < kSuper; ++sx) {
          const double px = x + (sx + 0.5) / kSuper - 0.5, py = y + (sy + 0.5) / kSuper - 0.5;
          int hit = -1;
          for (std::size_t k = 0; k < fills.size(); ++k)
            if (detail::inside(fills[k], px, py)) hit = static_cast<int>(k);
          for (int c = 0; c < 3; ++c) acc[c] += hit < 0 ? tex : colours[static_cast<std::size_t>(hit)][c];
        }
      for (int c = 0; c < 3; ++c) out.photo.at(c, y, x) = detail::quantize(acc[c] / (kSuper * kSuper));
    }

  // Sketch: dropped-out, jittered vertex tour of each primitive. The origin
  // of the stroke coordinates is the first kept vertex.
  std::vector<Point2> coords;
  std::vector<Pen> pens;
  for (std::size_t k = 0; k < prims.size(); ++k) {
    std::vector<Point2> kept;
    for (std::size_t i = 0; i < prims[k].size(); ++i)
      if (i == 0 || !bernoulli(rng, spec.vertex_dropout)) kept.push_back(prims[k][i]);
    while (kept.size() < 3) kept = prims[k];
    out.outline.push_back(kept);
    for (std::size_t i = (k == 0 ? 1 : 0); i < kept.size(); ++i) {
      coords.push_back(kept[i]);
      pens.push_back(Pen::down);
    }
    coords.push_back(kept[0]);
    pens.push_back(k + 1 == prims.size() ? Pen::end : Pen::lift);
  }
  const Point2 origin = out.outline[0][0];
  std::vector<StrokePoint> pts;
  Point2 prev = origin;
  for (std::size_t i = 0; i < coords.size(); ++i) {
    StrokePoint p{coords[i].x - prev.x, coords[i].y - prev.y, pens[i]};
    if (spec.stroke_jitter > 0.0) {
      p.dx += normal(rng, 0.0, spec.stroke_jitter);
      p.dy += normal(rng, 0.0, spec.stroke_jitter);
    }
    pts.push_back(p);
    prev = coords[i];
  }
  out.sketch = StrokeSequence(std::move(pts));
  return out;
}

}  // namespace sbir
