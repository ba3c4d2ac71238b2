#pragma once

#include <stdexcept>
#include <vector>

#include "sbir/autograd.hpp"
#include "sbir/sketch.hpp"

namespace sbir {

// Stacks images into a constant [N, 3, H, W] tensor.
inline Var image_batch(const std::vector<const RasterImage*>& images) {
  if (images.empty()) throw std::invalid_argument("image_batch: empty batch");
  const int h = images.front()->height, w = images.front()->width;
  const std::size_t plane = static_cast<std::size_t>(3) * h * w;
  std::vector<double> v(plane * images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i]->height != h || images[i]->width != w)
      throw std::invalid_argument("image_batch: mixed image sizes");
    std::copy(images[i]->pixels.begin(), images[i]->pixels.end(), v.begin() + i * plane);
  }
  return Var::constant({static_cast<int>(images.size()), 3, h, w}, std::move(v));
}

inline Var image_batch(const RasterImage& image) { return image_batch(std::vector<const RasterImage*>{&image}); }

// Channel-concatenates photo and sketch images into [N, 6, H, W].
inline Var pair_batch(const std::vector<const RasterImage*>& photos, const std::vector<const RasterImage*>& sketches) {
  if (photos.size() != sketches.size() || photos.empty())
    throw std::invalid_argument("pair_batch: photo/sketch count mismatch");
  const int h = photos.front()->height, w = photos.front()->width;
  const std::size_t plane = static_cast<std::size_t>(3) * h * w;
  std::vector<double> v(2 * plane * photos.size());
  for (std::size_t i = 0; i < photos.size(); ++i) {
    if (photos[i]->height != h || photos[i]->width != w || sketches[i]->height != h || sketches[i]->width != w)
      throw std::invalid_argument("pair_batch: photo and sketch sizes differ");
    std::copy(photos[i]->pixels.begin(), photos[i]->pixels.end(), v.begin() + 2 * i * plane);
    std::copy(sketches[i]->pixels.begin(), sketches[i]->pixels.end(), v.begin() + (2 * i + 1) * plane);
  }
  return Var::constant({static_cast<int>(photos.size()), 6, h, w}, std::move(v));
}

inline std::vector<double> row(const Var& m, int i) {
  const int d = m.dim(1);
  return {m.value().begin() + static_cast<std::ptrdiff_t>(i) * d, m.value().begin() + static_cast<std::ptrdiff_t>(i + 1) * d};
}

}  // namespace sbir
