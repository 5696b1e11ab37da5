#pragma once

#include <cmath>

#include "image.hpp"

namespace nervetrace {

// Pixel-center aligned nearest neighbour. Identity when sizes match.
inline BinaryMask resize_nearest(const BinaryMask& src, Size target) {
  if (src.size() == target) return src;
  BinaryMask out(target);
  const double sx = static_cast<double>(src.width()) / target.width;
  const double sy = static_cast<double>(src.height()) / target.height;
  for (int y = 0; y < target.height; ++y) {
    int ys = std::min(src.height() - 1, static_cast<int>(std::floor((y + 0.5) * sy)));
    for (int x = 0; x < target.width; ++x) {
      int xs = std::min(src.width() - 1, static_cast<int>(std::floor((x + 0.5) * sx)));
      out.set(x, y, src(xs, ys));
    }
  }
  return out;
}

// Bilinear sample with replicate-edge borders.
template <typename T>
double sample_bilinear(const Image<T>& img, double x, double y) {
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const double fx = x - x0;
  const double fy = y - y0;
  const double a = img.clamped(x0, y0);
  const double b = img.clamped(x0 + 1, y0);
  const double c = img.clamped(x0, y0 + 1);
  const double d = img.clamped(x0 + 1, y0 + 1);
  return (a * (1 - fx) + b * fx) * (1 - fy) + (c * (1 - fx) + d * fx) * fy;
}

inline GrayImage resize_bilinear(const GrayImage& src, Size target) {
  if (src.size() == target) return src;
  GrayImage out(target);
  const double sx = static_cast<double>(src.width()) / target.width;
  const double sy = static_cast<double>(src.height()) / target.height;
  for (int y = 0; y < target.height; ++y) {
    for (int x = 0; x < target.width; ++x) {
      out(x, y) = static_cast<float>(sample_bilinear(src, (x + 0.5) * sx - 0.5, (y + 0.5) * sy - 0.5));
    }
  }
  return out;
}

}  // namespace nervetrace
