#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"

namespace nervetrace {

struct Size {
  int width = 0;
  int height = 0;

  [[nodiscard]] std::size_t area() const {
    return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  }
  bool operator==(const Size&) const = default;
};

inline std::string to_string(Size s) {
  return std::to_string(s.width) + "x" + std::to_string(s.height);
}

// Dense row-major single-channel raster.
template <typename T>
class Image {
 public:
  using value_type = T;

  Image() = default;
  Image(int width, int height, T fill = T{})
      : width_(width), height_(height) {
    if (width < 0 || height < 0) throw GeometryError("negative image dimensions");
    data_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill);
  }
  explicit Image(Size s, T fill = T{}) : Image(s.width, s.height, fill) {}

  [[nodiscard]] int width() const { return width_; }
  [[nodiscard]] int height() const { return height_; }
  [[nodiscard]] Size size() const { return {width_, height_}; }
  [[nodiscard]] std::size_t pixel_count() const { return data_.size(); }
  [[nodiscard]] bool empty() const { return data_.empty(); }

  T& operator()(int x, int y) { return data_[index(x, y)]; }
  const T& operator()(int x, int y) const { return data_[index(x, y)]; }

  // Replicate-edge access.
  [[nodiscard]] const T& clamped(int x, int y) const {
    return (*this)(std::clamp(x, 0, width_ - 1), std::clamp(y, 0, height_ - 1));
  }

  [[nodiscard]] bool contains(int x, int y) const {
    return x >= 0 && y >= 0 && x < width_ && y < height_;
  }

  std::span<T> pixels() { return data_; }
  [[nodiscard]] std::span<const T> pixels() const { return data_; }
  T* data() { return data_.data(); }
  [[nodiscard]] const T* data() const { return data_.data(); }

  bool operator==(const Image&) const = default;

 private:
  [[nodiscard]] std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(x);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

// Grayscale frame with intensities in [0, 1].
using GrayImage = Image<float>;

// Strictly two-valued mask. Storage is one byte per pixel holding 0 or 1.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int width, int height, bool fill = false)
      : px_(width, height, fill ? 1 : 0) {}
  explicit BinaryMask(Size s, bool fill = false) : BinaryMask(s.width, s.height, fill) {}

  [[nodiscard]] int width() const { return px_.width(); }
  [[nodiscard]] int height() const { return px_.height(); }
  [[nodiscard]] Size size() const { return px_.size(); }
  [[nodiscard]] std::size_t pixel_count() const { return px_.pixel_count(); }

  bool operator()(int x, int y) const { return px_(x, y) != 0; }
  void set(int x, int y, bool v = true) { px_(x, y) = v ? 1 : 0; }

  [[nodiscard]] bool contains(int x, int y) const { return px_.contains(x, y); }

  [[nodiscard]] std::size_t area() const {
    return static_cast<std::size_t>(std::count(px_.pixels().begin(), px_.pixels().end(), 1));
  }
  [[nodiscard]] bool none() const {
    return std::none_of(px_.pixels().begin(), px_.pixels().end(),
                        [](std::uint8_t v) { return v != 0; });
  }

  [[nodiscard]] std::span<const std::uint8_t> bits() const { return px_.pixels(); }
  std::span<std::uint8_t> bits() { return px_.pixels(); }

  [[nodiscard]] BinaryMask complement() const {
    BinaryMask out = *this;
    for (auto& v : out.px_.pixels()) v = v ? 0 : 1;
    return out;
  }

  bool operator==(const BinaryMask&) const = default;

 private:
  Image<std::uint8_t> px_;
};

struct BoundingBox {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  static constexpr int kMinSide = 8;

  [[nodiscard]] double center_x() const { return x + w / 2.0; }
  [[nodiscard]] double center_y() const { return y + h / 2.0; }
  [[nodiscard]] long long area() const { return static_cast<long long>(w) * h; }

  [[nodiscard]] bool intersects(Size frame) const {
    return w > 0 && h > 0 && x < frame.width && y < frame.height && x + w > 0 && y + h > 0;
  }

  bool operator==(const BoundingBox&) const = default;
};

inline void validate_box(const BoundingBox& box, Size frame) {
  if (box.w < BoundingBox::kMinSide || box.h < BoundingBox::kMinSide) {
    throw GeometryError("bounding box sides must be >= 8 px, got " + std::to_string(box.w) +
                        "x" + std::to_string(box.h));
  }
  if (!box.intersects(frame)) throw GeometryError("bounding box lies outside the frame");
}

inline void require_same_size(Size a, Size b, const char* what) {
  if (a != b) {
    throw GeometryError(std::string(what) + ": dimension mismatch " + to_string(a) + " vs " +
                        to_string(b));
  }
}

}  // namespace nervetrace
