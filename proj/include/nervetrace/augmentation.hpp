#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <random>
#include <string_view>
#include <utility>

#include "domain.hpp"
#include "errors.hpp"
#include "image.hpp"
#include "resample.hpp"

namespace nervetrace::augment {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

struct AugmentConfig {
  double flip_probability = 0.5;
  Interval rotation_degrees{-10.0, 10.0};
  // Each gain class is pushed toward the other two.
  std::map<Gain, Interval> gamma_ranges{
      {Gain::high, {1.5, 2.0}}, {Gain::low, {0.5, 0.75}}, {Gain::medium, {0.75, 1.33}}};
  std::uint64_t seed = 0;

  void validate() const {
    if (!(flip_probability >= 0.0 && flip_probability <= 1.0)) throw ParamError("flip probability must be in [0, 1]");
    if (!(rotation_degrees.lo <= rotation_degrees.hi)) throw ParamError("rotation interval is not ordered");
    for (const auto& [gain, r] : gamma_ranges) {
      if (!(r.lo <= r.hi) || !(r.lo > 0)) throw ParamError("gamma interval must be ordered and positive");
    }
  }
};

// Parameters drawn for one sample; enough to reproduce it exactly.
struct Applied {
  bool flip = false;
  double angle_degrees = 0.0;
  double gamma = 1.0;
  bool operator==(const Applied&) const = default;
};

inline GrayImage gamma_transform(const GrayImage& image, double gamma) {
  if (!(gamma > 0)) throw ParamError("gamma must be > 0");
  GrayImage out = image;
  for (auto& v : out.pixels()) v = static_cast<float>(std::pow(std::clamp<double>(v, 0.0, 1.0), gamma));
  return out;
}

template <typename T>
Image<T> flip_horizontal(const Image<T>& img) {
  Image<T> out(img.size());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) out(x, y) = img(img.width() - 1 - x, y);
  return out;
}

inline BinaryMask flip_horizontal(const BinaryMask& m) {
  BinaryMask out(m.size());
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x) out.set(x, y, m(m.width() - 1 - x, y));
  return out;
}

namespace detail {

// Inverse map of a rotation by `degrees` about the image centre (counter-clockwise in image display).
struct InverseRotation {
  double c, s, cx, cy;
  InverseRotation(double degrees, Size size)
      : c(std::cos(degrees * std::numbers::pi / 180.0)),
        s(std::sin(degrees * std::numbers::pi / 180.0)),
        cx((size.width - 1) / 2.0),
        cy((size.height - 1) / 2.0) {}
  [[nodiscard]] std::pair<double, double> source(int x, int y) const {
    const double dx = x - cx, dy = y - cy;
    return {c * dx - s * dy + cx, s * dx + c * dy + cy};
  }
};

}  // namespace detail

// Bilinear resampling; samples outside the source are 0.
inline GrayImage rotate(const GrayImage& img, double degrees) {
  const detail::InverseRotation inv(degrees, img.size());
  GrayImage out(img.size());
  const int W = img.width(), H = img.height();
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      auto [sx, sy] = inv.source(x, y);
      const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
      const double fx = sx - x0, fy = sy - y0;
      auto px = [&](int xx, int yy) -> double { return img.contains(xx, yy) ? img(xx, yy) : 0.0; };
      double v = 0.0;
      if (fx == 0.0 && fy == 0.0) {
        v = px(x0, y0);
      } else {
        v = (px(x0, y0) * (1 - fx) + px(x0 + 1, y0) * fx) * (1 - fy) +
            (px(x0, y0 + 1) * (1 - fx) + px(x0 + 1, y0 + 1) * fx) * fy;
      }
      out(x, y) = static_cast<float>(v);
    }
  return out;
}

// Nearest-neighbour resampling; outside the source is background.
inline BinaryMask rotate(const BinaryMask& m, double degrees) {
  const detail::InverseRotation inv(degrees, m.size());
  BinaryMask out(m.size());
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x) {
      auto [sx, sy] = inv.source(x, y);
      const int xs = static_cast<int>(std::lround(sx)), ys = static_cast<int>(std::lround(sy));
      out.set(x, y, m.contains(xs, ys) && m(xs, ys));
    }
  return out;
}

template <typename Rng>
Applied sample(Gain gain, Rng& rng, const AugmentConfig& cfg = {}) {
  const auto it = cfg.gamma_ranges.find(gain);
  if (it == cfg.gamma_ranges.end()) throw ParamError("no gamma range for gain class");
  Applied a;
  a.flip = std::bernoulli_distribution(cfg.flip_probability)(rng);
  a.angle_degrees = std::uniform_real_distribution<double>(cfg.rotation_degrees.lo, cfg.rotation_degrees.hi)(rng);
  a.gamma = std::uniform_real_distribution<double>(it->second.lo, it->second.hi)(rng);
  return a;
}

struct Augmented {
  GrayImage frame;
  BinaryMask mask;
  Applied applied;
};

// Flip, then rotate (frame and mask alike), then gamma on the frame only.
inline Augmented apply(const GrayImage& frame, const BinaryMask& mask, const Applied& a) {
  require_same_size(frame.size(), mask.size(), "augment");
  GrayImage f = a.flip ? flip_horizontal(frame) : frame;
  BinaryMask m = a.flip ? flip_horizontal(mask) : mask;
  if (a.angle_degrees != 0.0) {
    f = rotate(f, a.angle_degrees);
    m = rotate(m, a.angle_degrees);
  }
  return {gamma_transform(f, a.gamma), std::move(m), a};
}

template <typename Rng>
Augmented augment(const GrayImage& frame, const BinaryMask& mask, Gain gain, Rng& rng, const AugmentConfig& cfg = {}) {
  cfg.validate();
  return apply(frame, mask, sample(gain, rng, cfg));
}

// Per-sample generator derived from (seed, video id, frame index) so that
// samples can be produced in any order or in parallel.
inline std::mt19937_64 sample_rng(std::uint64_t seed, std::string_view video_id, int frame_idx) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (unsigned char c : video_id) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32),
                    static_cast<std::uint32_t>(frame_idx)};
  return std::mt19937_64(seq);
}

}  // namespace nervetrace::augment
