#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "image.hpp"
#include "parallel.hpp"

namespace nervetrace::gac {

struct GacParams {
  int iterations = 30;
  int smoothing = 1;        // curvature-operator applications per iteration
  double threshold = 0.35;  // balloon acts where g > threshold / |balloon|
  double balloon = -1.0;    // negative shrinks, positive inflates
  double edge_alpha = 100.0;
  double edge_sigma = 2.0;

  void validate() const {
    if (iterations < 0) throw ParamError("gac: iterations must be >= 0");
    if (smoothing < 0) throw ParamError("gac: smoothing must be >= 0");
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw ParamError("gac: threshold must be in [0, 1]");
    if (!(edge_alpha > 0)) throw ParamError("gac: edge_alpha must be > 0");
    if (!(edge_sigma > 0)) throw ParamError("gac: edge_sigma must be > 0");
  }

  bool operator==(const GacParams&) const = default;
};

// Inverse Gaussian-gradient edge map, values in (0, 1]: small on edges, 1 on flat regions.
class EdgeMap {
 public:
  EdgeMap() = default;
  explicit EdgeMap(Image<float> g) : g_(std::move(g)) {}

  [[nodiscard]] int width() const { return g_.width(); }
  [[nodiscard]] int height() const { return g_.height(); }
  [[nodiscard]] Size size() const { return g_.size(); }
  float operator()(int x, int y) const { return g_(x, y); }
  [[nodiscard]] const Image<float>& values() const { return g_; }

 private:
  Image<float> g_;
};

namespace detail {

// Half-sample symmetric reflection: (d c b a | a b c d | d c b a).
inline int reflect(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - i - 1;
  }
  return i;
}

inline Image<double> gaussian_blur(const GrayImage& img, double sigma) {
  const int radius = static_cast<int>(4.0 * sigma + 0.5);
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += kernel[i + radius];
  }
  for (auto& k : kernel) k /= sum;

  const int W = img.width(), H = img.height();
  Image<double> tmp(W, H), out(W, H);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += kernel[i + radius] * img(reflect(x + i, W), y);
      tmp(x, y) = acc;
    }
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += kernel[i + radius] * tmp(x, reflect(y + i, H));
      out(x, y) = acc;
    }
  return out;
}

// Central differences inside, one-sided at the borders.
template <typename Getter>
std::pair<double, double> gradient_at(Getter&& f, int x, int y, int W, int H) {
  double gx = 0.0, gy = 0.0;
  if (W > 1) {
    if (x == 0) gx = f(1, y) - f(0, y);
    else if (x == W - 1) gx = f(W - 1, y) - f(W - 2, y);
    else gx = 0.5 * (f(x + 1, y) - f(x - 1, y));
  }
  if (H > 1) {
    if (y == 0) gy = f(x, 1) - f(x, 0);
    else if (y == H - 1) gy = f(x, H - 1) - f(x, H - 2);
    else gy = 0.5 * (f(x, y + 1) - f(x, y - 1));
  }
  return {gx, gy};
}

}  // namespace detail

inline EdgeMap inverse_gaussian_gradient(const GrayImage& image, double alpha, double sigma) {
  if (!(alpha > 0)) throw ParamError("inverse_gaussian_gradient: alpha must be > 0");
  if (!(sigma > 0)) throw ParamError("inverse_gaussian_gradient: sigma must be > 0");
  const Image<double> smooth = detail::gaussian_blur(image, sigma);
  const int W = image.width(), H = image.height();
  Image<float> g(W, H);
  auto f = [&](int x, int y) { return smooth(x, y); };
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      auto [gx, gy] = detail::gradient_at(f, x, y, W, H);
      g(x, y) = static_cast<float>(1.0 / std::sqrt(1.0 + alpha * std::sqrt(gx * gx + gy * gy)));
    }
  return EdgeMap(std::move(g));
}

// Morphological operators. Balloon erosion/dilation uses a 3x3 square with
// background outside the image; the curvature operators use the four 3-pixel
// line segments with replicate-edge borders, which keeps SI and IS exact duals
// under complement.
namespace morph {

using Bits = Image<std::uint8_t>;

inline Bits erode3x3(const Bits& u) {
  const int W = u.width(), H = u.height();
  Bits out(W, H);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      std::uint8_t v = 1;
      for (int dy = -1; dy <= 1 && v; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int xx = x + dx, yy = y + dy;
          if (!u.contains(xx, yy) || !u(xx, yy)) {
            v = 0;
            break;
          }
        }
      out(x, y) = v;
    }
  return out;
}

inline Bits dilate3x3(const Bits& u) {
  const int W = u.width(), H = u.height();
  Bits out(W, H);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      std::uint8_t v = 0;
      for (int dy = -1; dy <= 1 && !v; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int xx = x + dx, yy = y + dy;
          if (u.contains(xx, yy) && u(xx, yy)) {
            v = 1;
            break;
          }
        }
      out(x, y) = v;
    }
  return out;
}

// Offsets of the four line segments through the centre: horizontal, vertical, diagonal, anti-diagonal.
inline constexpr int kLineDx[4] = {1, 0, 1, 1};
inline constexpr int kLineDy[4] = {0, 1, 1, -1};

// Supremum over line segments of the erosion.
inline Bits sup_inf(const Bits& u) {
  const int W = u.width(), H = u.height();
  Bits out(W, H);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      if (!u(x, y)) continue;
      for (int k = 0; k < 4; ++k) {
        if (u.clamped(x + kLineDx[k], y + kLineDy[k]) && u.clamped(x - kLineDx[k], y - kLineDy[k])) {
          out(x, y) = 1;
          break;
        }
      }
    }
  return out;
}

// Infimum over line segments of the dilation.
inline Bits inf_sup(const Bits& u) {
  const int W = u.width(), H = u.height();
  Bits out(W, H, 1);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      if (u(x, y)) continue;
      for (int k = 0; k < 4; ++k) {
        if (!u.clamped(x + kLineDx[k], y + kLineDy[k]) && !u.clamped(x - kLineDx[k], y - kLineDy[k])) {
          out(x, y) = 0;
          break;
        }
      }
    }
  return out;
}

}  // namespace morph

inline BinaryMask to_mask(const morph::Bits& b) {
  BinaryMask m(b.width(), b.height());
  std::copy(b.pixels().begin(), b.pixels().end(), m.bits().begin());
  return m;
}

inline morph::Bits to_bits(const BinaryMask& m) {
  morph::Bits b(m.width(), m.height());
  std::copy(m.bits().begin(), m.bits().end(), b.pixels().begin());
  return b;
}

// Curvature smoothing: SI∘IS on even applications, IS∘SI on odd ones.
inline BinaryMask smooth_curvature(const BinaryMask& u, bool is_first) {
  const auto b = to_bits(u);
  return to_mask(is_first ? morph::sup_inf(morph::inf_sup(b)) : morph::inf_sup(morph::sup_inf(b)));
}

// Test hooks; production callers use the defaults.
struct GacHooks {
  bool attachment = true;
  std::function<void(int iteration, const BinaryMask& u)> on_iteration;
};

inline BinaryMask morph_gac(const EdgeMap& edge, const BinaryMask& init, const GacParams& params,
                            const GacHooks& hooks = {}) {
  params.validate();
  require_same_size(edge.size(), init.size(), "morph_gac");
  const int W = edge.width(), H = edge.height();
  morph::Bits u = to_bits(init);
  if (params.iterations == 0) return init;

  // Edge-map gradient is fixed for the whole evolution.
  Image<double> dgx(W, H), dgy(W, H);
  {
    auto g = [&](int x, int y) { return static_cast<double>(edge(x, y)); };
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) std::tie(dgx(x, y), dgy(x, y)) = detail::gradient_at(g, x, y, W, H);
  }

  Image<std::uint8_t> balloon_active(W, H);
  if (params.balloon != 0.0) {
    const double cut = params.threshold / std::abs(params.balloon);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) balloon_active(x, y) = edge(x, y) > cut ? 1 : 0;
  }

  bool curv_phase = true;
  std::vector<std::pair<int, int>> set_on, set_off;
  for (int it = 0; it < params.iterations; ++it) {
    if (params.balloon != 0.0) {
      const morph::Bits aux = params.balloon > 0 ? morph::dilate3x3(u) : morph::erode3x3(u);
      for (std::size_t i = 0; i < u.pixel_count(); ++i) {
        if (balloon_active.pixels()[i]) u.pixels()[i] = aux.pixels()[i];
      }
    }

    if (hooks.attachment) {
      // Only the boundary band has a nonzero ∇u; all updates use the pre-step u.
      set_on.clear();
      set_off.clear();
      auto fu = [&](int x, int y) { return static_cast<double>(u(x, y)); };
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const bool band = (x > 0 && u(x - 1, y) != u(x, y)) || (x + 1 < W && u(x + 1, y) != u(x, y)) ||
                            (y > 0 && u(x, y - 1) != u(x, y)) || (y + 1 < H && u(x, y + 1) != u(x, y));
          if (!band) continue;
          auto [ux, uy] = detail::gradient_at(fu, x, y, W, H);
          const double dot = ux * dgx(x, y) + uy * dgy(x, y);
          if (dot > 0) set_on.emplace_back(x, y);
          else if (dot < 0) set_off.emplace_back(x, y);
        }
      for (auto [x, y] : set_on) u(x, y) = 1;
      for (auto [x, y] : set_off) u(x, y) = 0;
    }

    for (int s = 0; s < params.smoothing; ++s) {
      u = curv_phase ? morph::sup_inf(morph::inf_sup(u)) : morph::inf_sup(morph::sup_inf(u));
      curv_phase = !curv_phase;
    }

    if (hooks.on_iteration) hooks.on_iteration(it, to_mask(u));
  }
  return to_mask(u);
}

struct Proposal {
  GacParams params;
  BinaryMask mask;
};

// Starting grid for the contour picker: iterations x threshold x smoothing.
inline std::vector<GacParams> default_proposal_grid() {
  std::vector<GacParams> grid;
  for (int iterations : {15, 30, 60})
    for (double threshold : {0.2, 0.35, 0.5})
      for (int smoothing : {1, 2}) {
        GacParams p;
        p.iterations = iterations;
        p.threshold = threshold;
        p.smoothing = smoothing;
        p.balloon = -1.0;
        p.edge_alpha = 100.0;
        p.edge_sigma = 2.0;
        grid.push_back(p);
      }
  return grid;
}

// One proposal per grid entry, in grid order. Edge maps are shared between
// entries with equal (edge_alpha, edge_sigma).
inline std::vector<Proposal> propose_contours(const GrayImage& frame, const BinaryMask& init,
                                              const std::vector<GacParams>& grid, int jobs = 1,
                                              std::optional<std::chrono::steady_clock::time_point> deadline = {}) {
  if (grid.empty()) throw ParamError("propose_contours: grid must be nonempty");
  require_same_size(frame.size(), init.size(), "propose_contours");
  for (const auto& p : grid) p.validate();

  std::map<std::pair<double, double>, EdgeMap> edges;
  for (const auto& p : grid) {
    auto key = std::make_pair(p.edge_alpha, p.edge_sigma);
    if (!edges.contains(key)) edges.emplace(key, inverse_gaussian_gradient(frame, p.edge_alpha, p.edge_sigma));
  }

  std::vector<Proposal> out(grid.size());
  parallel_for(grid.size(), jobs, [&](std::size_t i) {
    if (deadline && std::chrono::steady_clock::now() > *deadline) throw TimeoutError("proposal budget exceeded");
    const auto& p = grid[i];
    out[i] = {p, morph_gac(edges.at({p.edge_alpha, p.edge_sigma}), init, p)};
  });
  return out;
}

}  // namespace nervetrace::gac
