#pragma once
// Fixtures shared by the unit suites and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include <nervetrace/dataset_store.hpp>
#include <nervetrace/image.hpp>
#include <nervetrace/io.hpp>

namespace testsupport {

namespace fs = std::filesystem;
using nervetrace::BinaryMask;
using nervetrace::BoundingBox;
using nervetrace::GrayImage;
using nervetrace::Size;

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("nervetrace-test-" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  [[nodiscard]] const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

inline BinaryMask rect_mask(Size size, int x, int y, int w, int h) {
  BinaryMask m(size);
  for (int yy = std::max(0, y); yy < std::min(size.height, y + h); ++yy)
    for (int xx = std::max(0, x); xx < std::min(size.width, x + w); ++xx) m.set(xx, yy);
  return m;
}

inline BinaryMask disk_mask(Size size, double cx, double cy, double r) {
  BinaryMask m(size);
  for (int y = 0; y < size.height; ++y)
    for (int x = 0; x < size.width; ++x)
      if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) m.set(x, y);
  return m;
}

// Union of random rectangles and discs plus sparse speckle, so masks contain
// components of very different sizes.
template <typename Rng>
BinaryMask random_blob_mask(Rng& rng, Size size) {
  BinaryMask m(size);
  std::uniform_int_distribution<int> count(0, 4), px(0, size.width - 1), py(0, size.height - 1), ext(1, 24);
  std::bernoulli_distribution coin(0.5), speck(0.01);
  const int n = count(rng);
  for (int i = 0; i < n; ++i) {
    const int x = px(rng), y = py(rng), a = ext(rng), b = ext(rng);
    const bool disc = coin(rng);
    for (int yy = 0; yy < size.height; ++yy)
      for (int xx = 0; xx < size.width; ++xx) {
        const bool in = disc ? (xx - x) * (xx - x) + (yy - y) * (yy - y) <= a * a
                             : xx >= x && xx < x + a && yy >= y && yy < y + b;
        if (in) m.set(xx, yy);
      }
  }
  for (int yy = 0; yy < size.height; ++yy)
    for (int xx = 0; xx < size.width; ++xx)
      if (speck(rng)) m.set(xx, yy);
  return m;
}

template <typename Rng>
GrayImage noise_image(Rng& rng, Size size, double mean, double sd) {
  GrayImage img(size);
  std::normal_distribution<double> n(mean, sd);
  for (auto& v : img.pixels()) v = static_cast<float>(std::clamp(n(rng), 0.0, 1.0));
  return img;
}

// Blocky random texture of side `n` with 4-px cells, values in [0.35, 1].
template <typename Rng>
GrayImage texture(Rng& rng, int n) {
  GrayImage t(n, n);
  std::uniform_real_distribution<double> u(0.35, 1.0);
  const int cells = (n + 3) / 4;
  std::vector<double> c(static_cast<std::size_t>(cells * cells));
  for (auto& v : c) v = u(rng);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) t(x, y) = static_cast<float>(c[static_cast<std::size_t>((y / 4) * cells + x / 4)]);
  return t;
}

inline void paste(GrayImage& dst, const GrayImage& src, int x0, int y0) {
  for (int y = 0; y < src.height(); ++y)
    for (int x = 0; x < src.width(); ++x)
      if (dst.contains(x0 + x, y0 + y)) dst(x0 + x, y0 + y) = src(x, y);
}

// Frames of a textured square moving with constant velocity (bouncing at the
// borders) over a noisy background. `truth` receives the square's top-left.
template <typename Rng>
std::vector<GrayImage> moving_square_sequence(Rng& rng, Size size, int side, int frames, double vx, double vy,
                                              double noise_sd, std::vector<std::pair<int, int>>* truth) {
  const GrayImage tex = texture(rng, side);
  double x = (size.width - side) / 2.0, y = (size.height - side) / 2.0;
  std::normal_distribution<double> noise(0.0, noise_sd);
  std::vector<GrayImage> out;
  for (int f = 0; f < frames; ++f) {
    if (f > 0) {
      x += vx;
      y += vy;
      if (x < 0 || x > size.width - side) {
        vx = -vx;
        x += 2 * vx;
      }
      if (y < 0 || y > size.height - side) {
        vy = -vy;
        y += 2 * vy;
      }
    }
    const int ix = static_cast<int>(std::lround(x)), iy = static_cast<int>(std::lround(y));
    GrayImage img(size, 0.2f);
    paste(img, tex, ix, iy);
    for (auto& v : img.pixels()) v = static_cast<float>(std::clamp(v + noise(rng), 0.0, 1.0));
    if (truth) truth->emplace_back(ix, iy);
    out.push_back(std::move(img));
  }
  return out;
}

inline nlohmann::json video_meta(const std::string& id, const std::string& plexus = "scbp",
                                 const std::string& side = "left", const std::string& gain = "medium",
                                 const std::string& sex = "male", double age = 40, const std::string& machine = "esaote") {
  return nlohmann::json{{"id", id},     {"machine", machine}, {"plexus", plexus},
                        {"side", side}, {"gain", gain},       {"depth_setting", "4cm"},
                        {"patient", {{"age", age}, {"sex", sex}, {"height", 170.0}, {"bmi", 23.5}}}};
}

// Writes frames as PNGs into a source directory and ingests them.
inline nervetrace::VideoRecord ingest_frames(nervetrace::DatasetStore& store, const fs::path& scratch,
                                             const std::vector<GrayImage>& frames, const nlohmann::json& meta) {
  const fs::path src = scratch / ("src-" + meta.at("id").get<std::string>());
  fs::create_directories(src);
  for (std::size_t i = 0; i < frames.size(); ++i) nervetrace::io::write_gray(src / nervetrace::io::frame_name(static_cast<int>(i)), frames[i]);
  return store.ingest_video(src, meta);
}

}  // namespace testsupport
