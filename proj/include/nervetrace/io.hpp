#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "errors.hpp"
#include "image.hpp"

namespace nervetrace::io {

namespace fs = std::filesystem;

inline void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

inline std::vector<char> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw NotFoundError("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string read_text(const fs::path& p) {
  auto bytes = read_bytes(p);
  return {bytes.begin(), bytes.end()};
}

// Write-to-temp then rename so readers never observe a half-written file.
inline void write_text_atomic(const fs::path& p, const std::string& text) {
  ensure_parent(p);
  fs::path tmp = p;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << text;
  }
  fs::rename(tmp, p);
}

inline cv::Mat to_u8_mat(const GrayImage& img) {
  cv::Mat m(img.height(), img.width(), CV_8UC1);
  for (int y = 0; y < img.height(); ++y) {
    auto* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < img.width(); ++x) {
      float v = std::clamp(img(x, y), 0.0f, 1.0f);
      row[x] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
  }
  return m;
}

inline GrayImage from_u8_mat(const cv::Mat& m) {
  CV_Assert(m.type() == CV_8UC1);
  GrayImage img(m.cols, m.rows);
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < m.cols; ++x) img(x, y) = static_cast<float>(row[x]) / 255.0f;
  }
  return img;
}

inline void write_png(const fs::path& p, const cv::Mat& m) {
  ensure_parent(p);
  if (!cv::imwrite(p.string(), m)) throw Error("failed to write " + p.string());
}

inline cv::Mat read_u8(const fs::path& p) {
  cv::Mat m = cv::imread(p.string(), cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw NotFoundError("cannot read image " + p.string());
  return m;
}

inline GrayImage read_gray(const fs::path& p) { return from_u8_mat(read_u8(p)); }

inline void write_gray(const fs::path& p, const GrayImage& img) { write_png(p, to_u8_mat(img)); }

// Masks on disk are 0 = background, 255 = structure. Any nonzero byte reads as set.
inline void write_mask(const fs::path& p, const BinaryMask& mask) {
  cv::Mat m(mask.height(), mask.width(), CV_8UC1);
  for (int y = 0; y < mask.height(); ++y) {
    auto* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < mask.width(); ++x) row[x] = mask(x, y) ? 255 : 0;
  }
  write_png(p, m);
}

inline BinaryMask read_mask(const fs::path& p) {
  cv::Mat m = read_u8(p);
  BinaryMask mask(m.cols, m.rows);
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < m.cols; ++x) mask.set(x, y, row[x] != 0);
  }
  return mask;
}

// Probability maps are 16-bit PNGs scaled 0..65535.
inline Image<float> read_probability(const fs::path& p) {
  cv::Mat m = cv::imread(p.string(), cv::IMREAD_ANYDEPTH | cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw NotFoundError("cannot read probability map " + p.string());
  Image<float> out(m.cols, m.rows);
  for (int y = 0; y < m.rows; ++y) {
    for (int x = 0; x < m.cols; ++x) {
      out(x, y) = m.depth() == CV_16U ? m.at<std::uint16_t>(y, x) / 65535.0f
                                      : m.at<std::uint8_t>(y, x) / 255.0f;
    }
  }
  return out;
}

inline void write_probability(const fs::path& p, const Image<float>& prob) {
  cv::Mat m(prob.height(), prob.width(), CV_16UC1);
  for (int y = 0; y < prob.height(); ++y) {
    for (int x = 0; x < prob.width(); ++x) {
      m.at<std::uint16_t>(y, x) =
          static_cast<std::uint16_t>(std::lround(std::clamp(prob(x, y), 0.0f, 1.0f) * 65535.0f));
    }
  }
  write_png(p, m);
}

inline std::string frame_name(int idx) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06d.png", idx);
  return buf;
}

}  // namespace nervetrace::io
