#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <numbers>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "errors.hpp"
#include "image.hpp"

namespace nervetrace {

struct TrackResult {
  BoundingBox box;
  double peak = 0.0;  // maximum of the detection response; used as confidence
};

// Anything the annotation engine can propagate boxes with.
template <typename T>
concept Tracker = requires(T t, const GrayImage& frame, BoundingBox box) {
  { t.step(frame) } -> std::same_as<TrackResult>;
  { t.box() } -> std::convertible_to<BoundingBox>;
};

namespace kcf {

struct KcfParams {
  double padding = 1.5;
  double lambda = 1e-4;
  double kernel_sigma = 0.5;
  double learning_rate = 0.02;
  double output_sigma_factor = 0.1;
  int template_size = 96;  // longest side of the padded window after resampling

  void validate() const {
    if (!(lambda > 0)) throw ParamError("kcf: lambda must be > 0");
    if (!(learning_rate > 0 && learning_rate <= 1)) throw ParamError("kcf: learning rate must be in (0, 1]");
    if (!(padding >= 1)) throw ParamError("kcf: padding must be >= 1");
    if (!(kernel_sigma > 0)) throw ParamError("kcf: kernel sigma must be > 0");
    if (template_size < 8) throw ParamError("kcf: template size must be >= 8");
  }
};

// Annotations below this peak go to the review queue flagged as low confidence.
inline constexpr double kLowConfidencePeak = 0.2;

// Windowed feature patch, one CV_64FC1 matrix per channel. Raw intensity uses a
// single channel; the vector leaves room for gradient-style channels.
struct FeaturePatch {
  std::vector<cv::Mat> channels;

  [[nodiscard]] int width() const { return channels.empty() ? 0 : channels.front().cols; }
  [[nodiscard]] int height() const { return channels.empty() ? 0 : channels.front().rows; }
  [[nodiscard]] std::size_t element_count() const {
    return static_cast<std::size_t>(width()) * height() * channels.size();
  }
};

namespace detail {

inline cv::Mat fft2(const cv::Mat& real) {
  cv::Mat out;
  cv::dft(real, out, cv::DFT_COMPLEX_OUTPUT);
  return out;
}

inline cv::Mat ifft2_real(const cv::Mat& spectrum) {
  cv::Mat out;
  cv::dft(spectrum, out, cv::DFT_INVERSE | cv::DFT_SCALE | cv::DFT_REAL_OUTPUT);
  return out;
}

// Elementwise complex division a / (b + lambda).
inline cv::Mat divide_regularized(const cv::Mat& a, const cv::Mat& b, double lambda) {
  cv::Mat out(a.size(), CV_64FC2);
  for (int y = 0; y < a.rows; ++y) {
    const auto* pa = a.ptr<cv::Vec2d>(y);
    const auto* pb = b.ptr<cv::Vec2d>(y);
    auto* po = out.ptr<cv::Vec2d>(y);
    for (int x = 0; x < a.cols; ++x) {
      const double br = pb[x][0] + lambda;
      const double bi = pb[x][1];
      const double den = br * br + bi * bi;
      po[x][0] = (pa[x][0] * br + pa[x][1] * bi) / den;
      po[x][1] = (pa[x][1] * br - pa[x][0] * bi) / den;
    }
  }
  return out;
}

inline cv::Mat hann_window(int width, int height) {
  auto hann = [](int n) {
    std::vector<double> w(static_cast<std::size_t>(n), 1.0);
    if (n > 1) {
      for (int i = 0; i < n; ++i) w[i] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * i / (n - 1)));
    }
    return w;
  };
  const auto wx = hann(width);
  const auto wy = hann(height);
  cv::Mat out(height, width, CV_64FC1);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) out.at<double>(y, x) = wy[y] * wx[x];
  return out;
}

// Gaussian regression target with its peak at the zero-shift bin (cyclic layout).
inline cv::Mat gaussian_target(int width, int height, double sigma) {
  cv::Mat out(height, width, CV_64FC1);
  for (int y = 0; y < height; ++y) {
    const int dy = std::min(y, height - y);
    for (int x = 0; x < width; ++x) {
      const int dx = std::min(x, width - x);
      out.at<double>(y, x) = std::exp(-0.5 * (dx * dx + dy * dy) / (sigma * sigma));
    }
  }
  return out;
}

}  // namespace detail

// Samples a (tw x th) patch covering the window of size (ww, wh) centred at
// (cx, cy). Out-of-frame samples replicate the nearest edge pixel.
inline cv::Mat extract_patch(const GrayImage& frame, double cx, double cy, double ww, double wh,
                             int tw, int th) {
  cv::Mat out(th, tw, CV_64FC1);
  const double sx = ww / tw;
  const double sy = wh / th;
  const double x0 = cx - ww / 2.0;
  const double y0 = cy - wh / 2.0;
  for (int i = 0; i < th; ++i) {
    const double fy = y0 + (i + 0.5) * sy - 0.5;
    const int iy = static_cast<int>(std::floor(fy));
    const double ay = fy - iy;
    auto* row = out.ptr<double>(i);
    for (int j = 0; j < tw; ++j) {
      const double fx = x0 + (j + 0.5) * sx - 0.5;
      const int ix = static_cast<int>(std::floor(fx));
      const double ax = fx - ix;
      const double a = frame.clamped(ix, iy);
      const double b = frame.clamped(ix + 1, iy);
      const double c = frame.clamped(ix, iy + 1);
      const double d = frame.clamped(ix + 1, iy + 1);
      row[j] = (a * (1 - ax) + b * ax) * (1 - ay) + (c * (1 - ax) + d * ax) * ay;
    }
  }
  return out;
}

// Cyclic cross-correlation c(s) = sum_p a(p) b(p + s), computed in the
// frequency domain and summed over channels.
inline cv::Mat cross_correlation(const FeaturePatch& a, const FeaturePatch& b) {
  if (a.width() != b.width() || a.height() != b.height() || a.channels.size() != b.channels.size()) {
    throw GeometryError("cross_correlation: patch dimensions differ");
  }
  cv::Mat acc = cv::Mat::zeros(a.height(), a.width(), CV_64FC2);
  for (std::size_t c = 0; c < a.channels.size(); ++c) {
    cv::Mat prod;
    cv::mulSpectrums(detail::fft2(b.channels[c]), detail::fft2(a.channels[c]), prod, 0, true);
    acc += prod;
  }
  return detail::ifft2_real(acc);
}

// Gaussian kernel correlation over all cyclic shifts:
// exp(-max(0, |a|^2 + |b|^2 - 2 c(s)) / (sigma^2 N)).
inline cv::Mat gaussian_correlation(const FeaturePatch& a, const FeaturePatch& b, double sigma) {
  cv::Mat xc = cross_correlation(a, b);
  double aa = 0.0, bb = 0.0;
  for (const auto& ch : a.channels) aa += ch.dot(ch);
  for (const auto& ch : b.channels) bb += ch.dot(ch);
  const double denom = sigma * sigma * static_cast<double>(a.element_count());
  cv::Mat k(xc.size(), CV_64FC1);
  for (int y = 0; y < xc.rows; ++y) {
    const auto* pc = xc.ptr<double>(y);
    auto* pk = k.ptr<double>(y);
    for (int x = 0; x < xc.cols; ++x) pk[x] = std::exp(-std::max(0.0, aa + bb - 2.0 * pc[x]) / denom);
  }
  return k;
}

// Single-object KCF tracker over raw grayscale features at fixed scale.
class KcfTracker {
 public:
  static KcfTracker init(const GrayImage& frame, BoundingBox box, const KcfParams& params = {}) {
    params.validate();
    validate_box(box, frame.size());
    if (frame.width() < 1 || frame.height() < 1) throw GeometryError("kcf: empty frame");

    KcfTracker t;
    t.params_ = params;
    t.frame_size_ = frame.size();
    t.w_ = std::min(box.w, frame.width());
    t.h_ = std::min(box.h, frame.height());
    t.cx_ = box.center_x();
    t.cy_ = box.center_y();
    t.window_w_ = box.w * (1.0 + params.padding);
    t.window_h_ = box.h * (1.0 + params.padding);
    const double scale = params.template_size / std::max(t.window_w_, t.window_h_);
    t.tw_ = std::max(1, static_cast<int>(std::lround(t.window_w_ * scale)));
    t.th_ = std::max(1, static_cast<int>(std::lround(t.window_h_ * scale)));
    t.cos_window_ = detail::hann_window(t.tw_, t.th_);

    const double output_sigma = params.output_sigma_factor *
                                std::sqrt(static_cast<double>(box.w) * box.h) * scale;
    t.yf_ = detail::fft2(detail::gaussian_target(t.tw_, t.th_, output_sigma));

    t.x_ = t.features(frame, t.cx_, t.cy_);
    t.alphaf_ = t.train(t.x_);
    t.box_ = t.current_box();
    t.peak_ = 1.0;
    return t;
  }

  TrackResult step(const GrayImage& frame) {
    require_same_size(frame.size(), frame_size_, "kcf step");
    const cv::Mat response = detect(frame);

    double peak = 0.0;
    cv::Point loc;
    cv::minMaxLoc(response, nullptr, &peak, nullptr, &loc);
    int dx = loc.x;
    int dy = loc.y;
    if (dx > tw_ / 2) dx -= tw_;
    if (dy > th_ / 2) dy -= th_;

    cx_ += dx * (window_w_ / tw_);
    cy_ += dy * (window_h_ / th_);
    clamp_center();

    const FeaturePatch xn = features(frame, cx_, cy_);
    const cv::Mat alphan = train(xn);
    const double eta = params_.learning_rate;
    // Blends always allocate fresh matrices: copies of a tracker share cv::Mat
    // buffers, so nothing may be updated in place.
    for (std::size_t c = 0; c < x_.channels.size(); ++c) {
      cv::Mat blended;
      cv::addWeighted(x_.channels[c], 1.0 - eta, xn.channels[c], eta, 0.0, blended);
      x_.channels[c] = blended;
    }
    cv::Mat alpha_blended;
    cv::addWeighted(alphaf_, 1.0 - eta, alphan, eta, 0.0, alpha_blended);
    alphaf_ = alpha_blended;

    box_ = current_box();
    peak_ = peak;
    return {box_, peak};
  }

  // Response map for `frame` at the current location, without updating.
  [[nodiscard]] cv::Mat detect(const GrayImage& frame) const {
    const FeaturePatch z = features(frame, cx_, cy_);
    const cv::Mat kzf = detail::fft2(gaussian_correlation(x_, z, params_.kernel_sigma));
    cv::Mat prod;
    cv::mulSpectrums(alphaf_, kzf, prod, 0, false);
    return detail::ifft2_real(prod);
  }

  [[nodiscard]] BoundingBox box() const { return box_; }
  [[nodiscard]] double last_peak() const { return peak_; }
  [[nodiscard]] const KcfParams& params() const { return params_; }
  [[nodiscard]] Size template_size() const { return {tw_, th_}; }
  [[nodiscard]] const FeaturePatch& model_template() const { return x_; }
  [[nodiscard]] const cv::Mat& dual_coefficients() const { return alphaf_; }

 private:
  KcfTracker() = default;

  [[nodiscard]] FeaturePatch features(const GrayImage& frame, double cx, double cy) const {
    cv::Mat patch = extract_patch(frame, cx, cy, window_w_, window_h_, tw_, th_);
    patch -= cv::mean(patch)[0];
    patch = patch.mul(cos_window_);
    return FeaturePatch{{patch}};
  }

  [[nodiscard]] cv::Mat train(const FeaturePatch& x) const {
    const cv::Mat kf = detail::fft2(gaussian_correlation(x, x, params_.kernel_sigma));
    return detail::divide_regularized(yf_, kf, params_.lambda);
  }

  void clamp_center() {
    const double W = frame_size_.width;
    const double H = frame_size_.height;
    cx_ = std::clamp(cx_, w_ / 2.0, W - w_ / 2.0);
    cy_ = std::clamp(cy_, h_ / 2.0, H - h_ / 2.0);
  }

  [[nodiscard]] BoundingBox current_box() const {
    BoundingBox b;
    b.w = w_;
    b.h = h_;
    b.x = std::clamp(static_cast<int>(std::lround(cx_ - w_ / 2.0)), 0, frame_size_.width - w_);
    b.y = std::clamp(static_cast<int>(std::lround(cy_ - h_ / 2.0)), 0, frame_size_.height - h_);
    return b;
  }

  KcfParams params_;
  Size frame_size_;
  int w_ = 0, h_ = 0;
  double cx_ = 0, cy_ = 0;
  double window_w_ = 0, window_h_ = 0;
  int tw_ = 0, th_ = 0;
  cv::Mat cos_window_;
  cv::Mat yf_;
  FeaturePatch x_;
  cv::Mat alphaf_;
  BoundingBox box_;
  double peak_ = 0.0;
};

static_assert(Tracker<KcfTracker>);

}  // namespace kcf
}  // namespace nervetrace
