#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "domain.hpp"
#include "errors.hpp"
#include "image.hpp"
#include "resample.hpp"

namespace nervetrace::metrics {

inline constexpr int kEvalWidth = 256;

enum class DetectionOutcome { true_positive, false_positive, false_negative, true_negative };

enum class DiceVariant { all_videos, class_videos, positive_frames };

inline constexpr std::array<DiceVariant, 3> kDiceVariants = {
    DiceVariant::all_videos, DiceVariant::class_videos, DiceVariant::positive_frames};

inline const char* variant_name(DiceVariant v) {
  switch (v) {
    case DiceVariant::all_videos: return "all_videos";
    case DiceVariant::class_videos: return "class_videos";
    case DiceVariant::positive_frames: return "positive_frames";
  }
  return "?";
}

inline const char* outcome_name(DetectionOutcome o) {
  switch (o) {
    case DetectionOutcome::true_positive: return "TP";
    case DetectionOutcome::false_positive: return "FP";
    case DetectionOutcome::false_negative: return "FN";
    case DetectionOutcome::true_negative: return "TN";
  }
  return "?";
}

struct MetricsConfig {
  std::vector<double> iou_thresholds = {0.25, 0.50};
  // Minimum component area at the normalized resolution, per class.
  std::map<Plexus, std::size_t> min_area = {{Plexus::scbp, 3240}, {Plexus::isc, 914}};
  int eval_width = kEvalWidth;

  void validate() const {
    for (double t : iou_thresholds)
      if (!(t > 0 && t < 1)) throw ParamError("iou thresholds must lie in (0, 1)");
    for (auto [cls, area] : min_area)
      if (area == 0) throw ParamError("min_area must be > 0");
    if (eval_width != kEvalWidth) throw ParamError("evaluation width must be 256");
  }
};

// Masks resize nearest-neighbour (and stay binary); frames resize bilinearly.
inline BinaryMask normalize_resolution(const BinaryMask& mask, Size target) {
  return resize_nearest(mask, target);
}
inline GrayImage normalize_resolution(const GrayImage& frame, Size target) {
  return resize_bilinear(frame, target);
}

struct Overlap {
  std::size_t a = 0, b = 0, intersection = 0;
  [[nodiscard]] std::size_t union_size() const { return a + b - intersection; }
};

inline Overlap overlap(const BinaryMask& a, const BinaryMask& b) {
  require_same_size(a.size(), b.size(), "mask overlap");
  Overlap o;
  const auto pa = a.bits();
  const auto pb = b.bits();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    o.a += pa[i];
    o.b += pb[i];
    o.intersection += pa[i] & pb[i];
  }
  return o;
}

// 1.0 when both masks are empty.
inline double iou(const BinaryMask& a, const BinaryMask& b) {
  const Overlap o = overlap(a, b);
  if (o.union_size() == 0) return 1.0;
  return static_cast<double>(o.intersection) / static_cast<double>(o.union_size());
}

// 1.0 when both masks are empty (true-negative convention).
inline double dice(const BinaryMask& a, const BinaryMask& b) {
  const Overlap o = overlap(a, b);
  if (o.a + o.b == 0) return 1.0;
  return 2.0 * static_cast<double>(o.intersection) / static_cast<double>(o.a + o.b);
}

// Drops 8-connected components smaller than min_area; components of exactly
// min_area survive.
inline BinaryMask filter_small_components(const BinaryMask& mask, std::size_t min_area) {
  const int W = mask.width(), H = mask.height();
  BinaryMask out(W, H);
  std::vector<std::uint8_t> seen(mask.pixel_count(), 0);
  std::vector<int> component, stack;
  for (int sy = 0; sy < H; ++sy)
    for (int sx = 0; sx < W; ++sx) {
      const std::size_t s = static_cast<std::size_t>(sy) * W + sx;
      if (!mask(sx, sy) || seen[s]) continue;
      component.clear();
      stack.assign(1, static_cast<int>(s));
      seen[s] = 1;
      while (!stack.empty()) {
        const int p = stack.back();
        stack.pop_back();
        component.push_back(p);
        const int px = p % W, py = p / W;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = px + dx, ny = py + dy;
            if (!mask.contains(nx, ny) || !mask(nx, ny)) continue;
            const int q = ny * W + nx;
            if (!seen[q]) {
              seen[q] = 1;
              stack.push_back(q);
            }
          }
      }
      if (component.size() >= min_area) {
        for (int p : component) out.set(p % W, p / W);
      }
    }
  return out;
}

inline DetectionOutcome classify_filtered(const BinaryMask& pred_filtered, const BinaryMask& gt, double t) {
  const bool gt_empty = gt.none();
  const bool pred_empty = pred_filtered.none();
  if (gt_empty && pred_empty) return DetectionOutcome::true_negative;
  if (gt_empty) return DetectionOutcome::false_positive;
  if (pred_empty) return DetectionOutcome::false_negative;
  return iou(pred_filtered, gt) >= t ? DetectionOutcome::true_positive : DetectionOutcome::false_positive;
}

inline DetectionOutcome classify_frame(const BinaryMask& pred, const BinaryMask& gt, double t,
                                       std::size_t min_area) {
  require_same_size(pred.size(), gt.size(), "classify_frame");
  return classify_filtered(filter_small_components(pred, min_area), gt, t);
}

struct OutcomeCounts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

  void add(DetectionOutcome o) {
    switch (o) {
      case DetectionOutcome::true_positive: ++tp; break;
      case DetectionOutcome::false_positive: ++fp; break;
      case DetectionOutcome::false_negative: ++fn; break;
      case DetectionOutcome::true_negative: ++tn; break;
    }
  }
  OutcomeCounts& operator+=(const OutcomeCounts& o) {
    tp += o.tp; fp += o.fp; fn += o.fn; tn += o.tn;
    return *this;
  }
  bool operator==(const OutcomeCounts&) const = default;

  // A class that never appears and is never predicted scores 1.0 across the board;
  // any other undefined fraction is 0.0.
  [[nodiscard]] bool vacuous() const { return tp == 0 && fp == 0 && fn == 0; }
  [[nodiscard]] double precision() const {
    if (vacuous()) return 1.0;
    return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  }
  [[nodiscard]] double recall() const {
    if (vacuous()) return 1.0;
    return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  }
  [[nodiscard]] double f1() const {
    if (vacuous()) return 1.0;
    const double p = precision(), r = recall();
    return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
  }
};

// One frame of one class, already at evaluation resolution. A negative frame
// carries an empty ground truth.
struct EvalFrame {
  FrameStatus status = FrameStatus::negative;
  BinaryMask gt;
  BinaryMask pred;
};

struct ThresholdMetrics {
  double threshold = 0.0;
  OutcomeCounts counts;
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

struct VideoMetrics {
  std::string video_id;
  Plexus plexus = Plexus::none;  // the video's own class
  Plexus evaluated = Plexus::scbp;  // class under evaluation
  std::size_t frames = 0;
  std::vector<ThresholdMetrics> detection;
  // Absent where a variant does not consider this video.
  std::map<DiceVariant, std::optional<double>> dice;
};

// Per-video detection metrics and per-variant dice. Variant membership:
// all_videos always; class_videos when the video belongs to the evaluated
// class; positive_frames additionally needs at least one positive frame, and
// averages only over those.
inline VideoMetrics evaluate_video(const std::string& video_id, Plexus video_class, Plexus evaluated,
                                   const std::vector<EvalFrame>& frames, const MetricsConfig& cfg) {
  cfg.validate();
  const auto area_it = cfg.min_area.find(evaluated);
  if (area_it == cfg.min_area.end()) throw ParamError("no min_area configured for evaluated class");
  const std::size_t min_area = area_it->second;

  VideoMetrics vm;
  vm.video_id = video_id;
  vm.plexus = video_class;
  vm.evaluated = evaluated;
  std::vector<OutcomeCounts> counts(cfg.iou_thresholds.size());
  double dice_all = 0.0, dice_pos = 0.0;
  std::size_t n_all = 0, n_pos = 0;

  for (const auto& f : frames) {
    if (f.status == FrameStatus::discarded) continue;
    require_same_size(f.pred.size(), f.gt.size(), "evaluate_video");
    if (f.status == FrameStatus::positive && f.gt.none()) {
      throw MaskError(video_id + ": positive frame with empty ground truth");
    }
    const BinaryMask pred = filter_small_components(f.pred, min_area);
    for (std::size_t t = 0; t < cfg.iou_thresholds.size(); ++t) {
      counts[t].add(classify_filtered(pred, f.gt, cfg.iou_thresholds[t]));
    }
    const double d = dice(pred, f.gt);
    dice_all += d;
    ++n_all;
    if (!f.gt.none()) {
      dice_pos += d;
      ++n_pos;
    }
  }
  if (n_all == 0) throw EmptyVideoError(video_id + ": no evaluable frames");
  vm.frames = n_all;

  for (std::size_t t = 0; t < cfg.iou_thresholds.size(); ++t) {
    vm.detection.push_back({cfg.iou_thresholds[t], counts[t], counts[t].precision(), counts[t].recall(),
                            counts[t].f1()});
  }
  const double mean_all = dice_all / static_cast<double>(n_all);
  vm.dice[DiceVariant::all_videos] = mean_all;
  const bool in_class = video_class == evaluated;
  vm.dice[DiceVariant::class_videos] = in_class ? std::optional<double>(mean_all) : std::nullopt;
  vm.dice[DiceVariant::positive_frames] =
      in_class && n_pos > 0 ? std::optional<double>(dice_pos / static_cast<double>(n_pos)) : std::nullopt;
  return vm;
}

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;  // population standard deviation
  std::size_t n = 0;
};

inline MeanSd mean_sd(const std::vector<double>& values) {
  MeanSd out;
  out.n = values.size();
  if (values.empty()) return out;
  double sum = 0.0;
  for (double v : values) sum += v;
  out.mean = sum / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - out.mean) * (v - out.mean);
  out.sd = std::sqrt(ss / static_cast<double>(values.size()));
  return out;
}

struct AggregateDetection {
  double threshold = 0.0;
  MeanSd precision, recall, f1;
};

struct MetricsReport {
  Plexus evaluated = Plexus::scbp;
  std::vector<VideoMetrics> per_video;
  std::vector<AggregateDetection> detection;  // over videos of the evaluated class
  std::map<DiceVariant, MeanSd> dice;
};

// Equal-weight mean and population SD across videos. Detection metrics are
// averaged over the evaluated class's videos; each dice variant over the
// videos it considers. Sorting by id makes the fold order-independent.
inline MetricsReport aggregate(std::vector<VideoMetrics> per_video, const MetricsConfig& cfg) {
  if (per_video.empty()) throw EmptyReportError("aggregate: no videos");
  std::sort(per_video.begin(), per_video.end(),
            [](const VideoMetrics& a, const VideoMetrics& b) { return a.video_id < b.video_id; });
  MetricsReport r;
  r.evaluated = per_video.front().evaluated;

  for (std::size_t t = 0; t < cfg.iou_thresholds.size(); ++t) {
    std::vector<double> p, rc, f;
    for (const auto& v : per_video) {
      if (v.plexus != v.evaluated || t >= v.detection.size()) continue;
      p.push_back(v.detection[t].precision);
      rc.push_back(v.detection[t].recall);
      f.push_back(v.detection[t].f1);
    }
    r.detection.push_back({cfg.iou_thresholds[t], mean_sd(p), mean_sd(rc), mean_sd(f)});
  }
  for (DiceVariant variant : kDiceVariants) {
    std::vector<double> values;
    for (const auto& v : per_video) {
      auto it = v.dice.find(variant);
      if (it != v.dice.end() && it->second) values.push_back(*it->second);
    }
    r.dice[variant] = mean_sd(values);
  }
  r.per_video = std::move(per_video);
  return r;
}

inline double median(std::vector<double> values) {
  if (values.empty()) throw EmptyReportError("median of empty set");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

// Minimum-area threshold from data: `fraction` of the median ground-truth area
// over positive frames, rounded to the nearest pixel.
inline std::size_t derive_min_area(const std::vector<std::size_t>& gt_areas, double fraction = 0.2) {
  std::vector<double> v;
  for (auto a : gt_areas)
    if (a > 0) v.push_back(static_cast<double>(a));
  return static_cast<std::size_t>(std::llround(fraction * median(std::move(v))));
}

struct PrPoint {
  double tau = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  OutcomeCounts counts;
};

struct ProbFrame {
  FrameStatus status = FrameStatus::negative;
  BinaryMask gt;
  Image<float> prob;
};

inline std::vector<double> pr_taus() {
  std::vector<double> taus;
  for (int i = 1; i <= 19; ++i) taus.push_back(i * 0.05);
  return taus;
}

inline BinaryMask binarize(const Image<float>& prob, double tau) {
  BinaryMask m(prob.width(), prob.height());
  for (int y = 0; y < prob.height(); ++y)
    for (int x = 0; x < prob.width(); ++x) m.set(x, y, prob(x, y) >= tau);
  return m;
}

// Dataset-level precision/recall for a sweep of binarization thresholds.
inline std::vector<PrPoint> pr_curve(const std::vector<ProbFrame>& frames, double iou_threshold,
                                     std::size_t min_area) {
  std::vector<PrPoint> points;
  for (double tau : pr_taus()) {
    PrPoint pt;
    pt.tau = tau;
    for (const auto& f : frames) {
      if (f.status == FrameStatus::discarded) continue;
      pt.counts.add(classify_frame(binarize(f.prob, tau), f.gt, iou_threshold, min_area));
    }
    pt.precision = pt.counts.precision();
    pt.recall = pt.counts.recall();
    points.push_back(pt);
  }
  return points;
}

}  // namespace nervetrace::metrics
