#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "active_contour.hpp"
#include "annotation_engine.hpp"
#include "api_server.hpp"
#include "api_service.hpp"
#include "augmentation.hpp"
#include "dataset_store.hpp"
#include "errors.hpp"
#include "io.hpp"
#include "metrics.hpp"
#include "parallel.hpp"
#include "resample.hpp"
#include "splitter.hpp"
#include "tracker_kcf.hpp"

namespace nervetrace::cli {

namespace fs = std::filesystem;
using nlohmann::json;

enum ExitCode : int { kOk = 0, kDomainError = 1, kUsageError = 2 };

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline BoundingBox parse_box(const std::string& s) {
  BoundingBox b;
  char c1 = 0, c2 = 0, c3 = 0;
  std::istringstream in(s);
  if (!(in >> b.x >> c1 >> b.y >> c2 >> b.w >> c3 >> b.h) || c1 != ',' || c2 != ',' || c3 != ',' || !in.eof()) {
    throw UsageError("box must be x,y,w,h; got '" + s + "'");
  }
  return b;
}

inline std::vector<BoundingBox> parse_boxes(const std::vector<std::string>& v) {
  std::vector<BoundingBox> out;
  for (const auto& s : v) out.push_back(parse_box(s));
  return out;
}

inline fs::path dataset_root(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("NERVETRACE_DATA"); env && *env) return env;
  throw UsageError("no dataset given: pass --dataset or set NERVETRACE_DATA");
}

inline void write_json(const fs::path& path, const json& j) { io::write_text_atomic(path, j.dump(2) + "\n"); }

inline json threshold_json(const metrics::ThresholdMetrics& t) {
  return json{{"iou_threshold", t.threshold}, {"tp", t.counts.tp}, {"fp", t.counts.fp}, {"fn", t.counts.fn},
              {"tn", t.counts.tn}, {"precision", t.precision}, {"recall", t.recall}, {"f1", t.f1}};
}

inline json mean_sd_json(const metrics::MeanSd& m) { return json{{"mean", m.mean}, {"sd", m.sd}, {"n", m.n}}; }

inline json video_metrics_json(const metrics::VideoMetrics& v) {
  json det = json::array();
  for (const auto& t : v.detection) det.push_back(threshold_json(t));
  json dice = json::object();
  for (const auto& [variant, value] : v.dice) dice[metrics::variant_name(variant)] = value ? json(*value) : json(nullptr);
  return json{{"video_id", v.video_id}, {"plexus", to_string(v.plexus)}, {"class", to_string(v.evaluated)},
              {"frames", v.frames}, {"detection", det}, {"dice", dice}};
}

inline json report_aggregate_json(const metrics::MetricsReport& r) {
  json det = json::array();
  for (const auto& d : r.detection) {
    det.push_back(json{{"iou_threshold", d.threshold}, {"precision", mean_sd_json(d.precision)},
                       {"recall", mean_sd_json(d.recall)}, {"f1", mean_sd_json(d.f1)}});
  }
  json dice = json::object();
  for (const auto& [variant, m] : r.dice) dice[metrics::variant_name(variant)] = mean_sd_json(m);
  return json{{"detection", det}, {"dice", dice}};
}

inline std::string csv_number(double v) {
  std::ostringstream s;
  s.precision(6);
  s << std::fixed << v;
  return s.str();
}

}  // namespace detail

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

// ---------------------------------------------------------------------------
// Commands

struct IngestArgs {
  std::string dataset, source, meta;
  bool replace = false;
};

inline int cmd_ingest(const IngestArgs& a, Streams io_) {
  DatasetStore store(detail::dataset_root(a.dataset));
  json meta;
  try {
    meta = json::parse(io::read_text(a.meta));
  } catch (const json::exception& e) {
    throw MetadataError(a.meta + ": " + e.what());
  }
  const auto rec = store.ingest_video(a.source, meta, a.replace);
  io_.err << "ingested " << rec.id << ": " << rec.n_frames << " frames " << rec.width << "x" << rec.height << "\n";
  return kOk;
}

struct ReplayArgs {
  std::string dataset, video, log, out;
};

inline int cmd_replay(const ReplayArgs& a, int jobs, Streams io_) {
  DatasetStore store(detail::dataset_root(a.dataset));
  const fs::path log = a.log.empty() ? store.session_log_path(a.video) : fs::path(a.log);
  const auto events = annotation::read_event_log(log);
  const auto state = annotation::replay_session(store, a.video, events, {}, jobs);
  io_.err << "replayed " << events.size() << " events for " << a.video << "\n";
  if (!a.out.empty()) detail::write_json(a.out, state);
  return kOk;
}

struct TrackArgs {
  std::string dataset, video, out;
  int frame = 0;
  int count = 1;
  std::vector<std::string> boxes;
};

inline int cmd_track(const TrackArgs& a, int jobs, Streams io_) {
  const auto boxes = detail::parse_boxes(a.boxes);
  if (boxes.empty()) throw SeedError("track requires at least one --box");
  DatasetStore store(detail::dataset_root(a.dataset));
  const auto& rec = store.video(a.video);
  for (const auto& b : boxes) validate_box(b, rec.size());

  const GrayImage first = store.read_frame(a.video, a.frame);
  std::vector<kcf::KcfTracker> trackers;
  for (const auto& b : boxes) trackers.push_back(kcf::KcfTracker::init(first, b));
  json frames = json::array();
  for (int idx = a.frame + 1; idx <= a.frame + a.count && idx < rec.n_frames; ++idx) {
    const GrayImage frame = store.read_frame(a.video, idx);
    std::vector<TrackResult> results(trackers.size());
    parallel_for(trackers.size(), jobs, [&](std::size_t i) { results[i] = trackers[i].step(frame); });
    json fb = json::array();
    double peak = 1.0;
    for (const auto& r : results) {
      fb.push_back(r.box);
      peak = std::min(peak, r.peak);
    }
    frames.push_back({{"frame", idx}, {"boxes", fb}, {"confidence", peak}, {"flagged", peak < kcf::kLowConfidencePeak}});
  }
  const json out{{"video", a.video}, {"seed_frame", a.frame}, {"seed_boxes", boxes}, {"frames", frames}};
  if (a.out.empty()) io_.out << out.dump(2) << "\n";
  else detail::write_json(a.out, out);
  io_.err << "tracked " << frames.size() << " frames\n";
  return kOk;
}

struct RefineArgs {
  std::string dataset, video, out;
  int frame = 0;
  std::vector<std::string> boxes;
  gac::GacParams params;
  bool commit = false;
};

inline int cmd_refine(const RefineArgs& a, Streams io_) {
  const auto boxes = detail::parse_boxes(a.boxes);
  if (boxes.empty()) throw SeedError("refine requires at least one --box");
  DatasetStore store(detail::dataset_root(a.dataset));
  const auto& rec = store.video(a.video);
  for (const auto& b : boxes) validate_box(b, rec.size());
  a.params.validate();
  const GrayImage frame = store.read_frame(a.video, a.frame);
  const BinaryMask init = annotation::fuse_boxes(boxes, rec.size());
  const BinaryMask mask =
      gac::morph_gac(gac::inverse_gaussian_gradient(frame, a.params.edge_alpha, a.params.edge_sigma), init, a.params);
  if (!a.out.empty()) io::write_mask(a.out, mask);
  if (a.commit) {
    const auto lock = store.lock_video(a.video);
    store.write_ground_truth(lock, a.frame, mask, a.params, Provenance::manual);
  }
  io_.err << "refined frame " << a.frame << ": area " << mask.area() << (a.commit ? " (committed)" : "") << "\n";
  return kOk;
}

struct AugmentArgs {
  std::string dataset, out;
};

// Writes one augmented copy of every labelled frame in the standard layout,
// plus applied.json recording the drawn parameters per frame.
inline int cmd_augment(const AugmentArgs& a, std::uint64_t seed, int jobs, Streams io_) {
  DatasetStore src(detail::dataset_root(a.dataset));
  if (a.out.empty()) throw UsageError("augment requires --out");
  if (fs::weakly_canonical(src.root()) == fs::weakly_canonical(a.out)) {
    throw ParamError("augment output must differ from the source dataset");
  }
  std::error_code ec;
  for (const char* sub : {"frames", "masks", "labels", "manifest.json", "applied.json"}) fs::remove_all(fs::path(a.out) / sub, ec);
  DatasetStore dst(a.out);
  const augment::AugmentConfig cfg{.seed = seed};
  cfg.validate();

  json applied = json::object();
  std::size_t total = 0;
  for (const auto& rec : src.videos()) {
    const auto labels = src.labels(rec.id);
    std::vector<FrameLabel> items;
    for (const auto& [idx, l] : labels.frames)
      if (l.status != FrameStatus::discarded) items.push_back(l);

    std::vector<augment::Augmented> results(items.size());
    parallel_for(items.size(), jobs, [&](std::size_t i) {
      const int idx = items[i].frame_idx;
      const GrayImage frame = src.read_frame(rec.id, idx);
      const BinaryMask mask = items[i].status == FrameStatus::positive ? src.read_ground_truth(rec.id, idx)
                                                                       : BinaryMask(frame.size());
      auto rng = augment::sample_rng(seed, rec.id, idx);
      results[i] = augment::augment(frame, mask, rec.gain, rng, cfg);
    });

    // Unlabelled frames are copied through so frame indices keep their meaning.
    std::map<int, std::size_t> by_idx;
    for (std::size_t i = 0; i < items.size(); ++i) by_idx[items[i].frame_idx] = i;
    for (int idx = 0; idx < rec.n_frames; ++idx) {
      auto it = by_idx.find(idx);
      if (it != by_idx.end()) io::write_gray(dst.frame_path(rec.id, idx), results[it->second].frame);
      else fs::copy_file(src.frame_path(rec.id, idx), dst.frame_path(rec.id, idx), fs::copy_options::overwrite_existing);
    }
    dst.put_record(rec);
    const auto lock = dst.lock_video(rec.id);
    json per_frame = json::object();
    for (std::size_t i = 0; i < items.size(); ++i) {
      const auto& l = items[i];
      const auto& r = results[i];
      if (l.status == FrameStatus::positive && !r.mask.none()) {
        dst.write_ground_truth(lock, l.frame_idx, r.mask, l.gac_params.value_or(gac::GacParams{}), l.provenance);
      } else {
        // A rotation can push a small mask entirely out of frame.
        dst.set_frame_status(lock, l.frame_idx, FrameStatus::negative, l.provenance);
      }
      per_frame[io::frame_name(l.frame_idx)] = {{"flip", r.applied.flip},
                                                {"angle_degrees", r.applied.angle_degrees},
                                                {"gamma", r.applied.gamma}};
    }
    for (int s : labels.seed_frames) dst.add_seed_frame(lock, s);
    applied[rec.id] = per_frame;
    total += items.size();
  }
  detail::write_json(fs::path(a.out) / "applied.json", json{{"seed", seed}, {"videos", applied}});
  io_.err << "augmented " << total << " frames into " << a.out << "\n";
  return kOk;
}

struct SplitArgs {
  std::string dataset, out;
  int k = 5;
};

inline int cmd_split(const SplitArgs& a, std::uint64_t seed, Streams io_) {
  DatasetStore store(detail::dataset_root(a.dataset));
  split::SplitSpec spec;
  spec.k = a.k;
  spec.seed = seed;
  const auto result = split::stratified_kfold(split::split_items(store.videos()), spec);
  for (const auto& w : result.warnings) io_.err << "warning: " << w << "\n";
  const json j = split::to_json(result);
  if (a.out.empty()) io_.out << j.dump(2) << "\n";
  else detail::write_json(a.out, j);
  return kOk;
}

struct EvaluateArgs {
  std::string gt, pred, cls = "scbp", out;
  std::optional<std::size_t> min_area_scbp, min_area_isc;
  bool derive_min_area = false;
};

namespace detail {

struct ClassEvaluation {
  metrics::MetricsReport report;
  std::map<double, std::vector<metrics::PrPoint>> pr;
  std::size_t missing_predictions = 0;
};

// Predictions for a class live under {pred}/{class}/ when that directory
// exists, otherwise directly under {pred}/.
inline fs::path class_pred_root(const fs::path& pred, Plexus cls) {
  const fs::path sub = pred / std::string(to_string(cls));
  return fs::is_directory(sub) ? sub : pred;
}

inline ClassEvaluation evaluate_class(const DatasetStore& store, const fs::path& pred, Plexus cls,
                                      const metrics::MetricsConfig& cfg, int jobs, std::ostream& err) {
  const fs::path root = class_pred_root(pred, cls);
  struct Job {
    const VideoRecord* rec;
    std::vector<FrameLabel> frames;
  };
  std::vector<Job> work;
  for (const auto& rec : store.videos()) {
    auto ev = store.labels(rec.id).evaluable();
    if (ev.empty()) {
      err << "warning: " << rec.id << " has no evaluable frames; skipped\n";
      continue;
    }
    work.push_back({&rec, std::move(ev)});
  }
  if (work.empty()) throw EmptyReportError("no video has evaluable frames");

  std::vector<metrics::VideoMetrics> per_video(work.size());
  std::vector<std::vector<metrics::ProbFrame>> prob(work.size());
  std::vector<std::size_t> missing(work.size(), 0), prob_missing(work.size(), 0);
  parallel_for(work.size(), jobs, [&](std::size_t w) {
    const auto& rec = *work[w].rec;
    const Size eval = rec.eval_resolution;
    std::vector<metrics::EvalFrame> frames;
    for (const auto& l : work[w].frames) {
      const bool positive = l.status == FrameStatus::positive && rec.plexus == cls;
      metrics::EvalFrame f;
      f.status = positive ? FrameStatus::positive : FrameStatus::negative;
      f.gt = positive ? metrics::normalize_resolution(store.read_ground_truth(rec.id, l.frame_idx), eval)
                      : BinaryMask(eval);
      const fs::path mask_file = root / rec.id / io::frame_name(l.frame_idx);
      if (fs::exists(mask_file)) {
        f.pred = metrics::normalize_resolution(io::read_mask(mask_file), eval);
      } else {
        f.pred = BinaryMask(eval);
        ++missing[w];
      }
      const fs::path prob_file = root / rec.id / (io::frame_name(l.frame_idx).substr(0, 6) + ".prob.png");
      if (fs::exists(prob_file)) {
        prob[w].push_back({f.status, f.gt, resize_bilinear(io::read_probability(prob_file), eval)});
      } else {
        ++prob_missing[w];
      }
      frames.push_back(std::move(f));
    }
    per_video[w] = metrics::evaluate_video(rec.id, rec.plexus, cls, frames, cfg);
  });

  ClassEvaluation out;
  for (auto m : missing) out.missing_predictions += m;
  if (out.missing_predictions) {
    err << "warning: " << out.missing_predictions << " " << to_string(cls)
        << " prediction masks missing; treated as empty\n";
  }
  std::size_t n_prob = 0, n_prob_missing = 0;
  for (std::size_t w = 0; w < work.size(); ++w) {
    n_prob += prob[w].size();
    n_prob_missing += prob_missing[w];
  }
  if (n_prob > 0) {
    if (n_prob_missing) err << "warning: " << n_prob_missing << " probability maps missing; PR curve uses the rest\n";
    std::vector<metrics::ProbFrame> all;
    for (auto& v : prob)
      for (auto& f : v) all.push_back(std::move(f));
    for (double t : cfg.iou_thresholds) out.pr[t] = metrics::pr_curve(all, t, cfg.min_area.at(cls));
  }
  out.report = metrics::aggregate(std::move(per_video), cfg);
  return out;
}

inline std::size_t derived_area(const DatasetStore& store, Plexus cls) {
  std::vector<std::size_t> areas;
  for (const auto& rec : store.videos()) {
    if (rec.plexus != cls) continue;
    for (const auto& l : store.labels(rec.id).evaluable()) {
      if (l.status != FrameStatus::positive) continue;
      areas.push_back(metrics::normalize_resolution(store.read_ground_truth(rec.id, l.frame_idx), rec.eval_resolution).area());
    }
  }
  if (areas.empty()) throw EmptyReportError(std::string("no positive ") + std::string(to_string(cls)) + " frames to derive min area");
  return metrics::derive_min_area(areas);
}

}  // namespace detail

inline int cmd_evaluate(const EvaluateArgs& a, int jobs, Streams io_) {
  if (a.out.empty()) throw UsageError("evaluate requires --out");
  if (!fs::is_directory(a.pred)) throw NotFoundError("prediction directory not found: " + a.pred);
  if (!fs::exists(fs::path(a.gt) / "manifest.json")) throw NotFoundError("no dataset manifest under " + a.gt);
  const DatasetStore store(a.gt);

  std::vector<Plexus> classes;
  if (a.cls == "both") classes = {Plexus::scbp, Plexus::isc};
  else if (a.cls == "scbp") classes = {Plexus::scbp};
  else if (a.cls == "isc") classes = {Plexus::isc};
  else throw UsageError("--class must be scbp, isc or both");

  metrics::MetricsConfig cfg;
  if (a.derive_min_area) {
    for (auto c : classes) cfg.min_area[c] = detail::derived_area(store, c);
  }
  if (a.min_area_scbp) cfg.min_area[Plexus::scbp] = *a.min_area_scbp;
  if (a.min_area_isc) cfg.min_area[Plexus::isc] = *a.min_area_isc;
  cfg.validate();

  json per_video = json::array();
  json aggregate = json::object();
  const fs::path out(a.out);
  for (auto c : classes) {
    const auto ev = detail::evaluate_class(store, a.pred, c, cfg, jobs, io_.err);
    for (const auto& v : ev.report.per_video) per_video.push_back(detail::video_metrics_json(v));
    aggregate[std::string(to_string(c))] = detail::report_aggregate_json(ev.report);
    for (const auto& [t, points] : ev.pr) {
      std::ostringstream csv;
      csv << "tau,precision,recall\n";
      for (const auto& p : points)
        csv << detail::csv_number(p.tau) << "," << detail::csv_number(p.precision) << "," << detail::csv_number(p.recall) << "\n";
      const fs::path csv_path = out.parent_path() / (out.stem().string() + "_pr_" + std::string(to_string(c)) + "_iou" +
                                                     std::to_string(static_cast<int>(std::lround(t * 100))) + ".csv");
      io::write_text_atomic(csv_path, csv.str());
    }
  }
  json min_area = json::object();
  for (const auto& [p, v] : cfg.min_area) min_area[std::string(to_string(p))] = v;
  const json config{{"gt", a.gt},
                    {"pred", a.pred},
                    {"class", a.cls},
                    {"iou_thresholds", cfg.iou_thresholds},
                    {"min_area", min_area},
                    {"eval_width", cfg.eval_width}};
  detail::write_json(out, json{{"config", config}, {"per_video", per_video}, {"aggregate", aggregate}});
  io_.err << "wrote " << a.out << " (" << per_video.size() << " video evaluations)\n";
  return kOk;
}

struct StatsArgs {
  std::string dataset, out;
};

inline int cmd_stats(const StatsArgs& a, Streams io_) {
  const DatasetStore store(detail::dataset_root(a.dataset));
  const json j = stats_json(dataset_stats(store));
  if (a.out.empty()) io_.out << j.dump(2) << "\n";
  else detail::write_json(a.out, j);
  return kOk;
}

struct ServeArgs {
  std::string dataset;
  api::ServerOptions server;
};

inline int cmd_serve(const ServeArgs& a, int jobs, Streams) {
  DatasetStore store(detail::dataset_root(a.dataset));
  api::ApiService service(store, api::ApiOptions{.jobs = jobs});
  return api::serve(service, a.server) ? kOk : kDomainError;
}

// ---------------------------------------------------------------------------
// Entry point. `args` excludes the program name.

inline int run(const std::vector<std::string>& args, Streams io_ = {std::cout, std::cerr}) {
  CLI::App app{"Ultrasound nerve annotation, augmentation, splitting and evaluation toolkit", "nervetrace"};
  app.require_subcommand(1);
  app.fallthrough();
  int jobs = 1;
  std::uint64_t seed = 0;
  app.add_option("--jobs", jobs, "Maximum worker threads")->check(CLI::Range(1, 1024));
  app.add_option("--seed", seed, "Seed for stochastic commands");

  IngestArgs ingest;
  auto* c_ingest = app.add_subcommand("ingest", "Import a video or frame directory into the dataset");
  c_ingest->add_option("--dataset", ingest.dataset, "Dataset root (default $NERVETRACE_DATA)");
  c_ingest->add_option("--source", ingest.source, "Video file or frame directory")->required();
  c_ingest->add_option("--meta", ingest.meta, "Metadata JSON file")->required();
  c_ingest->add_flag("--replace", ingest.replace, "Replace an existing video with the same id");

  ReplayArgs replay;
  auto* c_replay = app.add_subcommand("annotate-replay", "Replay an annotation session log into the dataset");
  c_replay->add_option("--dataset", replay.dataset, "Dataset root");
  c_replay->add_option("--video", replay.video, "Video id")->required();
  c_replay->add_option("--log", replay.log, "Session log (default sessions/{video}.jsonl)");
  c_replay->add_option("--out", replay.out, "Write the final session state as JSON");

  TrackArgs track;
  auto* c_track = app.add_subcommand("track", "Propagate seed boxes with the correlation-filter tracker");
  c_track->add_option("--dataset", track.dataset, "Dataset root");
  c_track->add_option("--video", track.video, "Video id")->required();
  c_track->add_option("--frame", track.frame, "Seed frame index")->required();
  c_track->add_option("--box", track.boxes, "Seed box x,y,w,h (repeatable)")->required();
  c_track->add_option("--count", track.count, "Frames to propagate")->check(CLI::NonNegativeNumber);
  c_track->add_option("--out", track.out, "Output JSON (default stdout)");

  RefineArgs refine;
  auto* c_refine = app.add_subcommand("refine", "Shrink fused boxes onto the nerve with the active contour");
  c_refine->add_option("--dataset", refine.dataset, "Dataset root");
  c_refine->add_option("--video", refine.video, "Video id")->required();
  c_refine->add_option("--frame", refine.frame, "Frame index")->required();
  c_refine->add_option("--box", refine.boxes, "Box x,y,w,h (repeatable)")->required();
  c_refine->add_option("--iterations", refine.params.iterations);
  c_refine->add_option("--smoothing", refine.params.smoothing);
  c_refine->add_option("--threshold", refine.params.threshold);
  c_refine->add_option("--balloon", refine.params.balloon);
  c_refine->add_option("--edge-alpha", refine.params.edge_alpha);
  c_refine->add_option("--edge-sigma", refine.params.edge_sigma);
  c_refine->add_option("--out", refine.out, "Write the mask PNG here");
  c_refine->add_flag("--commit", refine.commit, "Store the mask as ground truth");

  AugmentArgs aug;
  auto* c_aug = app.add_subcommand("augment", "Materialise an augmented copy of the dataset");
  c_aug->add_option("--dataset", aug.dataset, "Source dataset root");
  c_aug->add_option("--out", aug.out, "Output dataset root")->required();

  SplitArgs sp;
  auto* c_split = app.add_subcommand("split", "Video-level stratified k-fold split");
  c_split->add_option("--dataset", sp.dataset, "Dataset root");
  c_split->add_option("--out", sp.out, "Output splits.json (default stdout)");
  c_split->add_option("--k", sp.k, "Number of folds")->check(CLI::Range(2, 1000));

  EvaluateArgs ev;
  std::size_t ma_scbp = 0, ma_isc = 0;
  auto* c_eval = app.add_subcommand("evaluate", "Score predicted masks against ground truth");
  c_eval->add_option("--gt", ev.gt, "Ground-truth dataset root")->required();
  c_eval->add_option("--pred", ev.pred, "Prediction run directory")->required();
  c_eval->add_option("--class", ev.cls, "scbp, isc or both")->check(CLI::IsMember({"scbp", "isc", "both"}));
  c_eval->add_option("--out", ev.out, "Output report.json")->required();
  auto* o_scbp = c_eval->add_option("--min-area-scbp", ma_scbp, "Minimum component area for scbp");
  auto* o_isc = c_eval->add_option("--min-area-isc", ma_isc, "Minimum component area for isc");
  c_eval->add_flag("--derive-min-area", ev.derive_min_area, "Derive minimum areas from ground-truth medians");

  StatsArgs st;
  auto* c_stats = app.add_subcommand("stats", "Dataset summary statistics");
  c_stats->add_option("--dataset", st.dataset, "Dataset root");
  c_stats->add_option("--out", st.out, "Output JSON (default stdout)");

  ServeArgs sv;
  auto* c_serve = app.add_subcommand("serve", "Run the annotation HTTP service");
  c_serve->add_option("--dataset", sv.dataset, "Dataset root");
  c_serve->add_option("--host", sv.server.host, "Bind address");
  c_serve->add_option("--port", sv.server.port, "Port")->check(CLI::Range(1, 65535));
  c_serve->add_option("--cors-origin", sv.server.cors_origin, "Allowed CORS origin");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, io_.out, io_.err);
    return code == 0 ? kOk : kUsageError;
  }
  if (o_scbp->count()) ev.min_area_scbp = ma_scbp;
  if (o_isc->count()) ev.min_area_isc = ma_isc;

  try {
    if (c_ingest->parsed()) return cmd_ingest(ingest, io_);
    if (c_replay->parsed()) return cmd_replay(replay, jobs, io_);
    if (c_track->parsed()) return cmd_track(track, jobs, io_);
    if (c_refine->parsed()) return cmd_refine(refine, io_);
    if (c_aug->parsed()) return cmd_augment(aug, seed, jobs, io_);
    if (c_split->parsed()) return cmd_split(sp, seed, io_);
    if (c_eval->parsed()) return cmd_evaluate(ev, jobs, io_);
    if (c_stats->parsed()) return cmd_stats(st, io_);
    if (c_serve->parsed()) return cmd_serve(sv, jobs, io_);
  } catch (const UsageError& e) {
    io_.err << "usage error: " << e.what() << "\n";
    return kUsageError;
  } catch (const Error& e) {
    io_.err << "error: " << e.what() << "\n";
    return kDomainError;
  } catch (const std::exception& e) {
    io_.err << "error: " << e.what() << "\n";
    return kDomainError;
  }
  io_.err << app.help();
  return kUsageError;
}

inline int run(int argc, const char* const* argv, Streams io_ = {std::cout, std::cerr}) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, io_);
}

}  // namespace nervetrace::cli
