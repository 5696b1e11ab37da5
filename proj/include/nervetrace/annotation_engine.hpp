#pragma once

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "active_contour.hpp"
#include "dataset_store.hpp"
#include "errors.hpp"
#include "image.hpp"
#include "parallel.hpp"
#include "rle.hpp"
#include "tracker_kcf.hpp"

namespace nervetrace::annotation {

using nlohmann::json;

enum class FrameState { unvisited, pending, approved, committed, negative, discarded };
enum class Verdict { approve, reject, negative, discard };
enum class Direction { forward, backward };

inline const char* state_name(FrameState s) {
  switch (s) {
    case FrameState::unvisited: return "unvisited";
    case FrameState::pending: return "pending";
    case FrameState::approved: return "approved";
    case FrameState::committed: return "committed";
    case FrameState::negative: return "negative";
    case FrameState::discarded: return "discarded";
  }
  return "?";
}

inline FrameState parse_state(const std::string& s) {
  for (auto st : {FrameState::unvisited, FrameState::pending, FrameState::approved, FrameState::committed,
                  FrameState::negative, FrameState::discarded})
    if (s == state_name(st)) return st;
  throw FormatError("unknown frame state '" + s + "'");
}

inline const char* verdict_name(Verdict v) {
  switch (v) {
    case Verdict::approve: return "approve";
    case Verdict::reject: return "reject";
    case Verdict::negative: return "negative";
    case Verdict::discard: return "discard";
  }
  return "?";
}

inline Verdict parse_verdict(const std::string& s) {
  for (auto v : {Verdict::approve, Verdict::reject, Verdict::negative, Verdict::discard})
    if (s == verdict_name(v)) return v;
  throw FormatError("unknown verdict '" + s + "'");
}

inline const char* direction_name(Direction d) { return d == Direction::forward ? "forward" : "backward"; }
inline Direction parse_direction(const std::string& s) {
  if (s == "forward") return Direction::forward;
  if (s == "backward") return Direction::backward;
  throw FormatError("unknown direction '" + s + "'");
}

// Rasterises the union of box interiors, clipped to the frame.
inline BinaryMask fuse_boxes(std::span<const BoundingBox> boxes, Size frame) {
  if (boxes.empty()) throw SeedError("fuse_boxes: no boxes");
  BinaryMask mask(frame);
  for (const auto& b : boxes) {
    if (!b.intersects(frame)) throw GeometryError("fuse_boxes: box outside frame");
    const int x0 = std::max(0, b.x), x1 = std::min(frame.width, b.x + b.w);
    const int y0 = std::max(0, b.y), y1 = std::min(frame.height, b.y + b.h);
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) mask.set(x, y);
  }
  return mask;
}

struct FrameEntry {
  FrameState state = FrameState::unvisited;
  std::vector<BoundingBox> boxes;
  double confidence = 1.0;
  Provenance provenance = Provenance::manual;
  bool flagged = false;  // escalated to a second reviewer

  bool operator==(const FrameEntry&) const = default;
};

struct SeedRecord {
  int frame_idx = 0;
  std::vector<BoundingBox> boxes;
  bool operator==(const SeedRecord&) const = default;
};

// Pure data view of a session; serialisable.
struct SessionState {
  std::string video_id;
  int n_frames = 0;
  int cursor = 0;
  std::vector<SeedRecord> seeds;
  std::map<int, FrameEntry> frames;  // absent index == unvisited

  [[nodiscard]] FrameState state(int idx) const {
    auto it = frames.find(idx);
    return it == frames.end() ? FrameState::unvisited : it->second.state;
  }
  bool operator==(const SessionState&) const = default;
};

inline void to_json(json& j, const FrameEntry& f) {
  j = json{{"state", state_name(f.state)},
           {"boxes", f.boxes},
           {"confidence", f.confidence},
           {"provenance", to_string(f.provenance)},
           {"flagged", f.flagged}};
}
inline void from_json(const json& j, FrameEntry& f) {
  f.state = parse_state(j.at("state").get<std::string>());
  f.boxes = j.at("boxes").get<std::vector<BoundingBox>>();
  f.confidence = j.at("confidence").get<double>();
  f.provenance = parse_enum<Provenance>(j.at("provenance").get<std::string>());
  f.flagged = j.at("flagged").get<bool>();
}

inline void to_json(json& j, const SessionState& s) {
  json frames = json::array();
  for (const auto& [idx, f] : s.frames) {
    json e = f;
    e["idx"] = idx;
    frames.push_back(e);
  }
  json seeds = json::array();
  for (const auto& sd : s.seeds) seeds.push_back({{"frame", sd.frame_idx}, {"boxes", sd.boxes}});
  j = json{{"video_id", s.video_id}, {"n_frames", s.n_frames}, {"cursor", s.cursor}, {"seeds", seeds}, {"frames", frames}};
}
inline void from_json(const json& j, SessionState& s) {
  s.video_id = j.at("video_id").get<std::string>();
  s.n_frames = j.at("n_frames").get<int>();
  s.cursor = j.at("cursor").get<int>();
  s.seeds.clear();
  for (const auto& sd : j.at("seeds")) s.seeds.push_back({sd.at("frame").get<int>(), sd.at("boxes").get<std::vector<BoundingBox>>()});
  s.frames.clear();
  for (const auto& e : j.at("frames")) s.frames[e.at("idx").get<int>()] = e.get<FrameEntry>();
}

struct PendingFrame {
  int frame_idx = 0;
  std::vector<BoundingBox> boxes;
  double confidence = 0.0;
  bool flagged = false;
};

inline void to_json(json& j, const PendingFrame& p) {
  j = json{{"frame", p.frame_idx}, {"boxes", p.boxes}, {"confidence", p.confidence}, {"flagged", p.flagged}};
}

struct SessionEvent {
  std::string ts;
  std::string op;
  int frame_idx = 0;
  json payload = json::object();
};

inline void to_json(json& j, const SessionEvent& e) {
  j = json{{"ts", e.ts}, {"op", e.op}, {"frame_idx", e.frame_idx}, {"payload", e.payload}};
}
inline void from_json(const json& j, SessionEvent& e) {
  e.ts = j.value("ts", std::string{});
  e.op = j.at("op").get<std::string>();
  e.frame_idx = j.at("frame_idx").get<int>();
  e.payload = j.value("payload", json::object());
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::vector<SessionEvent> read_event_log(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open session log " + path.string());
  std::vector<SessionEvent> events;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      events.push_back(json::parse(line).get<SessionEvent>());
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return events;
}

struct SessionOptions {
  bool log_events = true;
  std::optional<fs::path> log_path;  // defaults to sessions/{video_id}.jsonl in the store
  int jobs = 1;
};

// Human-in-the-loop annotation of one video: seed boxes, propagate them with
// one tracker per box, review, refine the fused boxes with the active
// contour, commit ground truth. Holds the video's write lock for its lifetime.
template <Tracker T>
class BasicAnnotationSession {
 public:
  using Factory = std::function<T(const GrayImage&, const BoundingBox&)>;

  BasicAnnotationSession(DatasetStore& store, const std::string& video_id, Factory factory,
                         SessionOptions options = {})
      : store_(store),
        lock_(store.lock_video(video_id)),
        factory_(std::move(factory)),
        options_(std::move(options)) {
    const auto& rec = store_.video(video_id);
    state_.video_id = video_id;
    state_.n_frames = rec.n_frames;
    frame_size_ = rec.size();
    if (!options_.log_path) options_.log_path = store_.session_log_path(video_id);
  }

  [[nodiscard]] const SessionState& state() const { return state_; }
  [[nodiscard]] const std::string& video_id() const { return state_.video_id; }
  [[nodiscard]] Size frame_size() const { return frame_size_; }
  [[nodiscard]] FrameState frame_state(int idx) const { return state_.state(idx); }
  [[nodiscard]] const FrameEntry& entry(int idx) const {
    check_index(idx);
    static const FrameEntry kUnvisited{};
    auto it = state_.frames.find(idx);
    return it == state_.frames.end() ? kUnvisited : it->second;
  }
  [[nodiscard]] bool has_trackers(Direction d) const { return !trackers_[index(d)].empty(); }

  void set_seed(int frame_idx, std::vector<BoundingBox> boxes) {
    check_index(frame_idx);
    if (boxes.empty()) throw SeedError("seed requires at least one bounding box");
    for (const auto& b : boxes) validate_box(b, frame_size_);

    const GrayImage frame = store_.read_frame(video_id(), frame_idx);
    std::vector<T> trackers;
    trackers.reserve(boxes.size());
    for (const auto& b : boxes) trackers.push_back(factory_(frame, b));

    clear_pending();
    const FrameState previous = state_.state(frame_idx);
    if (previous == FrameState::negative || previous == FrameState::discarded) store_.clear_frame(lock_, frame_idx);

    for (auto d : {Direction::forward, Direction::backward}) {
      trackers_[index(d)] = trackers;
      position_[index(d)] = frame_idx;
    }
    FrameEntry& e = state_.frames[frame_idx];
    e = FrameEntry{FrameState::approved, boxes, 1.0, Provenance::seed, false};
    state_.seeds.push_back({frame_idx, boxes});
    state_.cursor = frame_idx;
    store_.add_seed_frame(lock_, frame_idx);
    log("seed", frame_idx, {{"boxes", boxes}});
  }

  // Steps every active tracker through the next `count` frames. Frames that
  // are unvisited or pending become pending with the tracked boxes; reviewed
  // frames keep their state.
  std::vector<PendingFrame> propagate(int count, Direction dir = Direction::forward) {
    auto& trackers = trackers_[index(dir)];
    if (trackers.empty()) throw StateError("no active trackers; set a seed first");
    if (count < 0) throw ParamError("propagate count must be >= 0");
    const int step = dir == Direction::forward ? 1 : -1;
    int& pos = position_[index(dir)];
    std::vector<PendingFrame> out;
    const int start = pos;

    for (int n = 0; n < count; ++n) {
      const int idx = pos + step;
      if (idx < 0 || idx >= state_.n_frames) break;
      const GrayImage frame = store_.read_frame(video_id(), idx);
      std::vector<TrackResult> results(trackers.size());
      parallel_for(trackers.size(), options_.jobs, [&](std::size_t i) { results[i] = trackers[i].step(frame); });
      pos = idx;

      PendingFrame p{idx, {}, 1.0, false};
      for (const auto& r : results) {
        p.boxes.push_back(r.box);
        p.confidence = std::min(p.confidence, r.peak);
      }
      p.flagged = p.confidence < kcf::kLowConfidencePeak;
      const FrameState st = state_.state(idx);
      if (st == FrameState::unvisited || st == FrameState::pending) {
        state_.frames[idx] = FrameEntry{FrameState::pending, p.boxes, p.confidence, Provenance::tracked_approved, p.flagged};
        pending_direction_[idx] = dir;
        out.push_back(std::move(p));
      }
    }
    log("propagate", start, {{"count", count}, {"direction", direction_name(dir)}});
    return out;
  }

  [[nodiscard]] std::vector<PendingFrame> pending() const {
    std::vector<PendingFrame> out;
    for (const auto& [idx, e] : state_.frames)
      if (e.state == FrameState::pending) out.push_back({idx, e.boxes, e.confidence, e.flagged});
    return out;
  }

  FrameState review(int frame_idx, Verdict verdict) {
    check_index(frame_idx);
    const FrameState current = state_.state(frame_idx);
    switch (verdict) {
      case Verdict::approve: {
        if (current != FrameState::pending) {
          throw StateError("approve requires a pending frame; frame " + std::to_string(frame_idx) + " is " +
                           state_name(current));
        }
        auto& e = state_.frames[frame_idx];
        e.state = FrameState::approved;
        e.provenance = Provenance::tracked_approved;
        break;
      }
      case Verdict::reject: {
        if (current != FrameState::pending) {
          throw StateError("reject requires a pending frame; frame " + std::to_string(frame_idx) + " is " +
                           state_name(current));
        }
        reject_run(frame_idx);
        break;
      }
      case Verdict::negative: {
        store_.set_frame_status(lock_, frame_idx, FrameStatus::negative);
        state_.frames[frame_idx] = FrameEntry{FrameState::negative, {}, 1.0, Provenance::manual, false};
        break;
      }
      case Verdict::discard: {
        store_.set_frame_status(lock_, frame_idx, FrameStatus::discarded);
        state_.frames[frame_idx] = FrameEntry{FrameState::discarded, {}, 1.0, Provenance::manual, false};
        break;
      }
    }
    state_.cursor = frame_idx;
    log("review", frame_idx, {{"verdict", verdict_name(verdict)}});
    return state_.state(frame_idx);
  }

  // Marks a frame for a second reviewer.
  void flag(int frame_idx) {
    check_index(frame_idx);
    state_.frames[frame_idx].flagged = true;
    log("flag", frame_idx, json::object());
  }

  [[nodiscard]] BinaryMask fused_mask(int frame_idx) const {
    const auto& e = entry(frame_idx);
    if (e.state != FrameState::approved && e.state != FrameState::committed) {
      throw StateError("frame " + std::to_string(frame_idx) + " has no approved boxes");
    }
    return fuse_boxes(e.boxes, frame_size_);
  }

  std::vector<gac::Proposal> proposals(int frame_idx, const std::vector<gac::GacParams>& grid,
                                       std::optional<std::chrono::steady_clock::time_point> deadline = {}) {
    const BinaryMask init = fused_mask(frame_idx);
    const GrayImage frame = store_.read_frame(video_id(), frame_idx);
    auto out = gac::propose_contours(frame, init, grid, options_.jobs, deadline);
    log("proposals", frame_idx, {{"grid", grid}});
    return out;
  }

  // Contour evolution from this frame's fused boxes; what a proposal with
  // `params` produces.
  [[nodiscard]] BinaryMask refine(int frame_idx, const gac::GacParams& params) const {
    const BinaryMask init = fused_mask(frame_idx);
    const GrayImage frame = store_.read_frame(video_id(), frame_idx);
    return gac::morph_gac(gac::inverse_gaussian_gradient(frame, params.edge_alpha, params.edge_sigma), init, params);
  }

  void refine_and_commit(int frame_idx, const gac::GacParams& params, const BinaryMask& mask) {
    check_index(frame_idx);
    const FrameState current = state_.state(frame_idx);
    if (current != FrameState::approved && current != FrameState::committed) {
      throw StateError("commit requires an approved frame; frame " + std::to_string(frame_idx) + " is " +
                       state_name(current));
    }
    params.validate();
    auto& e = state_.frames[frame_idx];
    store_.write_ground_truth(lock_, frame_idx, mask, params, e.provenance);
    e.state = FrameState::committed;
    state_.cursor = frame_idx;
    log("commit", frame_idx, {{"params", params}, {"mask", rle::encode(mask)}});
  }

  // Re-applies one logged event. Commits recompute the mask from the
  // replayed boxes; a logged mask that differs is a ReplayError.
  void apply(const SessionEvent& ev) {
    try {
      if (ev.op == "seed") {
        set_seed(ev.frame_idx, ev.payload.at("boxes").get<std::vector<BoundingBox>>());
      } else if (ev.op == "propagate") {
        propagate(ev.payload.at("count").get<int>(),
                  parse_direction(ev.payload.value("direction", std::string("forward"))));
      } else if (ev.op == "review") {
        review(ev.frame_idx, parse_verdict(ev.payload.at("verdict").get<std::string>()));
      } else if (ev.op == "flag") {
        flag(ev.frame_idx);
      } else if (ev.op == "proposals") {
        log("proposals", ev.frame_idx, ev.payload);
      } else if (ev.op == "commit") {
        const auto params = ev.payload.at("params").get<gac::GacParams>();
        const BinaryMask mask = refine(ev.frame_idx, params);
        if (ev.payload.contains("mask")) {
          const BinaryMask logged = rle::decode(ev.payload.at("mask").get<rle::RlePayload>());
          if (logged != mask) {
            throw ReplayError("frame " + std::to_string(ev.frame_idx) +
                              ": recomputed contour differs from the logged mask");
          }
        }
        refine_and_commit(ev.frame_idx, params, mask);
      } else {
        throw FormatError("unknown session op '" + ev.op + "'");
      }
    } catch (const json::exception& e) {
      throw FormatError("malformed '" + ev.op + "' event: " + e.what());
    }
  }

 private:
  static constexpr std::size_t index(Direction d) { return d == Direction::forward ? 0 : 1; }

  void check_index(int idx) const {
    if (idx < 0 || idx >= state_.n_frames) {
      throw NotFoundError("frame " + std::to_string(idx) + " out of range [0, " + std::to_string(state_.n_frames) + ")");
    }
  }

  void clear_pending() {
    std::erase_if(state_.frames, [](const auto& kv) { return kv.second.state == FrameState::pending; });
  }

  // Clears the rejected frame and the rest of its pending run in the
  // direction the run was propagated; that direction's trackers are dropped
  // until a reseed.
  void reject_run(int frame_idx) {
    const Direction dir = pending_direction_.at(frame_idx);
    const int step = dir == Direction::forward ? 1 : -1;
    for (int i = frame_idx; i >= 0 && i < state_.n_frames && state_.state(i) == FrameState::pending; i += step) {
      state_.frames.erase(i);
    }
    trackers_[index(dir)].clear();
  }

  void log(const std::string& op, int frame_idx, json payload) {
    if (!options_.log_events) return;
    SessionEvent ev{utc_timestamp(), op, frame_idx, std::move(payload)};
    io::ensure_parent(*options_.log_path);
    std::ofstream out(*options_.log_path, std::ios::app);
    if (!out) throw Error("cannot append to session log " + options_.log_path->string());
    out << json(ev).dump() << '\n';
  }

  DatasetStore& store_;
  VideoLock lock_;
  Factory factory_;
  SessionOptions options_;
  SessionState state_;
  Size frame_size_;
  std::vector<T> trackers_[2];
  int position_[2] = {0, 0};
  std::map<int, Direction> pending_direction_;
};

inline typename BasicAnnotationSession<kcf::KcfTracker>::Factory kcf_factory(kcf::KcfParams params = {}) {
  return [params](const GrayImage& frame, const BoundingBox& box) { return kcf::KcfTracker::init(frame, box, params); };
}

using AnnotationSession = BasicAnnotationSession<kcf::KcfTracker>;

// Replays a recorded event log into the store without writing a new log.
inline SessionState replay_session(DatasetStore& store, const std::string& video_id,
                                   const std::vector<SessionEvent>& events, kcf::KcfParams params = {}, int jobs = 1) {
  AnnotationSession session(store, video_id, kcf_factory(params), SessionOptions{false, std::nullopt, jobs});
  for (const auto& ev : events) session.apply(ev);
  return session.state();
}

}  // namespace nervetrace::annotation
