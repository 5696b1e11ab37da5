#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <nlohmann/json.hpp>
#include <opencv2/imgproc.hpp>
#include <opencv2/videoio.hpp>

#include "active_contour.hpp"
#include "domain.hpp"
#include "errors.hpp"
#include "image.hpp"
#include "io.hpp"

namespace nervetrace {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Records

struct PatientMeta {
  double age = 0;     // years
  Sex sex = Sex::male;
  double height = 0;  // cm
  double bmi = 0;     // kg/m^2

  void validate() const {
    if (age < 20 || age > 80) throw MetadataError("patient age must be within 20-80 years");
    if (!(bmi > 0)) throw MetadataError("patient bmi must be > 0");
  }
};

// Acquisition device. Anything outside the three known scanners keeps its name.
struct Machine {
  enum class Kind { esaote, sonosite, butterfly, other };
  Kind kind = Kind::esaote;
  std::string other_name;

  static Machine parse(const std::string& s) {
    if (s == "esaote") return {Kind::esaote, {}};
    if (s == "sonosite") return {Kind::sonosite, {}};
    if (s == "butterfly") return {Kind::butterfly, {}};
    if (s.empty()) throw MetadataError("machine must not be empty");
    return {Kind::other, s};
  }
  [[nodiscard]] std::string name() const {
    switch (kind) {
      case Kind::esaote: return "esaote";
      case Kind::sonosite: return "sonosite";
      case Kind::butterfly: return "butterfly";
      case Kind::other: return other_name;
    }
    return other_name;
  }
  bool operator==(const Machine&) const = default;
};

// Sonosite frames are evaluated at 256x192, everything else at 256x256.
inline Size default_eval_resolution(const Machine& m) {
  return m.kind == Machine::Kind::sonosite ? Size{256, 192} : Size{256, 256};
}

struct VideoRecord {
  std::string id;
  Machine machine;
  Plexus plexus = Plexus::scbp;
  Side side = Side::left;
  Gain gain = Gain::medium;
  std::string depth_setting;
  int width = 0;
  int height = 0;
  int n_frames = 0;
  Size eval_resolution{256, 256};
  std::optional<PatientMeta> patient;

  [[nodiscard]] Size size() const { return {width, height}; }

  void validate() const {
    if (id.empty()) throw MetadataError("video id must not be empty");
    if (n_frames < 1) throw MetadataError(id + ": n_frames must be >= 1");
    if (width < 64 || height < 64) throw MetadataError(id + ": frames must be at least 64x64");
    if (eval_resolution.width != 256) throw MetadataError(id + ": eval_resolution width must be 256");
    if (eval_resolution.height < 1) throw MetadataError(id + ": eval_resolution height must be >= 1");
    if (patient) patient->validate();
  }
};

struct FrameLabel {
  int frame_idx = 0;
  FrameStatus status = FrameStatus::negative;
  Provenance provenance = Provenance::manual;
  std::optional<gac::GacParams> gac_params;
};

struct VideoLabels {
  std::map<int, FrameLabel> frames;  // one entry per labelled frame index
  std::set<int> seed_frames;
  std::string tracker = "kcf";

  [[nodiscard]] std::size_t count(FrameStatus s) const {
    return static_cast<std::size_t>(std::count_if(frames.begin(), frames.end(),
                                                  [s](const auto& kv) { return kv.second.status == s; }));
  }
  // Positive and negative frames in index order; discarded and unlabelled frames never appear.
  [[nodiscard]] std::vector<FrameLabel> evaluable() const {
    std::vector<FrameLabel> out;
    for (const auto& [idx, label] : frames)
      if (label.status != FrameStatus::discarded) out.push_back(label);
    return out;
  }
};

// ---------------------------------------------------------------------------
// JSON

namespace gac {
inline void to_json(json& j, const GacParams& p) {
  j = json{{"iterations", p.iterations}, {"smoothing", p.smoothing}, {"threshold", p.threshold},
           {"balloon", p.balloon},       {"edge_alpha", p.edge_alpha}, {"edge_sigma", p.edge_sigma}};
}
inline void from_json(const json& j, GacParams& p) {
  p.iterations = j.at("iterations").get<int>();
  p.smoothing = j.at("smoothing").get<int>();
  p.threshold = j.at("threshold").get<double>();
  p.balloon = j.at("balloon").get<double>();
  p.edge_alpha = j.at("edge_alpha").get<double>();
  p.edge_sigma = j.at("edge_sigma").get<double>();
}
}  // namespace gac

inline void to_json(json& j, const BoundingBox& b) { j = json{{"x", b.x}, {"y", b.y}, {"w", b.w}, {"h", b.h}}; }
inline void from_json(const json& j, BoundingBox& b) {
  b.x = j.at("x").get<int>();
  b.y = j.at("y").get<int>();
  b.w = j.at("w").get<int>();
  b.h = j.at("h").get<int>();
}

inline void to_json(json& j, const PatientMeta& p) {
  j = json{{"age", p.age}, {"sex", to_string(p.sex)}, {"height", p.height}, {"bmi", p.bmi}};
}
inline void from_json(const json& j, PatientMeta& p) {
  p.age = j.at("age").get<double>();
  p.sex = parse_enum<Sex>(j.at("sex").get<std::string>());
  p.height = j.at("height").get<double>();
  p.bmi = j.at("bmi").get<double>();
}

inline void to_json(json& j, const VideoRecord& v) {
  j = json{{"id", v.id},
           {"machine", v.machine.name()},
           {"plexus", to_string(v.plexus)},
           {"side", to_string(v.side)},
           {"gain", to_string(v.gain)},
           {"depth_setting", v.depth_setting},
           {"width", v.width},
           {"height", v.height},
           {"n_frames", v.n_frames},
           {"eval_resolution", {v.eval_resolution.width, v.eval_resolution.height}}};
  if (v.patient) j["patient"] = *v.patient;
}

// Builds a record from user-supplied metadata. Frame geometry fields are
// filled in by ingest; everything else is validated here.
inline VideoRecord record_from_meta(const json& meta) {
  for (const char* key : {"id", "machine", "plexus", "side", "gain"}) {
    if (!meta.contains(key) || meta.at(key).is_null()) {
      throw MetadataError(std::string("missing required metadata field '") + key + "'");
    }
  }
  try {
    VideoRecord v;
    v.id = meta.at("id").get<std::string>();
    v.machine = Machine::parse(meta.at("machine").get<std::string>());
    v.plexus = parse_enum<Plexus>(meta.at("plexus").get<std::string>());
    v.side = parse_enum<Side>(meta.at("side").get<std::string>());
    v.gain = parse_enum<Gain>(meta.at("gain").get<std::string>());
    v.depth_setting = meta.value("depth_setting", std::string{});
    v.eval_resolution = default_eval_resolution(v.machine);
    if (meta.contains("eval_resolution")) {
      const auto& r = meta.at("eval_resolution");
      v.eval_resolution = {r.at(0).get<int>(), r.at(1).get<int>()};
    }
    if (meta.contains("patient") && !meta.at("patient").is_null()) v.patient = meta.at("patient").get<PatientMeta>();
    if (v.id.empty() || v.id.find('/') != std::string::npos || v.id.starts_with('.')) {
      throw MetadataError("invalid video id '" + v.id + "'");
    }
    if (v.patient) v.patient->validate();
    if (v.eval_resolution.width != 256 || v.eval_resolution.height < 1) {
      throw MetadataError(v.id + ": eval_resolution must be 256 wide");
    }
    return v;
  } catch (const FormatError& e) {
    throw MetadataError(e.what());
  } catch (const json::exception& e) {
    throw MetadataError(std::string("malformed metadata: ") + e.what());
  }
}

inline void from_json(const json& j, VideoRecord& v) {
  v = record_from_meta(j);
  v.width = j.at("width").get<int>();
  v.height = j.at("height").get<int>();
  v.n_frames = j.at("n_frames").get<int>();
}

inline void to_json(json& j, const FrameLabel& f) {
  j = json{{"idx", f.frame_idx}, {"status", to_string(f.status)}, {"provenance", to_string(f.provenance)}};
  if (f.gac_params) j["gac_params"] = *f.gac_params;
}
inline void from_json(const json& j, FrameLabel& f) {
  f.frame_idx = j.at("idx").get<int>();
  f.status = parse_enum<FrameStatus>(j.at("status").get<std::string>());
  f.provenance = parse_enum<Provenance>(j.at("provenance").get<std::string>());
  if (j.contains("gac_params")) f.gac_params = j.at("gac_params").get<gac::GacParams>();
}

inline void to_json(json& j, const VideoLabels& l) {
  json frames = json::array();
  for (const auto& [idx, f] : l.frames) frames.push_back(f);
  j = json{{"frames", frames}, {"seed_frames", l.seed_frames}, {"tracker", l.tracker}};
}
inline void from_json(const json& j, VideoLabels& l) {
  l = {};
  for (const auto& f : j.at("frames")) {
    auto label = f.get<FrameLabel>();
    if (!l.frames.emplace(label.frame_idx, label).second) {
      throw FormatError("duplicate label for frame " + std::to_string(label.frame_idx));
    }
  }
  for (const auto& s : j.at("seed_frames")) l.seed_frames.insert(s.get<int>());
  l.tracker = j.value("tracker", std::string("kcf"));
}

// ---------------------------------------------------------------------------
// Advisory locking

class FileLock {
 public:
  static std::optional<FileLock> try_acquire(const fs::path& path) {
    io::ensure_parent(path);
    const int fd = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
    if (fd < 0) throw LockError("cannot open lock file " + path.string());
    if (::flock(fd, LOCK_EX | LOCK_NB) != 0) {
      ::close(fd);
      return std::nullopt;
    }
    return FileLock(fd);
  }

  FileLock(FileLock&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  FileLock& operator=(FileLock&& o) noexcept {
    if (this != &o) {
      release();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;
  ~FileLock() { release(); }

 private:
  explicit FileLock(int fd) : fd_(fd) {}
  void release() {
    if (fd_ >= 0) {
      ::flock(fd_, LOCK_UN);
      ::close(fd_);
      fd_ = -1;
    }
  }
  int fd_ = -1;
};

// Proof of exclusive write access to one video. Mutating store calls demand it.
class VideoLock {
 public:
  VideoLock(std::string video_id, FileLock lock) : video_id_(std::move(video_id)), lock_(std::move(lock)) {}
  [[nodiscard]] const std::string& video_id() const { return video_id_; }

 private:
  std::string video_id_;
  FileLock lock_;
};

// ---------------------------------------------------------------------------
// Store

// On-disk layout under the dataset root:
//   manifest.json
//   frames/{video_id}/{idx:06}.png   8-bit grayscale
//   masks/{video_id}/{idx:06}.png    0/255 ground truth
//   labels/{video_id}.json
//   sessions/{video_id}.jsonl        annotation event logs
class DatasetStore {
 public:
  explicit DatasetStore(fs::path root) : root_(std::move(root)) {
    fs::create_directories(root_);
    if (fs::exists(manifest_path())) load_manifest();
  }

  [[nodiscard]] const fs::path& root() const { return root_; }
  [[nodiscard]] fs::path manifest_path() const { return root_ / "manifest.json"; }
  [[nodiscard]] fs::path frame_path(const std::string& id, int idx) const {
    return root_ / "frames" / id / io::frame_name(idx);
  }
  [[nodiscard]] fs::path mask_path(const std::string& id, int idx) const {
    return root_ / "masks" / id / io::frame_name(idx);
  }
  [[nodiscard]] fs::path labels_path(const std::string& id) const { return root_ / "labels" / (id + ".json"); }
  [[nodiscard]] fs::path session_log_path(const std::string& id) const {
    return root_ / "sessions" / (id + ".jsonl");
  }

  [[nodiscard]] const std::vector<VideoRecord>& videos() const { return videos_; }

  [[nodiscard]] const VideoRecord& video(const std::string& id) const {
    for (const auto& v : videos_)
      if (v.id == id) return v;
    throw NotFoundError("unknown video '" + id + "'");
  }
  [[nodiscard]] bool has_video(const std::string& id) const {
    return std::any_of(videos_.begin(), videos_.end(), [&](const VideoRecord& v) { return v.id == id; });
  }

  void reload() {
    videos_.clear();
    if (fs::exists(manifest_path())) load_manifest();
  }

  VideoLock lock_video(const std::string& id) const {
    (void)video(id);
    auto lock = FileLock::try_acquire(root_ / "locks" / (id + ".lock"));
    if (!lock) throw LockError("video '" + id + "' is being modified by another session");
    return VideoLock(id, std::move(*lock));
  }

  // Reads a frame directory (images sorted by file name) or a video file,
  // re-encodes every frame as 8-bit grayscale under frames/{id}/ and appends
  // the record to the manifest.
  VideoRecord ingest_video(const fs::path& source, const json& meta, bool replace = false) {
    VideoRecord rec = record_from_meta(meta);
    if (!fs::exists(source)) throw IngestError("source not found: " + source.string());

    auto manifest_lock = acquire_manifest_lock();
    reload();
    if (has_video(rec.id) && !replace) throw IngestError("video '" + rec.id + "' already exists");

    std::vector<cv::Mat> frames = read_source(source);
    if (frames.empty()) throw IngestError("no frames found in " + source.string());
    const cv::Size dims = frames.front().size();
    for (std::size_t i = 0; i < frames.size(); ++i) {
      if (frames[i].size() != dims) {
        throw IngestError("frame " + std::to_string(i) + " is " + std::to_string(frames[i].cols) + "x" +
                          std::to_string(frames[i].rows) + ", expected " + std::to_string(dims.width) + "x" +
                          std::to_string(dims.height));
      }
    }
    rec.width = dims.width;
    rec.height = dims.height;
    rec.n_frames = static_cast<int>(frames.size());
    try {
      rec.validate();
    } catch (const MetadataError& e) {
      throw IngestError(e.what());
    }

    std::error_code ec;
    fs::remove_all(root_ / "frames" / rec.id, ec);
    for (std::size_t i = 0; i < frames.size(); ++i) io::write_png(frame_path(rec.id, static_cast<int>(i)), frames[i]);
    if (!fs::exists(labels_path(rec.id)) || replace) {
      fs::remove_all(root_ / "masks" / rec.id, ec);
      write_labels_unlocked(rec.id, VideoLabels{});
    }

    std::erase_if(videos_, [&](const VideoRecord& v) { return v.id == rec.id; });
    videos_.push_back(rec);
    save_manifest();
    return rec;
  }

  // Registers an already-laid-out video (used by tools that materialise
  // derived datasets). Frames must already exist on disk.
  void put_record(const VideoRecord& rec) {
    rec.validate();
    auto manifest_lock = acquire_manifest_lock();
    std::erase_if(videos_, [&](const VideoRecord& v) { return v.id == rec.id; });
    videos_.push_back(rec);
    save_manifest();
  }

  [[nodiscard]] GrayImage read_frame(const std::string& id, int idx) const {
    check_index(id, idx);
    return io::read_gray(frame_path(id, idx));
  }

  [[nodiscard]] VideoLabels labels(const std::string& id) const {
    (void)video(id);
    const auto p = labels_path(id);
    if (!fs::exists(p)) return {};
    try {
      return json::parse(io::read_text(p)).get<VideoLabels>();
    } catch (const json::exception& e) {
      throw FormatError(p.string() + ": " + e.what());
    }
  }

  [[nodiscard]] std::map<std::string, VideoLabels> all_labels() const {
    std::map<std::string, VideoLabels> out;
    for (const auto& v : videos_) out.emplace(v.id, labels(v.id));
    return out;
  }

  void write_ground_truth(const VideoLock& lock, int idx, const BinaryMask& mask, const gac::GacParams& params,
                          Provenance provenance = Provenance::manual) {
    const auto& id = lock.video_id();
    check_index(id, idx);
    const VideoRecord& rec = video(id);
    if (mask.size() != rec.size()) {
      throw MaskError("mask is " + to_string(mask.size()) + ", video frames are " + to_string(rec.size()));
    }
    io::write_mask(mask_path(id, idx), mask);
    VideoLabels l = labels(id);
    l.frames[idx] = FrameLabel{idx, FrameStatus::positive, provenance, params};
    write_labels_unlocked(id, l);
  }

  [[nodiscard]] BinaryMask read_ground_truth(const std::string& id, int idx) const {
    check_index(id, idx);
    const auto p = mask_path(id, idx);
    if (!fs::exists(p)) throw NotFoundError("no ground truth for " + id + " frame " + std::to_string(idx));
    return io::read_mask(p);
  }

  // Marks a frame negative or discarded; any stored mask is removed.
  void set_frame_status(const VideoLock& lock, int idx, FrameStatus status, Provenance provenance = Provenance::manual) {
    if (status == FrameStatus::positive) throw StateError("positive frames are set via write_ground_truth");
    const auto& id = lock.video_id();
    check_index(id, idx);
    std::error_code ec;
    fs::remove(mask_path(id, idx), ec);
    VideoLabels l = labels(id);
    l.frames[idx] = FrameLabel{idx, status, provenance, std::nullopt};
    write_labels_unlocked(id, l);
  }

  // Drops any label for the frame (back to unlabelled).
  void clear_frame(const VideoLock& lock, int idx) {
    const auto& id = lock.video_id();
    check_index(id, idx);
    std::error_code ec;
    fs::remove(mask_path(id, idx), ec);
    VideoLabels l = labels(id);
    if (l.frames.erase(idx)) write_labels_unlocked(id, l);
  }

  void add_seed_frame(const VideoLock& lock, int idx) {
    const auto& id = lock.video_id();
    check_index(id, idx);
    VideoLabels l = labels(id);
    if (l.seed_frames.insert(idx).second) write_labels_unlocked(id, l);
  }

 private:
  void check_index(const std::string& id, int idx) const {
    const auto& v = video(id);
    if (idx < 0 || idx >= v.n_frames) {
      throw NotFoundError(id + ": frame " + std::to_string(idx) + " out of range [0, " +
                          std::to_string(v.n_frames) + ")");
    }
  }

  FileLock acquire_manifest_lock() const {
    auto lock = FileLock::try_acquire(root_ / "locks" / "manifest.lock");
    if (!lock) throw LockError("manifest is being modified by another process");
    return std::move(*lock);
  }

  void load_manifest() {
    try {
      const json j = json::parse(io::read_text(manifest_path()));
      for (const auto& v : j.at("videos")) videos_.push_back(v.get<VideoRecord>());
    } catch (const json::exception& e) {
      throw FormatError("manifest.json: " + std::string(e.what()));
    } catch (const MetadataError& e) {
      throw FormatError("manifest.json: " + std::string(e.what()));
    }
  }

  void save_manifest() const {
    json j{{"videos", json::array()}};
    for (const auto& v : videos_) j["videos"].push_back(v);
    io::write_text_atomic(manifest_path(), j.dump(2) + "\n");
  }

  void write_labels_unlocked(const std::string& id, const VideoLabels& l) const {
    io::write_text_atomic(labels_path(id), json(l).dump(2) + "\n");
  }

  static std::vector<cv::Mat> read_source(const fs::path& source) {
    std::vector<cv::Mat> frames;
    auto to_gray = [](cv::Mat m) {
      if (m.channels() == 3) cv::cvtColor(m, m, cv::COLOR_BGR2GRAY);
      else if (m.channels() == 4) cv::cvtColor(m, m, cv::COLOR_BGRA2GRAY);
      if (m.depth() != CV_8U) m.convertTo(m, CV_8U, m.depth() == CV_16U ? 1.0 / 257.0 : 1.0);
      return m;
    };
    if (fs::is_directory(source)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(source)) {
        if (!e.is_regular_file()) continue;
        auto ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp" || ext == ".tif" || ext == ".tiff") {
          files.push_back(e.path());
        }
      }
      std::sort(files.begin(), files.end());
      for (const auto& f : files) {
        cv::Mat m = cv::imread(f.string(), cv::IMREAD_UNCHANGED);
        if (m.empty()) throw IngestError("unreadable frame " + f.string());
        frames.push_back(to_gray(m));
      }
    } else {
      cv::VideoCapture cap(source.string());
      if (!cap.isOpened()) throw IngestError("cannot open video " + source.string());
      cv::Mat m;
      while (cap.read(m)) frames.push_back(to_gray(m.clone()));
    }
    return frames;
  }

  fs::path root_;
  std::vector<VideoRecord> videos_;
};

// ---------------------------------------------------------------------------
// Summary statistics

struct Summary {
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation (n - 1)
  std::size_t n = 0;
};

inline Summary summarize(const std::vector<double>& v) {
  Summary s;
  s.n = v.size();
  if (v.empty()) return s;
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

struct GroupStats {
  std::size_t videos = 0;
  std::size_t frames = 0;
  std::size_t positive_frames = 0;
  std::size_t male = 0;
  std::size_t female = 0;
  Summary age, height, bmi;
};

struct StatsReport {
  GroupStats total;
  std::map<Plexus, GroupStats> by_plexus{{Plexus::scbp, {}}, {Plexus::isc, {}}, {Plexus::none, {}}};
};

inline StatsReport dataset_stats(const std::vector<VideoRecord>& videos,
                                 const std::map<std::string, VideoLabels>& labels) {
  struct Acc {
    GroupStats g;
    std::vector<double> age, height, bmi;
  };
  Acc total;
  std::map<Plexus, Acc> groups{{Plexus::scbp, {}}, {Plexus::isc, {}}, {Plexus::none, {}}};
  for (const auto& v : videos) {
    std::size_t positives = 0;
    if (auto it = labels.find(v.id); it != labels.end()) positives = it->second.count(FrameStatus::positive);
    for (Acc* acc : {&total, &groups[v.plexus]}) {
      acc->g.videos += 1;
      acc->g.frames += static_cast<std::size_t>(v.n_frames);
      acc->g.positive_frames += positives;
      if (v.patient) {
        (v.patient->sex == Sex::male ? acc->g.male : acc->g.female) += 1;
        acc->age.push_back(v.patient->age);
        acc->height.push_back(v.patient->height);
        acc->bmi.push_back(v.patient->bmi);
      }
    }
  }
  auto finish = [](Acc& a) {
    a.g.age = summarize(a.age);
    a.g.height = summarize(a.height);
    a.g.bmi = summarize(a.bmi);
    return a.g;
  };
  StatsReport r;
  r.total = finish(total);
  for (auto& [p, acc] : groups) r.by_plexus[p] = finish(acc);
  return r;
}

inline StatsReport dataset_stats(const DatasetStore& store) {
  return dataset_stats(store.videos(), store.all_labels());
}

inline json summary_json(const Summary& s) { return json{{"mean", s.mean}, {"sd", s.sd}, {"n", s.n}}; }

inline json group_json(const GroupStats& g) {
  return json{{"videos", g.videos},     {"frames", g.frames},         {"positive_frames", g.positive_frames},
              {"male", g.male},         {"female", g.female},         {"age", summary_json(g.age)},
              {"height", summary_json(g.height)}, {"bmi", summary_json(g.bmi)}};
}

inline json stats_json(const StatsReport& r) {
  json j{{"total", group_json(r.total)}};
  for (const auto& [p, g] : r.by_plexus) j[std::string(to_string(p))] = group_json(g);
  return j;
}

}  // namespace nervetrace
