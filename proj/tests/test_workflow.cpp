#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <sstream>

#include <nervetrace/annotation_engine.hpp>
#include <nervetrace/api_service.hpp>
#include <nervetrace/cli.hpp>
#include <nervetrace/dataset_store.hpp>

#include "support.hpp"

using namespace nervetrace;
using annotation::AnnotationSession;
using annotation::Direction;
using annotation::FrameState;
using annotation::Verdict;
using nlohmann::json;
using testsupport::TempDir;

namespace {

constexpr int kSide = 24;

// Store with one 30-frame video of a textured square drifting right.
struct Fixture {
  TempDir dir;
  DatasetStore store{dir / "data"};
  std::vector<std::pair<int, int>> truth;

  explicit Fixture(int frames = 30, const std::string& id = "v1") {
    std::mt19937 rng(42);
    const auto seq = testsupport::moving_square_sequence(rng, {128, 128}, kSide, frames, 2.0, 1.0, 0.03, &truth);
    testsupport::ingest_frames(store, dir.path(), seq, testsupport::video_meta(id));
  }
  [[nodiscard]] BoundingBox box(int i) const { return {truth[i].first, truth[i].second, kSide, kSide}; }

  AnnotationSession session(const std::string& id = "v1") {
    return AnnotationSession(store, id, annotation::kcf_factory(), {true, std::nullopt, 1});
  }
};

gac::GacParams quick_params() {
  gac::GacParams p;
  p.iterations = 8;
  p.threshold = 0.3;
  return p;
}

}  // namespace

// ---------------------------------------------------------------------------
// Dataset store

TEST(Store, IngestWritesFramesAndManifest) {
  TempDir dir;
  DatasetStore store(dir / "data");
  std::mt19937 rng(1);
  std::vector<GrayImage> frames;
  for (int i = 0; i < 10; ++i) frames.push_back(testsupport::noise_image(rng, {96, 80}, 0.5, 0.2));
  const auto rec = testsupport::ingest_frames(store, dir.path(), frames, testsupport::video_meta("a"));
  EXPECT_EQ(rec.n_frames, 10);
  EXPECT_EQ(rec.size(), (Size{96, 80}));
  for (int i = 0; i < 10; ++i) EXPECT_TRUE(fs::exists(store.frame_path("a", i)));
  EXPECT_EQ(io::to_u8_mat(store.read_frame("a", 3)).size(), cv::Size(96, 80));
  EXPECT_TRUE(store.labels("a").frames.empty());

  DatasetStore reopened(dir / "data");
  ASSERT_TRUE(reopened.has_video("a"));
  EXPECT_EQ(reopened.video("a").gain, Gain::medium);
  ASSERT_TRUE(reopened.video("a").patient.has_value());

  EXPECT_THROW(testsupport::ingest_frames(store, dir.path(), frames, testsupport::video_meta("a")), IngestError);
  EXPECT_NO_THROW(store.ingest_video(dir / "src-a", testsupport::video_meta("a"), true));
}

TEST(Store, MetadataValidation) {
  TempDir dir;
  DatasetStore store(dir / "data");
  std::vector<GrayImage> frames(2, GrayImage(64, 64, 0.5f));
  auto meta = testsupport::video_meta("b");
  meta.erase("gain");
  EXPECT_THROW(testsupport::ingest_frames(store, dir.path(), frames, meta), MetadataError);
  meta = testsupport::video_meta("b");
  meta["plexus"] = "elbow";
  EXPECT_THROW(testsupport::ingest_frames(store, dir.path(), frames, meta), MetadataError);
  meta = testsupport::video_meta("b", "scbp", "left", "medium", "male", 90);
  EXPECT_THROW(testsupport::ingest_frames(store, dir.path(), frames, meta), MetadataError);
  meta = testsupport::video_meta("b");
  meta.erase("patient");
  EXPECT_NO_THROW(testsupport::ingest_frames(store, dir.path(), frames, meta));
  EXPECT_FALSE(store.video("b").patient.has_value());
  EXPECT_THROW(store.ingest_video(dir / "missing", testsupport::video_meta("c")), IngestError);
}

TEST(Store, SonositeEvaluatesAtReducedHeight) {
  TempDir dir;
  DatasetStore store(dir / "data");
  std::vector<GrayImage> frames(1, GrayImage(64, 64, 0.5f));
  testsupport::ingest_frames(store, dir.path(), frames,
                             testsupport::video_meta("s", "scbp", "left", "medium", "male", 40, "sonosite"));
  EXPECT_EQ(store.video("s").eval_resolution, (Size{256, 192}));
}

TEST(Store, GroundTruthRoundTripAndStatusChanges) {
  Fixture fx(4);
  const auto lock = fx.store.lock_video("v1");
  const BinaryMask m = testsupport::disk_mask({128, 128}, 60, 50, 12);
  fx.store.write_ground_truth(lock, 1, m, quick_params(), Provenance::seed);
  EXPECT_EQ(fx.store.read_ground_truth("v1", 1), m);
  auto labels = fx.store.labels("v1");
  ASSERT_EQ(labels.frames.size(), 1u);
  EXPECT_EQ(labels.frames.at(1).status, FrameStatus::positive);
  EXPECT_EQ(labels.frames.at(1).provenance, Provenance::seed);
  EXPECT_EQ(labels.frames.at(1).gac_params, quick_params());

  EXPECT_THROW(fx.store.write_ground_truth(lock, 1, BinaryMask(64, 64), quick_params()), MaskError);
  EXPECT_THROW(fx.store.write_ground_truth(lock, 9, m, quick_params()), NotFoundError);

  // Recommitting replaces the mask.
  const BinaryMask m2 = testsupport::rect_mask({128, 128}, 10, 10, 30, 30);
  fx.store.write_ground_truth(lock, 1, m2, quick_params());
  EXPECT_EQ(fx.store.read_ground_truth("v1", 1), m2);

  fx.store.set_frame_status(lock, 1, FrameStatus::negative);
  EXPECT_FALSE(fs::exists(fx.store.mask_path("v1", 1)));
  EXPECT_THROW((void)fx.store.read_ground_truth("v1", 1), NotFoundError);
  fx.store.set_frame_status(lock, 2, FrameStatus::discarded);
  labels = fx.store.labels("v1");
  EXPECT_EQ(labels.count(FrameStatus::negative), 1u);
  EXPECT_EQ(labels.evaluable().size(), 1u);
  EXPECT_THROW(fx.store.set_frame_status(lock, 0, FrameStatus::positive), StateError);
}

TEST(Store, SecondWriterIsRefused) {
  Fixture fx(2);
  const auto lock = fx.store.lock_video("v1");
  EXPECT_THROW((void)fx.store.lock_video("v1"), LockError);
  EXPECT_THROW((void)fx.store.lock_video("nope"), NotFoundError);
}

TEST(Stats, EmptyDataset) {
  TempDir dir;
  DatasetStore store(dir / "data");
  const auto r = dataset_stats(store);
  EXPECT_EQ(r.total.videos, 0u);
  EXPECT_EQ(r.total.frames, 0u);
  EXPECT_EQ(r.total.age.n, 0u);
}

TEST(Stats, LargeClassFixtureCounts) {
  std::vector<VideoRecord> videos;
  std::map<std::string, VideoLabels> labels;
  for (int i = 0; i < 33; ++i) {
    VideoRecord v;
    v.id = "isc" + std::to_string(i);
    v.plexus = Plexus::isc;
    v.width = v.height = 64;
    v.n_frames = i == 32 ? 142 : 140;
    videos.push_back(v);
    VideoLabels l;
    const int positives = i == 32 ? 112 : 111;
    for (int f = 0; f < v.n_frames; ++f)
      l.frames[f] = {f, f < positives ? FrameStatus::positive : FrameStatus::negative, Provenance::manual, {}};
    labels[v.id] = l;
  }
  const auto r = dataset_stats(videos, labels);
  EXPECT_EQ(r.by_plexus.at(Plexus::isc).videos, 33u);
  EXPECT_EQ(r.by_plexus.at(Plexus::isc).frames, 4622u);
  EXPECT_EQ(r.by_plexus.at(Plexus::isc).positive_frames, 3664u);
  EXPECT_EQ(r.by_plexus.at(Plexus::scbp).videos, 0u);
}

TEST(Stats, SmallHandCountedFixture) {
  std::vector<VideoRecord> videos;
  std::map<std::string, VideoLabels> labels;
  const double ages[] = {30, 40, 50, 60};
  for (int i = 0; i < 4; ++i) {
    VideoRecord v;
    v.id = "v" + std::to_string(i);
    v.plexus = i < 3 ? Plexus::scbp : Plexus::none;
    v.n_frames = 10 + i;
    v.patient = PatientMeta{ages[i], i % 2 ? Sex::female : Sex::male, 170.0 + i, 22.0};
    videos.push_back(v);
    VideoLabels l;
    for (int f = 0; f < i; ++f) l.frames[f] = {f, FrameStatus::positive, Provenance::manual, {}};
    l.frames[9] = {9, FrameStatus::discarded, Provenance::manual, {}};
    labels[v.id] = l;
  }
  const auto r = dataset_stats(videos, labels);
  EXPECT_EQ(r.total.videos, 4u);
  EXPECT_EQ(r.total.frames, 46u);
  EXPECT_EQ(r.total.positive_frames, 6u);
  EXPECT_EQ(r.total.male, 2u);
  EXPECT_EQ(r.total.female, 2u);
  const auto& s = r.by_plexus.at(Plexus::scbp);
  EXPECT_EQ(s.videos, 3u);
  EXPECT_EQ(s.positive_frames, 3u);
  EXPECT_DOUBLE_EQ(s.age.mean, 40.0);
  EXPECT_DOUBLE_EQ(s.age.sd, 10.0);  // sample SD of {30, 40, 50}
  EXPECT_EQ(r.by_plexus.at(Plexus::none).positive_frames, 3u);
}

// ---------------------------------------------------------------------------
// Annotation session

TEST(Session, FuseBoxes) {
  const std::vector<BoundingBox> one{{10, 10, 20, 20}};
  EXPECT_EQ(annotation::fuse_boxes(one, {64, 64}).area(), 400u);
  const std::vector<BoundingBox> two{{0, 0, 20, 10}, {40, 40, 10, 10}};
  EXPECT_EQ(annotation::fuse_boxes(two, {64, 64}).area(), 300u);
  const std::vector<BoundingBox> overlap{{0, 0, 20, 20}, {10, 10, 20, 20}};
  EXPECT_EQ(annotation::fuse_boxes(overlap, {64, 64}).area(), 700u);
  const std::vector<BoundingBox> clipped{{55, 55, 20, 20}};
  EXPECT_EQ(annotation::fuse_boxes(clipped, {64, 64}).area(), 81u);
  EXPECT_THROW(annotation::fuse_boxes({}, {64, 64}), SeedError);
}

TEST(Session, SeedAndPropagate) {
  Fixture fx;
  auto s = fx.session();
  EXPECT_THROW(s.propagate(3), StateError);
  EXPECT_THROW(s.set_seed(0, {}), SeedError);
  EXPECT_THROW(s.set_seed(0, {{0, 0, 4, 4}}), GeometryError);
  s.set_seed(0, {fx.box(0), {90, 90, 20, 20}});
  EXPECT_EQ(s.frame_state(0), FrameState::approved);
  EXPECT_EQ(s.entry(0).provenance, Provenance::seed);
  EXPECT_TRUE(s.has_trackers(Direction::forward));

  const auto pending = s.propagate(5);
  ASSERT_EQ(pending.size(), 5u);
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(pending[i].frame_idx, i + 1);
    EXPECT_EQ(pending[i].boxes.size(), 2u);
    EXPECT_EQ(s.frame_state(i + 1), FrameState::pending);
    EXPECT_LE(std::abs(pending[i].boxes[0].x - fx.truth[i + 1].first), 2);
    EXPECT_LE(std::abs(pending[i].boxes[0].y - fx.truth[i + 1].second), 2);
  }
  EXPECT_EQ(s.pending().size(), 5u);
  EXPECT_TRUE(fx.store.labels("v1").seed_frames.contains(0));
  // Propagation stops at the last frame.
  EXPECT_EQ(s.propagate(100).size(), 24u);
  EXPECT_EQ(s.propagate(3).size(), 0u);
}

TEST(Session, ReviewStateMachine) {
  Fixture fx(12);
  auto s = fx.session();
  s.set_seed(0, {fx.box(0)});
  s.propagate(6);
  EXPECT_EQ(s.review(1, Verdict::approve), FrameState::approved);
  EXPECT_EQ(s.entry(1).provenance, Provenance::tracked_approved);
  EXPECT_THROW(s.review(1, Verdict::approve), StateError);

  // Rejecting frame 3 clears it and the rest of the pending run.
  EXPECT_EQ(s.review(3, Verdict::reject), FrameState::unvisited);
  for (int i = 3; i <= 6; ++i) EXPECT_EQ(s.frame_state(i), FrameState::unvisited) << i;
  EXPECT_EQ(s.frame_state(2), FrameState::pending);
  EXPECT_FALSE(s.has_trackers(Direction::forward));
  EXPECT_THROW(s.propagate(1), StateError);

  // Reseeding restarts tracking from the corrected frame.
  s.set_seed(3, {fx.box(3)});
  EXPECT_EQ(s.frame_state(2), FrameState::unvisited);  // reseeding drops stale pending frames
  EXPECT_EQ(s.propagate(2).size(), 2u);
  // Backward from 3: frame 2 becomes pending, approved frame 1 keeps its state.
  const auto back = s.propagate(2, Direction::backward);
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].frame_idx, 2);
  EXPECT_EQ(s.frame_state(1), FrameState::approved);

  EXPECT_EQ(s.review(7, Verdict::negative), FrameState::negative);
  EXPECT_EQ(s.review(8, Verdict::discard), FrameState::discarded);
  const auto labels = fx.store.labels("v1");
  EXPECT_EQ(labels.frames.at(7).status, FrameStatus::negative);
  EXPECT_EQ(labels.frames.at(8).status, FrameStatus::discarded);

  EXPECT_THROW(s.refine_and_commit(4, quick_params(), BinaryMask(128, 128)), StateError);
  EXPECT_THROW((void)s.fused_mask(7), StateError);
  EXPECT_THROW(s.review(99, Verdict::negative), NotFoundError);

  s.flag(2);
  EXPECT_TRUE(s.entry(2).flagged);
}

TEST(Session, CommitWritesGroundTruthWithProvenance) {
  Fixture fx(6);
  auto s = fx.session();
  s.set_seed(0, {fx.box(0)});
  s.propagate(2);
  s.review(1, Verdict::approve);
  const auto proposals = s.proposals(1, {quick_params()});
  ASSERT_EQ(proposals.size(), 1u);
  EXPECT_EQ(proposals[0].mask, s.refine(1, quick_params()));
  s.refine_and_commit(1, quick_params(), proposals[0].mask);
  EXPECT_EQ(s.frame_state(1), FrameState::committed);
  EXPECT_EQ(fx.store.read_ground_truth("v1", 1), proposals[0].mask);
  const auto l = fx.store.labels("v1").frames.at(1);
  EXPECT_EQ(l.provenance, Provenance::tracked_approved);
  EXPECT_EQ(l.gac_params, quick_params());
  s.refine_and_commit(0, quick_params(), s.refine(0, quick_params()));
  EXPECT_EQ(fx.store.labels("v1").frames.at(0).provenance, Provenance::seed);
}

TEST(Session, SessionHoldsVideoLock) {
  Fixture fx(3);
  auto s = fx.session();
  EXPECT_THROW(fx.session(), LockError);
}

TEST(Session, ReplayReproducesState) {
  Fixture fx(10);
  annotation::SessionState live;
  BinaryMask committed;
  {
    auto s = fx.session();
    s.set_seed(0, {fx.box(0)});
    s.propagate(4);
    s.review(1, Verdict::approve);
    s.review(3, Verdict::reject);
    s.review(5, Verdict::negative);
    (void)s.proposals(1, {quick_params()});
    committed = s.refine(1, quick_params());
    s.refine_and_commit(1, quick_params(), committed);
    live = s.state();
  }
  const auto events = annotation::read_event_log(fx.store.session_log_path("v1"));
  EXPECT_EQ(events.size(), 7u);

  TempDir other;
  DatasetStore fresh(other / "data");
  fresh.ingest_video(fx.dir / "src-v1", testsupport::video_meta("v1"));
  const auto replayed = annotation::replay_session(fresh, "v1", events);
  EXPECT_EQ(replayed, live);
  EXPECT_EQ(fresh.read_ground_truth("v1", 1), committed);

  // A tampered mask is detected.
  auto bad = events;
  for (auto& e : bad)
    if (e.op == "commit") e.payload["mask"] = rle::encode(BinaryMask(128, 128));
  TempDir third;
  DatasetStore again(third / "data");
  again.ingest_video(fx.dir / "src-v1", testsupport::video_meta("v1"));
  EXPECT_THROW(annotation::replay_session(again, "v1", bad), ReplayError);
}

// ---------------------------------------------------------------------------
// HTTP service (transport-free)

namespace {

api::Response call(api::ApiService& svc, const std::string& method, const std::string& path, const json& body = {}) {
  return svc.handle({method, path, body.is_null() ? std::string() : body.dump()});
}

}  // namespace

TEST(Api, AnnotationFlow) {
  Fixture fx(8);
  api::ApiService svc(fx.store, {});
  auto r = call(svc, "GET", "/videos");
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(json::parse(r.body).size(), 1u);
  EXPECT_EQ(call(svc, "GET", "/videos/v1").status, 200);
  r = call(svc, "GET", "/videos/v1/frames/0");
  EXPECT_EQ(r.status, 200);
  EXPECT_EQ(r.content_type, "image/png");
  EXPECT_EQ(r.body.substr(1, 3), "PNG");

  r = call(svc, "POST", "/videos/v1/session");
  ASSERT_EQ(r.status, 201);
  const std::string sid = json::parse(r.body).at("session");
  const std::string base = "/sessions/" + sid;
  EXPECT_EQ(call(svc, "POST", "/videos/v1/session").status, 409);  // video already locked

  EXPECT_EQ(call(svc, "POST", base + "/seed", {{"frame", 0}, {"boxes", {fx.box(0)}}}).status, 200);
  r = call(svc, "POST", base + "/propagate", {{"count", 3}});
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(json::parse(r.body).size(), 3u);
  EXPECT_EQ(json::parse(call(svc, "GET", base + "/pending").body).size(), 3u);

  r = call(svc, "POST", base + "/frames/1/verdict", {{"verdict", "approve"}});
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(json::parse(r.body).at("state"), "approved");
  EXPECT_EQ(call(svc, "POST", base + "/frames/1/verdict", {{"verdict", "approve"}}).status, 409);
  EXPECT_EQ(call(svc, "POST", base + "/frames/2/verdict", {{"verdict", "maybe"}}).status, 400);

  r = call(svc, "POST", base + "/frames/1/proposals", {{"grid", {quick_params()}}});
  ASSERT_EQ(r.status, 200);
  const json props = json::parse(r.body);
  ASSERT_EQ(props.size(), 1u);
  r = call(svc, "POST", base + "/frames/1/commit", {{"params", props[0]["params"]}, {"mask", props[0]["mask"]}});
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(json::parse(r.body).at("state"), "committed");

  r = call(svc, "GET", "/videos/v1/ground_truth/1");
  ASSERT_EQ(r.status, 200);
  const json gt = json::parse(r.body);
  EXPECT_EQ(rle::decode(gt.at("mask").get<rle::RlePayload>()), fx.store.read_ground_truth("v1", 1));
  EXPECT_EQ(call(svc, "GET", "/videos/v1/ground_truth/5").status, 404);

  r = call(svc, "POST", base + "/propagate", json::object());  // default batch runs to the last frame
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(json::parse(r.body).size(), 4u);

  EXPECT_EQ(call(svc, "DELETE", base).status, 200);
  EXPECT_EQ(call(svc, "GET", base).status, 404);
  EXPECT_EQ(call(svc, "POST", "/videos/v1/session").status, 201);  // lock released
}

TEST(Api, ErrorMapping) {
  Fixture fx(4);
  api::ApiOptions opts;
  opts.max_grid = 2;
  api::ApiService svc(fx.store, opts);
  EXPECT_EQ(call(svc, "GET", "/nothing").status, 404);
  EXPECT_EQ(call(svc, "GET", "/videos/zzz").status, 404);
  EXPECT_EQ(call(svc, "GET", "/videos/v1/frames/99").status, 404);
  EXPECT_EQ(call(svc, "GET", "/sessions/nope").status, 404);
  const std::string sid = json::parse(call(svc, "POST", "/videos/v1/session").body).at("session");
  const std::string base = "/sessions/" + sid;
  EXPECT_EQ(svc.handle({"POST", base + "/seed", "{not json"}).status, 400);
  EXPECT_EQ(call(svc, "POST", base + "/seed", {{"frame", 0}}).status, 400);
  EXPECT_EQ(call(svc, "POST", base + "/seed", {{"frame", 0}, {"boxes", json::array()}}).status, 400);
  EXPECT_EQ(call(svc, "POST", base + "/propagate", {{"count", 1}}).status, 409);  // no trackers yet
  call(svc, "POST", base + "/seed", {{"frame", 0}, {"boxes", {fx.box(0)}}});
  const json grid = {quick_params(), quick_params(), quick_params()};
  EXPECT_EQ(call(svc, "POST", base + "/frames/0/proposals", {{"grid", grid}}).status, 400);
  EXPECT_EQ(call(svc, "POST", base + "/frames/0/proposals", json::object()).status, 400);  // default grid > cap
  EXPECT_EQ(call(svc, "POST", base + "/frames/2/proposals", {{"grid", {quick_params()}}}).status, 409);
}

TEST(Api, ProposalBudgetExceededIsUnavailable) {
  Fixture fx(2);
  api::ApiOptions opts;
  opts.proposal_budget = std::chrono::milliseconds(-1000);
  api::ApiService svc(fx.store, opts);
  const std::string sid = json::parse(call(svc, "POST", "/videos/v1/session").body).at("session");
  call(svc, "POST", "/sessions/" + sid + "/seed", {{"frame", 0}, {"boxes", {fx.box(0)}}});
  EXPECT_EQ(call(svc, "POST", "/sessions/" + sid + "/frames/0/proposals", json::object()).status, 503);
}

// ---------------------------------------------------------------------------
// Command line

namespace {

struct CliRun {
  int code;
  std::string out, err;
};

CliRun cli_run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, {out, err});
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) { return io::read_text(p); }

}  // namespace

TEST(Cli, UsageErrors) {
  EXPECT_EQ(cli_run({"--bogus"}).code, 2);
  EXPECT_EQ(cli_run({}).code, 2);
  EXPECT_EQ(cli_run({"--help"}).code, 0);
  EXPECT_EQ(cli_run({"evaluate", "--gt", "x"}).code, 2);
  EXPECT_EQ(cli_run({"track", "--dataset", "x", "--video", "v", "--frame", "0", "--box", "1,2,3"}).code, 2);
}

TEST(Cli, IngestStatsAndSplit) {
  TempDir dir;
  const std::string data = (dir / "data").string();
  std::vector<GrayImage> frames(3, GrayImage(64, 64, 0.5f));
  for (int i = 0; i < 12; ++i) {
    const fs::path src = dir / ("src" + std::to_string(i));
    fs::create_directories(src);
    for (int f = 0; f < 3; ++f) io::write_gray(src / io::frame_name(f), frames[f]);
    const json meta = testsupport::video_meta("v" + std::to_string(i), i % 3 ? "scbp" : "isc", i % 2 ? "right" : "left");
    io::write_text_atomic(dir / ("m" + std::to_string(i) + ".json"), meta.dump());
    ASSERT_EQ(cli_run({"ingest", "--dataset", data, "--source", src.string(), "--meta",
                       (dir / ("m" + std::to_string(i) + ".json")).string()})
                  .code,
              0);
  }
  EXPECT_EQ(cli_run({"ingest", "--dataset", data, "--source", (dir / "src0").string(), "--meta",
                     (dir / "m0.json").string()})
                .code,
            1);

  const auto stats = cli_run({"stats", "--dataset", data});
  ASSERT_EQ(stats.code, 0);
  EXPECT_EQ(json::parse(stats.out).at("total").at("videos"), 12);
  EXPECT_EQ(json::parse(stats.out).at("isc").at("videos"), 4);

  const std::string s1 = (dir / "s1.json").string(), s2 = (dir / "s2.json").string();
  ASSERT_EQ(cli_run({"split", "--dataset", data, "--out", s1, "--seed", "5"}).code, 0);
  ASSERT_EQ(cli_run({"--seed", "5", "split", "--dataset", data, "--out", s2}).code, 0);
  EXPECT_EQ(slurp(s1), slurp(s2));
  EXPECT_EQ(json::parse(slurp(s1)).at("folds").size(), 5u);
}

TEST(Cli, DatasetFromEnvironment) {
  Fixture fx(2);
  ::setenv("NERVETRACE_DATA", fx.store.root().c_str(), 1);
  const auto r = cli_run({"stats"});
  ::unsetenv("NERVETRACE_DATA");
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(json::parse(r.out).at("total").at("frames"), 2);
}

TEST(Cli, TrackAndRefine) {
  Fixture fx(6);
  const auto b = fx.box(0);
  const std::string box = std::to_string(b.x) + "," + std::to_string(b.y) + "," + std::to_string(b.w) + "," +
                          std::to_string(b.h);
  const std::string data = fx.store.root().string();
  const auto t = cli_run({"track", "--dataset", data, "--video", "v1", "--frame", "0", "--box", box, "--count", "4"});
  ASSERT_EQ(t.code, 0) << t.err;
  const json tj = json::parse(t.out);
  ASSERT_EQ(tj.at("frames").size(), 4u);
  EXPECT_LE(std::abs(tj["frames"][3]["boxes"][0]["x"].get<int>() - fx.truth[4].first), 2);

  const std::string mask = (fx.dir / "mask.png").string();
  const auto r = cli_run({"refine", "--dataset", data, "--video", "v1", "--frame", "0", "--box", box, "--iterations",
                          "8", "--out", mask, "--commit"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(io::read_mask(mask), fx.store.read_ground_truth("v1", 0));
  EXPECT_EQ(cli_run({"track", "--dataset", data, "--video", "zz", "--frame", "0", "--box", box}).code, 1);
}

TEST(Cli, AnnotateReplay) {
  Fixture fx(6);
  {
    auto s = fx.session();
    s.set_seed(0, {fx.box(0)});
    s.propagate(2);
    s.review(1, Verdict::approve);
    s.refine_and_commit(1, quick_params(), s.refine(1, quick_params()));
  }
  const BinaryMask expected = fx.store.read_ground_truth("v1", 1);
  TempDir other;
  DatasetStore fresh(other / "data");
  fresh.ingest_video(fx.dir / "src-v1", testsupport::video_meta("v1"));
  const auto r = cli_run({"annotate-replay", "--dataset", fresh.root().string(), "--video", "v1", "--log",
                          fx.store.session_log_path("v1").string(), "--out", (other / "state.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(fresh.read_ground_truth("v1", 1), expected);
  EXPECT_TRUE(fs::exists(other / "state.json"));
}

TEST(Cli, AugmentMaterialisesDataset) {
  Fixture fx(5);
  {
    const auto lock = fx.store.lock_video("v1");
    fx.store.write_ground_truth(lock, 0, testsupport::disk_mask({128, 128}, 64, 64, 20), quick_params());
    fx.store.set_frame_status(lock, 1, FrameStatus::negative);
    fx.store.set_frame_status(lock, 2, FrameStatus::discarded);
  }
  const std::string out = (fx.dir / "aug").string();
  const auto r = cli_run({"augment", "--dataset", fx.store.root().string(), "--out", out, "--seed", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  DatasetStore aug(out);
  ASSERT_TRUE(aug.has_video("v1"));
  for (int i = 0; i < 5; ++i) EXPECT_TRUE(fs::exists(aug.frame_path("v1", i)));
  const auto labels = aug.labels("v1");
  EXPECT_EQ(labels.frames.at(0).status, FrameStatus::positive);
  EXPECT_EQ(labels.frames.at(1).status, FrameStatus::negative);
  EXPECT_FALSE(labels.frames.contains(2));
  const json applied = json::parse(slurp(fs::path(out) / "applied.json"));
  EXPECT_EQ(applied.at("seed"), 3);
  EXPECT_EQ(applied.at("videos").at("v1").size(), 2u);
  const double gamma = applied["videos"]["v1"]["000000.png"]["gamma"];
  EXPECT_GE(gamma, 0.75);
  EXPECT_LE(gamma, 1.33);
  // Unlabelled frames pass through untouched.
  EXPECT_EQ(slurp(aug.frame_path("v1", 4)), slurp(fx.store.frame_path("v1", 4)));

  const std::string out2 = (fx.dir / "aug2").string();
  ASSERT_EQ(cli_run({"augment", "--dataset", fx.store.root().string(), "--out", out2, "--seed", "3"}).code, 0);
  EXPECT_EQ(slurp(fs::path(out2) / "applied.json"), slurp(fs::path(out) / "applied.json"));
  EXPECT_EQ(io::read_mask(aug.mask_path("v1", 0)), io::read_mask(DatasetStore(out2).mask_path("v1", 0)));
}

TEST(Cli, EvaluateWritesReportAndCurves) {
  Fixture fx(4);
  {
    const auto lock = fx.store.lock_video("v1");
    for (int i = 0; i < 3; ++i) fx.store.write_ground_truth(lock, i, testsupport::rect_mask({128, 128}, 30, 30, 40, 40), quick_params());
    fx.store.set_frame_status(lock, 3, FrameStatus::negative);
  }
  const fs::path pred = fx.dir / "pred";
  fs::create_directories(pred / "v1");
  for (int i = 0; i < 2; ++i) {
    io::write_mask(pred / "v1" / io::frame_name(i), fx.store.read_ground_truth("v1", i));
    Image<float> p(128, 128);
    const auto gt = fx.store.read_ground_truth("v1", i);
    for (int y = 0; y < 128; ++y)
      for (int x = 0; x < 128; ++x) p(x, y) = gt(x, y) ? 0.9f : 0.1f;
    io::write_probability(pred / "v1" / ("00000" + std::to_string(i) + ".prob.png"), p);
  }
  const fs::path report = fx.dir / "out" / "report.json";
  const auto r = cli_run({"evaluate", "--gt", fx.store.root().string(), "--pred", pred.string(), "--class", "scbp",
                          "--out", report.string(), "--min-area-scbp", "50"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("missing"), std::string::npos);
  const json j = json::parse(slurp(report));
  ASSERT_EQ(j.at("per_video").size(), 1u);
  EXPECT_EQ(j.at("config").at("min_area").at("scbp"), 50);
  EXPECT_TRUE(j.at("aggregate").contains("scbp"));
  EXPECT_TRUE(fs::exists(fx.dir / "out" / "report_pr_scbp_iou25.csv"));
  EXPECT_TRUE(fs::exists(fx.dir / "out" / "report_pr_scbp_iou50.csv"));

  EXPECT_EQ(cli_run({"evaluate", "--gt", fx.store.root().string(), "--pred", (fx.dir / "none").string(), "--out",
                     report.string()})
                .code,
            1);
  EXPECT_EQ(cli_run({"evaluate", "--gt", fx.store.root().string(), "--pred", pred.string(), "--class", "elbow",
                     "--out", report.string()})
                .code,
            2);
}
