#pragma once

#include <charconv>
#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "active_contour.hpp"
#include "annotation_engine.hpp"
#include "dataset_store.hpp"
#include "errors.hpp"
#include "io.hpp"
#include "rle.hpp"

namespace nervetrace::api {

using nlohmann::json;

struct Request {
  std::string method;
  std::string path;
  std::string body;
};

struct Response {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;

  static Response json_body(const json& j, int status = 200) { return {status, "application/json", j.dump()}; }
  static Response error(int status, const std::string& message) {
    return json_body(json{{"error", message}}, status);
  }
};

// Frames per propagate request when the body gives no count.
inline constexpr int kDefaultPropagateBatch = 10;

struct ApiOptions {
  int jobs = 1;
  std::chrono::milliseconds proposal_budget{10'000};
  std::size_t max_grid = 24;
  kcf::KcfParams tracker{};
};

// Transport-independent request handler. Each route maps onto one
// annotation_engine or dataset_store operation. Mutating session requests
// are serialized per session; a second one arriving while the first is in
// flight is refused with 409.
class ApiService {
 public:
  explicit ApiService(DatasetStore& store, ApiOptions options = {}) : store_(store), options_(std::move(options)) {}

  Response handle(const Request& req) {
    try {
      return route(req);
    } catch (const NotFoundError& e) {
      return Response::error(404, e.what());
    } catch (const LockError& e) {
      return Response::error(409, e.what());
    } catch (const StateError& e) {
      return Response::error(409, e.what());
    } catch (const TimeoutError& e) {
      return Response::error(503, e.what());
    } catch (const json::exception& e) {
      return Response::error(400, std::string("malformed body: ") + e.what());
    } catch (const Error& e) {
      return Response::error(400, e.what());
    } catch (const std::exception& e) {
      return Response::error(500, e.what());
    }
  }

  [[nodiscard]] std::size_t session_count() const {
    std::lock_guard lock(sessions_mutex_);
    return sessions_.size();
  }

 private:
  struct Slot {
    std::mutex mutex;
    std::unique_ptr<annotation::AnnotationSession> session;
  };

  using Segments = std::vector<std::string_view>;

  static Segments split_path(std::string_view path) {
    if (auto q = path.find('?'); q != std::string_view::npos) path = path.substr(0, q);
    Segments out;
    std::size_t pos = 0;
    while (pos < path.size()) {
      const auto next = path.find('/', pos);
      const auto end = next == std::string_view::npos ? path.size() : next;
      if (end > pos) out.push_back(path.substr(pos, end - pos));
      pos = end + 1;
    }
    return out;
  }

  static int parse_index(std::string_view s) {
    if (s.ends_with(".png")) s.remove_suffix(4);
    int v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) throw FormatError("bad frame index '" + std::string(s) + "'");
    return v;
  }

  static json parse_body(const Request& req) {
    if (req.body.empty()) return json::object();
    json j = json::parse(req.body);
    if (!j.is_object()) throw FormatError("request body must be a JSON object");
    return j;
  }

  Response route(const Request& req) {
    const Segments seg = split_path(req.path);
    const std::string& m = req.method;
    const auto n = seg.size();

    if (n >= 1 && seg[0] == "videos") {
      if (n == 1 && m == "GET") return Response::json_body(json(store_.videos()));
      const std::string id(n >= 2 ? seg[1] : std::string_view{});
      if (n == 2 && m == "GET") {
        return Response::json_body(json{{"video", store_.video(id)}, {"labels", store_.labels(id)}});
      }
      if (n == 4 && m == "GET" && seg[2] == "frames") return frame_png(id, parse_index(seg[3]));
      if (n == 4 && m == "GET" && seg[2] == "ground_truth") return ground_truth(id, parse_index(seg[3]));
      if (n == 3 && m == "POST" && seg[2] == "session") return open_session(id);
    }
    if (n >= 2 && seg[0] == "sessions") {
      const std::string sid(seg[1]);
      if (n == 2 && m == "GET") return with_session(sid, false, [](auto& s) { return Response::json_body(s.state()); });
      if (n == 2 && m == "DELETE") return close_session(sid);
      if (n == 3 && m == "GET" && seg[2] == "pending") {
        return with_session(sid, false, [](auto& s) { return Response::json_body(s.pending()); });
      }
      if (n == 3 && m == "POST" && seg[2] == "seed") {
        const json body = parse_body(req);
        return with_session(sid, true, [&](auto& s) {
          s.set_seed(body.at("frame").get<int>(), body.at("boxes").get<std::vector<BoundingBox>>());
          return Response::json_body(s.state());
        });
      }
      if (n == 3 && m == "POST" && seg[2] == "propagate") {
        const json body = parse_body(req);
        const auto dir = annotation::parse_direction(body.value("direction", std::string("forward")));
        return with_session(sid, true, [&](auto& s) {
          return Response::json_body(s.propagate(body.value("count", kDefaultPropagateBatch), dir));
        });
      }
      if (n == 5 && m == "POST" && seg[2] == "frames") {
        const int idx = parse_index(seg[3]);
        const json body = parse_body(req);
        if (seg[4] == "verdict") {
          const auto verdict = annotation::parse_verdict(body.at("verdict").get<std::string>());
          return with_session(sid, true, [&](auto& s) {
            const auto st = s.review(idx, verdict);
            return Response::json_body(json{{"frame", idx}, {"state", annotation::state_name(st)}});
          });
        }
        if (seg[4] == "proposals") return proposals(sid, idx, body);
        if (seg[4] == "commit") {
          const auto params = body.at("params").get<gac::GacParams>();
          const BinaryMask mask = rle::decode(body.at("mask").get<rle::RlePayload>());
          return with_session(sid, true, [&](auto& s) {
            s.refine_and_commit(idx, params, mask);
            return Response::json_body(json{{"frame", idx}, {"state", annotation::state_name(s.frame_state(idx))}});
          });
        }
      }
    }
    return Response::error(404, "no route for " + m + " " + req.path);
  }

  Response frame_png(const std::string& id, int idx) {
    const auto& rec = store_.video(id);
    if (idx < 0 || idx >= rec.n_frames) throw NotFoundError("frame " + std::to_string(idx) + " not found");
    const auto bytes = io::read_bytes(store_.frame_path(id, idx));
    return {200, "image/png", std::string(bytes.begin(), bytes.end())};
  }

  Response ground_truth(const std::string& id, int idx) {
    (void)store_.video(id);
    const auto labels = store_.labels(id);
    auto it = labels.frames.find(idx);
    if (it == labels.frames.end()) throw NotFoundError("frame " + std::to_string(idx) + " has no label");
    json out = it->second;
    if (it->second.status == FrameStatus::positive) out["mask"] = rle::encode(store_.read_ground_truth(id, idx));
    return Response::json_body(out);
  }

  Response open_session(const std::string& id) {
    (void)store_.video(id);
    auto slot = std::make_shared<Slot>();
    annotation::SessionOptions opts;
    opts.jobs = options_.jobs;
    slot->session = std::make_unique<annotation::AnnotationSession>(store_, id, annotation::kcf_factory(options_.tracker), opts);
    std::string sid;
    {
      std::lock_guard lock(sessions_mutex_);
      sid = id + "-" + std::to_string(++next_session_);
      sessions_.emplace(sid, slot);
    }
    return Response::json_body(json{{"session", sid}, {"state", slot->session->state()}}, 201);
  }

  Response close_session(const std::string& sid) {
    std::shared_ptr<Slot> slot;
    {
      std::lock_guard lock(sessions_mutex_);
      auto it = sessions_.find(sid);
      if (it == sessions_.end()) throw NotFoundError("session '" + sid + "' not found");
      slot = it->second;
      sessions_.erase(it);
    }
    // Wait for an in-flight request before releasing the video lock.
    std::lock_guard busy(slot->mutex);
    slot->session.reset();
    return Response::json_body(json{{"closed", sid}});
  }

  Response proposals(const std::string& sid, int idx, const json& body) {
    std::vector<gac::GacParams> grid;
    if (body.contains("grid")) grid = body.at("grid").get<std::vector<gac::GacParams>>();
    if (grid.empty()) grid = gac::default_proposal_grid();
    if (grid.size() > options_.max_grid) {
      throw ParamError("grid has " + std::to_string(grid.size()) + " entries; at most " +
                       std::to_string(options_.max_grid) + " allowed");
    }
    const auto deadline = std::chrono::steady_clock::now() + options_.proposal_budget;
    return with_session(sid, true, [&](auto& s) {
      json out = json::array();
      for (const auto& p : s.proposals(idx, grid, deadline)) out.push_back({{"params", p.params}, {"mask", rle::encode(p.mask)}});
      return Response::json_body(out);
    });
  }

  template <typename Fn>
  Response with_session(const std::string& sid, bool mutating, Fn&& fn) {
    std::shared_ptr<Slot> slot;
    {
      std::lock_guard lock(sessions_mutex_);
      auto it = sessions_.find(sid);
      if (it == sessions_.end()) throw NotFoundError("session '" + sid + "' not found");
      slot = it->second;
    }
    std::unique_lock lock(slot->mutex, std::defer_lock);
    if (mutating) {
      if (!lock.try_lock()) return Response::error(409, "session busy with another request; retry");
    } else {
      lock.lock();
    }
    if (!slot->session) throw NotFoundError("session '" + sid + "' closed");
    return fn(*slot->session);
  }

  DatasetStore& store_;
  ApiOptions options_;
  mutable std::mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Slot>> sessions_;
  std::uint64_t next_session_ = 0;
};

}  // namespace nervetrace::api
