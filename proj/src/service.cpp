#include "tactile/service.hpp"

#include <chrono>
#include <ctime>

#include "tactile/artifact.hpp"
#include "tactile/errors.hpp"
#include "tactile/json_fields.hpp"
#include "tactile/log.hpp"

namespace tactile::service {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

double steady_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

Hub::Hub(Options options) : options_(std::move(options)), env_(options_.env) {
  if (!options_.clock) options_.clock = steady_seconds;
  if (!options_.timestamp) options_.timestamp = utc_now;
  if (options_.demo_dir.empty()) options_.demo_dir = data_root() / "demos" / "live";
  env_.reset(sim::PegProfile::Vertical, 0.0, 0);
}

Hub::~Hub() {
  std::lock_guard lock(mu_);
  if (env_.recording()) env_.stop_recording();
}

int Hub::connect() {
  std::lock_guard lock(mu_);
  const int id = next_id_++;
  conns_[id] = Conn{};
  return id;
}

void Hub::disconnect(int id) {
  std::lock_guard lock(mu_);
  conns_.erase(id);
  if (writer_ == id) {
    if (env_.recording()) {
      const auto p = env_.stop_recording();
      log::info("writer " + std::to_string(id) + " left; closed " + p.string());
    }
    writer_.reset();
  }
}

std::optional<int> Hub::writer() const {
  std::lock_guard lock(mu_);
  return writer_;
}

json Hub::snapshot() const {
  std::lock_guard lock(mu_);
  return snapshot_locked();
}

json Hub::snapshot_locked() const {
  json last = nullptr;
  if (last_) {
    last = {{"reward", last_->reward},
            {"kind", extract::to_string(last_->kind)},
            {"done", last_->done},
            {"jammed", last_->jammed},
            {"workspace_limited", last_->workspace_limited}};
  }
  return {{"frame", frame_},
          {"peg", sim::to_string(env_.peg())},
          {"yaw_deg", env_.placement_yaw() * 180.0 / kPi},
          {"seed", env_.seed()},
          {"steps", env_.steps()},
          {"done", env_.done()},
          {"rise", env_.rise()},
          {"goal_rise", env_.config().goal_rise()},
          {"recording", env_.recording()},
          {"writer", writer_ ? json(*writer_) : json(nullptr)},
          {"last_step", last},
          {"observation", env_.observation()},
          {"world", sim::to_json(env_.world(), env_.config().world)}};
}

void Hub::stamp(std::vector<Addressed>& out, int id, const std::string& type, json payload) {
  Conn& c = conns_.at(id);
  const json msg{{"type", type}, {"seq", ++c.out_seq}, {"payload", std::move(payload)}};
  out.push_back({id, msg.dump()});
}

void Hub::error(std::vector<Addressed>& out, int id, const std::string& code, const std::string& message,
                std::optional<std::uint64_t> in_reply_to) {
  stamp(out, id, "error",
        {{"code", code}, {"message", message}, {"in_reply_to", in_reply_to ? json(*in_reply_to) : json(nullptr)}});
}

void Hub::broadcast_snapshot(std::vector<Addressed>& out, double now) {
  ++frame_;
  const json snap = snapshot_locked();
  for (auto& [id, c] : conns_) {
    if (!c.greeted) continue;
    if (now - c.last_snapshot >= 1.0 / kMaxSnapshotRate) {
      stamp(out, id, "state_snapshot", snap);
      c.last_snapshot = now;
      c.pending = false;
    } else {
      c.pending = true;
    }
  }
}

std::vector<Addressed> Hub::poll() {
  std::lock_guard lock(mu_);
  std::vector<Addressed> out;
  const double now = options_.clock();
  std::optional<json> snap;
  for (auto& [id, c] : conns_) {
    if (!c.pending || now - c.last_snapshot < 1.0 / kMaxSnapshotRate) continue;
    if (!snap) snap = snapshot_locked();
    stamp(out, id, "state_snapshot", *snap);
    c.last_snapshot = now;
    c.pending = false;
  }
  return out;
}

std::vector<Addressed> Hub::metrics(const json& event) {
  std::lock_guard lock(mu_);
  std::vector<Addressed> out;
  for (auto& [id, c] : conns_) {
    if (c.greeted) stamp(out, id, "metrics_update", event);
  }
  return out;
}

std::vector<Addressed> Hub::handle(int id, const std::string& text) {
  std::lock_guard lock(mu_);
  std::vector<Addressed> out;
  auto it = conns_.find(id);
  if (it == conns_.end()) throw InvalidArgument("unknown connection " + std::to_string(id));
  Conn& c = it->second;

  json msg;
  try {
    msg = json::parse(text);
  } catch (const json::exception&) {
    error(out, id, "ProtocolError", "message is not valid JSON", std::nullopt);
    return out;
  }
  if (!msg.is_object() || !msg.contains("type") || !msg["type"].is_string() || !msg.contains("seq") ||
      !msg["seq"].is_number_unsigned()) {
    error(out, id, "ProtocolError", "message needs a string type and an unsigned seq", std::nullopt);
    return out;
  }
  for (auto f = msg.begin(); f != msg.end(); ++f) {
    if (f.key() != "type" && f.key() != "seq" && f.key() != "payload") {
      error(out, id, "ProtocolError", "unknown envelope field '" + f.key() + "'", std::nullopt);
      return out;
    }
  }
  const auto seq = msg["seq"].get<std::uint64_t>();
  const json payload = msg.value("payload", json::object());
  if (!payload.is_object()) {
    error(out, id, "ProtocolError", "payload must be an object", seq);
    return out;
  }
  if (c.in_seq && seq <= *c.in_seq) {
    error(out, id, "ProtocolError", "seq must increase", seq);
    return out;
  }
  c.in_seq = seq;
  const std::string type = msg["type"].get<std::string>();
  if (!c.greeted && type != "hello") {
    error(out, id, "ProtocolError", "hello must come first", seq);
    return out;
  }
  try {
    dispatch(out, id, type, payload, seq, options_.clock());
  } catch (const Error& e) {
    error(out, id, e.kind(), e.what(), seq);
  }
  return out;
}

void Hub::dispatch(std::vector<Addressed>& out, int id, const std::string& type, const json& payload,
                   std::uint64_t seq, double now) {
  namespace jf = json_fields;
  auto fields = [&](std::initializer_list<const char*> known) {
    try {
      jf::reject_unknown(payload, known, type);
    } catch (const ConfigInvalid& e) {
      throw ProtocolError(e.what());
    }
  };
  auto claim = [&] {
    if (writer_ && *writer_ != id) {
      throw ConcurrentWriter("connection " + std::to_string(*writer_) + " holds the teleop session");
    }
  };

  if (type == "hello") {
    fields({"version", "client"});
    if (!payload.contains("version") || payload["version"] != kProtocolVersion) {
      throw ProtocolError("unsupported protocol version; server speaks " + std::to_string(kProtocolVersion));
    }
    Conn& c = conns_.at(id);
    c.greeted = true;
    stamp(out, id, "hello",
          {{"protocol", kProtocolName}, {"version", kProtocolVersion}, {"connection", id}, {"in_reply_to", seq}});
    stamp(out, id, "state_snapshot", snapshot_locked());
    c.last_snapshot = now;
    return;
  }
  if (type == "record_start") {
    fields({"peg", "yaw_deg", "seed"});
    claim();
    if (env_.recording()) throw SessionClosed("a recording session is already open");
    sim::PegProfile peg = sim::PegProfile::Vertical;
    double yaw = 0.0;
    std::uint64_t s = 0;
    try {
      peg = sim::peg_profile_from_string(payload.value("peg", std::string("vertical")));
      yaw = payload.value("yaw_deg", 0.0);
      s = payload.value("seed", std::uint64_t{0});
    } catch (const json::exception& e) {
      throw InvalidArgument(std::string("record_start payload: ") + e.what());
    }
    env_.reset(peg, yaw * kPi / 180.0, s);
    last_.reset();
    fs::create_directories(options_.demo_dir);
    fs::path path;
    do {
      path = options_.demo_dir /
             (sim::to_string(peg) + "_yaw" + fmt(yaw) + "_" + std::to_string(sessions_++) + ".jsonl");
    } while (fs::exists(path));
    env_.start_recording(path, options_.timestamp());
    writer_ = id;
    stamp(out, id, "record_start",
          {{"path", path.string()}, {"peg", sim::to_string(peg)}, {"yaw_deg", yaw}, {"seed", s}, {"in_reply_to", seq}});
    broadcast_snapshot(out, now);
    return;
  }
  if (type == "teleop_key") {
    fields({"key"});
    claim();
    if (!payload.contains("key") || !payload["key"].is_string()) throw InvalidArgument("teleop_key needs a key");
    if (!env_.recording()) throw SessionClosed("no recording session is open");
    last_ = env_.teleop_step(payload["key"].get<std::string>());
    broadcast_snapshot(out, now);
    return;
  }
  if (type == "record_stop") {
    fields({});
    claim();
    if (!env_.recording()) throw SessionClosed("no recording session is open");
    const fs::path path = env_.stop_recording();
    writer_.reset();
    const auto records = extract::read_demo_file(path).records.size();
    stamp(out, id, "record_stop", {{"path", path.string()}, {"records", records}, {"in_reply_to", seq}});
    broadcast_snapshot(out, now);
    return;
  }
  throw ProtocolError("unknown message type '" + type + "'");
}

}  // namespace tactile::service
