#include <doctest.h>

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "tactile/errors.hpp"
#include "tactile/extract_env.hpp"
#include "tactile/log.hpp"
#include "tactile/service.hpp"

using namespace tactile;
using namespace tactile::service;
using nlohmann::json;
namespace fs = std::filesystem;

#ifndef TACTILE_GOLDEN_DIR
#define TACTILE_GOLDEN_DIR "tests/golden"
#endif

namespace {

struct QuietLog {
  log::Sink prev = log::set_sink([](log::Level, const std::string&) {});
  ~QuietLog() { log::set_sink(prev); }
};

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / "tactile_service_test" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

// Snapshot payloads carry floating-point scene state; the transcript keeps
// their integer and flag fields and the key set.
json normalize(json msg, const fs::path& demo_dir) {
  auto& p = msg["payload"];
  if (msg["type"] == "state_snapshot") {
    json keys = json::array();
    for (auto it = p.begin(); it != p.end(); ++it) keys.push_back(it.key());
    json world_keys = json::array();
    for (auto it = p["world"].begin(); it != p["world"].end(); ++it) world_keys.push_back(it.key());
    json kept{{"keys", keys},
              {"world_keys", world_keys},
              {"frame", p["frame"]},
              {"peg", p["peg"]},
              {"steps", p["steps"]},
              {"recording", p["recording"]},
              {"writer", p["writer"]},
              {"observation_width", p["observation"].size()}};
    if (!p["last_step"].is_null()) kept["last_kind"] = p["last_step"]["kind"];
    p = kept;
  }
  if (p.contains("path")) {
    const std::string s = p["path"].get<std::string>();
    p["path"] = "<demo_dir>/" + fs::path(s).filename().string();
    CHECK(fs::path(s).parent_path() == demo_dir);
  }
  if (p.contains("message")) p["message"] = "...";
  return msg;
}

}  // namespace

TEST_CASE("golden transcript of protocol version 1") {
  QuietLog quiet;
  const auto demo_dir = fresh_dir("golden");
  double now = 1.0;
  Hub hub({{}, demo_dir, [&] { return now; }, [] { return std::string("2026-01-01T00:00:00Z"); }});
  const int a = hub.connect();
  const int b = hub.connect();

  std::ostringstream transcript;
  auto record = [&](const std::string& label, const std::vector<Addressed>& out) {
    json msgs = json::array();
    for (const auto& m : out) msgs.push_back({{"to", m.to}, {"msg", normalize(json::parse(m.text), demo_dir)}});
    transcript << json{{"step", label}, {"out", msgs}}.dump() << '\n';
  };
  auto send = [&](const std::string& label, int from, const std::string& text) {
    record(label, hub.handle(from, text));
  };

  send("not json", a, "{oops");
  send("key before hello", a, R"({"type":"teleop_key","seq":1,"payload":{"key":"+z"}})");
  send("wrong version", a, R"({"type":"hello","seq":2,"payload":{"version":2}})");
  send("hello a", a, R"({"type":"hello","seq":3,"payload":{"version":1,"client":"test"}})");
  send("hello b", b, R"({"type":"hello","seq":1,"payload":{"version":1}})");
  send("key without session", a, R"({"type":"teleop_key","seq":4,"payload":{"key":"+z"}})");
  now = 2.0;
  send("record start", a, R"({"type":"record_start","seq":5,"payload":{"peg":"slanted","yaw_deg":45,"seed":3}})");
  send("reader key", b, R"({"type":"teleop_key","seq":2,"payload":{"key":"+z"}})");
  send("reader start", b, R"({"type":"record_start","seq":3,"payload":{}})");
  now = 2.01;
  send("key inside the rate window", a, R"({"type":"teleop_key","seq":6,"payload":{"key":"+z"}})");
  now = 2.02;
  record("poll too early", hub.poll());
  now = 2.05;
  record("poll due", hub.poll());
  record("poll idle", hub.poll());
  now = 3.0;
  send("bad key", a, R"({"type":"teleop_key","seq":7,"payload":{"key":"+q"}})");
  send("repeated seq", a, R"({"type":"teleop_key","seq":7,"payload":{"key":"+z"}})");
  send("unknown payload field", a, R"({"type":"teleop_key","seq":8,"payload":{"key":"+z","speed":2}})");
  send("unknown envelope field", a, R"({"type":"teleop_key","seq":9,"payload":{"key":"+z"},"v":1})");
  send("unknown type", a, R"({"type":"dance","seq":10})");
  now = 4.0;
  send("key", a, R"({"type":"teleop_key","seq":11,"payload":{"key":"-x"}})");
  now = 5.0;
  send("record stop", a, R"({"type":"record_stop","seq":12})");
  send("stop again", b, R"({"type":"record_stop","seq":4})");
  record("metrics", hub.metrics({{"experiment", "extract_dqn"}, {"episode", 0}, {"steps", 18}}));

  const fs::path golden = fs::path(TACTILE_GOLDEN_DIR) / "session_v1.jsonl";
  if (std::getenv("TACTILE_UPDATE_GOLDEN")) {
    std::ofstream(golden) << transcript.str();
  }
  std::ifstream in(golden);
  REQUIRE(in.good());
  std::stringstream expected;
  expected << in.rdbuf();
  const auto got_lines = transcript.str();
  std::istringstream g(got_lines), e(expected.str());
  std::string gl, el;
  int line = 0;
  while (std::getline(e, el)) {
    ++line;
    REQUIRE(std::getline(g, gl));
    INFO("transcript line " << line);
    CHECK(json::parse(gl) == json::parse(el));
  }
  CHECK_FALSE(std::getline(g, gl));

  const auto demos = extract::read_demo_file(demo_dir / "slanted_yaw45_0.jsonl");
  CHECK(demos.header.timestamp == "2026-01-01T00:00:00Z");
  REQUIRE(demos.records.size() == 2);
  CHECK(demos.records[0].action == static_cast<int>(extract::Action::PlusZ));
  CHECK(demos.records[1].action == static_cast<int>(extract::Action::MinusX));
}

TEST_CASE("server seq numbers increase without gaps") {
  QuietLog quiet;
  double now = 0.0;
  Hub hub({{}, fresh_dir("seq"), [&] { return now; }, {}});
  const int a = hub.connect();
  std::uint64_t expect = 1;
  auto check = [&](const std::vector<Addressed>& out) {
    for (const auto& m : out) CHECK(json::parse(m.text)["seq"].get<std::uint64_t>() == expect++);
  };
  check(hub.handle(a, R"({"type":"hello","seq":10,"payload":{"version":1}})"));
  check(hub.handle(a, R"({"type":"record_start","seq":11})"));
  for (int i = 0; i < 30; ++i) {
    now += 0.01;
    check(hub.handle(a, json{{"type", "teleop_key"}, {"seq", 12 + i}, {"payload", {{"key", "+z"}}}}.dump()));
    check(hub.poll());
  }
  check(hub.handle(a, R"({"type":"record_stop","seq":100})"));
  CHECK(expect > 10);
}

TEST_CASE("snapshots stay under the rate limit") {
  QuietLog quiet;
  double now = 0.0;
  extract::ExtractConfig long_episode;
  long_episode.max_steps = 1000;
  Hub hub({long_episode, fresh_dir("rate"), [&] { return now; }, {}});
  const int a = hub.connect();
  hub.handle(a, R"({"type":"hello","seq":1,"payload":{"version":1}})");
  hub.handle(a, R"({"type":"record_start","seq":2})");
  std::vector<double> sent;
  for (int i = 0; i < 200; ++i) {
    now = 1.0 + i * 0.005;  // keys at 200 Hz
    for (const auto& m : hub.handle(a, json{{"type", "teleop_key"}, {"seq", 3 + i}, {"payload", {{"key", i % 2 ? "+z" : "-z"}}}}.dump())) {
      if (json::parse(m.text)["type"] == "state_snapshot") sent.push_back(now);
    }
    for (const auto& m : hub.poll()) {
      if (json::parse(m.text)["type"] == "state_snapshot") sent.push_back(now);
    }
  }
  REQUIRE(sent.size() > 10);
  for (std::size_t i = 1; i < sent.size(); ++i) CHECK(sent[i] - sent[i - 1] >= 1.0 / 30.0 - 1e-12);
  // The last state is delivered once its window has passed.
  now += 1.0;
  const auto tail = hub.poll();
  REQUIRE(tail.size() == 1);
  CHECK(json::parse(tail[0].text)["payload"]["steps"] == 200);
}

TEST_CASE("snapshot is self-contained") {
  QuietLog quiet;
  Hub hub({{}, fresh_dir("snap"), {}, {}});
  const json s = hub.snapshot();
  for (const char* k : {"frame", "peg", "yaw_deg", "seed", "steps", "done", "rise", "goal_rise", "recording",
                        "writer", "last_step", "observation", "world"}) {
    CHECK(s.contains(k));
  }
  CHECK(s["observation"].size() == static_cast<std::size_t>(extract::kObservationWidth));
  CHECK(s["world"].contains("manipulator"));
  CHECK(s["world"].contains("modules"));
}

TEST_CASE("writer leaving mid-recording leaves a valid file") {
  QuietLog quiet;
  const auto dir = fresh_dir("leave");
  Hub hub({{}, dir, {}, {}});
  const int a = hub.connect();
  const int b = hub.connect();
  hub.handle(a, R"({"type":"hello","seq":1,"payload":{"version":1}})");
  hub.handle(b, R"({"type":"hello","seq":1,"payload":{"version":1}})");
  const auto started = hub.handle(a, R"({"type":"record_start","seq":2,"payload":{"peg":"curved"}})");
  const fs::path path = json::parse(started[0].text)["payload"]["path"].get<std::string>();
  hub.handle(a, R"({"type":"teleop_key","seq":3,"payload":{"key":"+z"}})");
  hub.handle(a, R"({"type":"teleop_key","seq":4,"payload":{"key":"+rotY"}})");
  // Every line is already on disk before the session ends.
  CHECK(extract::read_demo_file(path).records.size() == 2);
  hub.disconnect(a);
  CHECK_FALSE(hub.writer().has_value());
  CHECK(extract::read_demo_file(path).records.size() == 2);
  // The session is free for the other connection now.
  const auto out = hub.handle(b, R"({"type":"record_start","seq":2})");
  CHECK(json::parse(out[0].text)["type"] == "record_start");
}

namespace {

namespace beast = boost::beast;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

struct Client {
  net::io_context io;
  websocket::stream<tcp::socket> ws{io};
  std::uint64_t seq = 0;
  std::uint64_t last_in = 0;

  explicit Client(std::uint16_t port) {
    tcp::resolver r(io);
    net::connect(ws.next_layer(), r.resolve("127.0.0.1", std::to_string(port)));
    ws.handshake("127.0.0.1", "/");
  }
  void send(const std::string& type, const json& payload = json::object()) {
    ws.write(net::buffer(json{{"type", type}, {"seq", ++seq}, {"payload", payload}}.dump()));
  }
  json read() {
    beast::flat_buffer b;
    ws.read(b);
    json m = json::parse(beast::buffers_to_string(b.data()));
    CHECK(m["seq"].get<std::uint64_t>() > last_in);
    last_in = m["seq"];
    return m;
  }
  json read_until(const std::string& type) {
    for (;;) {
      json m = read();
      if (m["type"] == type) return m;
    }
  }
};

}  // namespace

TEST_CASE("websocket round trip") {
  QuietLog quiet;
  const auto dir = fresh_dir("ws");
  Hub hub({{}, dir, {}, {}});
  Server server(hub, 0);
  server.start();
  REQUIRE(server.port() != 0);

  Client a(server.port()), b(server.port());
  a.send("hello", {{"version", 1}});
  const json ack = a.read();
  CHECK(ack["type"] == "hello");
  CHECK(ack["payload"]["version"] == kProtocolVersion);
  CHECK(ack["payload"]["protocol"] == kProtocolName);
  CHECK(a.read()["type"] == "state_snapshot");
  b.send("hello", {{"version", 1}});
  b.read_until("state_snapshot");

  a.send("record_start", {{"peg", "vertical"}, {"yaw_deg", 90}, {"seed", 1}});
  const json started = a.read_until("record_start");
  const fs::path path = started["payload"]["path"].get<std::string>();
  CHECK(path.parent_path() == dir);

  b.send("teleop_key", {{"key", "+z"}});
  const json refused = b.read_until("error");
  CHECK(refused["payload"]["code"] == "ConcurrentWriter");

  a.send("teleop_key", {{"key", "+z"}});
  json snap;
  do {
    snap = b.read_until("state_snapshot");
  } while (snap["payload"]["steps"] != 1);
  CHECK(snap["payload"]["recording"] == true);

  server.publish_metrics({{"experiment", "grasp_ppo"}, {"episode", 3}});
  CHECK(b.read_until("metrics_update")["payload"]["episode"] == 3);

  a.send("record_stop");
  const json stopped = a.read_until("record_stop");
  CHECK(stopped["payload"]["path"] == path.string());
  CHECK(stopped["payload"]["records"] == 1);
  const auto f = extract::read_demo_file(path);
  CHECK(f.records.size() == 1);
  CHECK(f.header.yaw_deg == doctest::Approx(90.0));

  // Replaying the recording headlessly retraces the observations.
  extract::ExtractEnv env;
  auto obs = env.reset(f.header.peg, f.header.yaw_deg * kPi / 180.0, f.header.seed);
  CHECK(obs == f.records[0].observation);

  server.stop();
}
