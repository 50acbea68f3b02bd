#pragma once

// Live session endpoint for teleoperation and monitoring. The Hub holds the
// protocol state and is transport-free; Server carries it over WebSocket.
// The wire format is described in docs/protocol.md.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <json.hpp>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "tactile/extract_env.hpp"

namespace tactile::service {

inline constexpr int kProtocolVersion = 1;
inline constexpr const char* kProtocolName = "tactile-ws";
inline constexpr double kMaxSnapshotRate = 30.0;  // Hz, per connection

struct Addressed {
  int to = 0;        // connection id
  std::string text;  // serialized message
};

class Hub {
 public:
  using Clock = std::function<double()>;  // seconds, monotone

  struct Options {
    extract::ExtractConfig env{};
    std::filesystem::path demo_dir;
    Clock clock;                        // steady clock when empty
    std::function<std::string()> timestamp;  // header timestamps; UTC ISO-8601 when empty
  };

  explicit Hub(Options options);
  ~Hub();

  int connect();
  /// Releases the writer claim; an open recording is closed, leaving a valid file.
  void disconnect(int id);

  /// One inbound text frame. Replies and broadcasts, seq-stamped per connection.
  std::vector<Addressed> handle(int id, const std::string& text);
  /// Snapshots held back by the rate limit that are now due.
  std::vector<Addressed> poll();
  /// Broadcasts a training event to every greeted connection.
  std::vector<Addressed> metrics(const nlohmann::json& event);

  /// Self-contained scene state; renders without any earlier message.
  nlohmann::json snapshot() const;
  std::optional<int> writer() const;

 private:
  struct Conn {
    std::uint64_t out_seq = 0;
    std::optional<std::uint64_t> in_seq;
    bool greeted = false;
    double last_snapshot = -1e300;
    bool pending = false;
  };

  nlohmann::json snapshot_locked() const;
  void stamp(std::vector<Addressed>& out, int id, const std::string& type, nlohmann::json payload);
  void error(std::vector<Addressed>& out, int id, const std::string& code, const std::string& message,
             std::optional<std::uint64_t> in_reply_to);
  void broadcast_snapshot(std::vector<Addressed>& out, double now);
  void dispatch(std::vector<Addressed>& out, int id, const std::string& type, const nlohmann::json& payload,
                std::uint64_t seq, double now);

  Options options_;
  mutable std::mutex mu_;
  extract::ExtractEnv env_;
  std::map<int, Conn> conns_;
  int next_id_ = 1;
  std::optional<int> writer_;
  int sessions_ = 0;
  std::uint64_t frame_ = 0;
  std::optional<extract::ExtractStep> last_;
};

/// WebSocket transport: one thread per connection, one ticker thread for
/// held-back snapshots.
class Server {
 public:
  Server(Hub& hub, std::uint16_t port, const std::string& address = "127.0.0.1");
  ~Server();

  std::uint16_t port() const { return port_; }
  void start();
  void stop();
  /// Broadcast entry point for training callbacks on other threads.
  void publish_metrics(const nlohmann::json& event);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::uint16_t port_ = 0;
};

}  // namespace tactile::service
