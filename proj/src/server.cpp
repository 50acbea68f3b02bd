#include <sys/socket.h>

#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>
#include <list>

#include "tactile/errors.hpp"
#include "tactile/log.hpp"
#include "tactile/service.hpp"

namespace tactile::service {

namespace beast = boost::beast;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

struct Server::Impl {
  struct Peer {
    int id = 0;
    websocket::stream<tcp::socket> ws;
    std::mutex write_mu;
    std::thread reader;
    std::atomic<bool> open{true};
    explicit Peer(tcp::socket s) : ws(std::move(s)) {}
  };

  Hub& hub;
  net::io_context io;
  tcp::acceptor acceptor{io};
  std::atomic<bool> running{false};
  std::thread accept_thread;
  std::thread ticker;
  std::mutex peers_mu;
  std::list<std::shared_ptr<Peer>> peers;

  explicit Impl(Hub& h) : hub(h) {}

  void send(const std::vector<Addressed>& out) {
    std::vector<std::pair<std::shared_ptr<Peer>, const std::string*>> jobs;
    {
      std::lock_guard lock(peers_mu);
      for (const auto& a : out) {
        for (const auto& p : peers) {
          if (p->id == a.to && p->open) jobs.emplace_back(p, &a.text);
        }
      }
    }
    for (auto& [p, text] : jobs) {
      std::lock_guard lock(p->write_mu);
      beast::error_code ec;
      p->ws.text(true);
      p->ws.write(net::buffer(*text), ec);
      if (ec) p->open = false;
    }
  }

  void serve(const std::shared_ptr<Peer>& p) {
    beast::error_code ec;
    p->ws.accept(ec);
    if (ec) {
      p->open = false;
      return;
    }
    p->id = hub.connect();
    while (running && p->open) {
      beast::flat_buffer buf;
      p->ws.read(buf, ec);
      if (ec) break;
      send(hub.handle(p->id, beast::buffers_to_string(buf.data())));
    }
    p->open = false;
    hub.disconnect(p->id);
  }

  void accept_loop() {
    while (running) {
      beast::error_code ec;
      tcp::socket s(io);
      acceptor.accept(s, ec);
      if (ec == net::error::would_block || ec == net::error::try_again) {
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
        continue;
      }
      if (ec) break;
      s.non_blocking(false, ec);
      auto peer = std::make_shared<Peer>(std::move(s));
      {
        std::lock_guard lock(peers_mu);
        peers.remove_if([](const std::shared_ptr<Peer>& q) {
          if (q->open) return false;
          if (q->reader.joinable()) q->reader.join();
          return true;
        });
        peers.push_back(peer);
      }
      peer->reader = std::thread([this, peer] { serve(peer); });
    }
  }
};

Server::Server(Hub& hub, std::uint16_t port, const std::string& address) : impl_(std::make_unique<Impl>(hub)) {
  const tcp::endpoint ep(net::ip::make_address(address), port);
  beast::error_code ec;
  impl_->acceptor.open(ep.protocol(), ec);
  if (!ec) impl_->acceptor.set_option(net::socket_base::reuse_address(true), ec);
  if (!ec) impl_->acceptor.bind(ep, ec);
  if (!ec) impl_->acceptor.listen(net::socket_base::max_listen_connections, ec);
  if (ec) throw EnvFailure("cannot listen on " + address + ":" + std::to_string(port) + ": " + ec.message());
  impl_->acceptor.non_blocking(true);
  port_ = impl_->acceptor.local_endpoint().port();
}

Server::~Server() { stop(); }

void Server::start() {
  if (impl_->running.exchange(true)) return;
  impl_->accept_thread = std::thread([this] { impl_->accept_loop(); });
  impl_->ticker = std::thread([this] {
    while (impl_->running) {
      std::this_thread::sleep_for(std::chrono::duration<double>(1.0 / kMaxSnapshotRate));
      impl_->send(impl_->hub.poll());
    }
  });
  log::info("serving " + std::string(kProtocolName) + " v" + std::to_string(kProtocolVersion) + " on port " +
            std::to_string(port_));
}

void Server::stop() {
  if (!impl_->running.exchange(false)) return;
  if (impl_->accept_thread.joinable()) impl_->accept_thread.join();
  if (impl_->ticker.joinable()) impl_->ticker.join();
  std::list<std::shared_ptr<Impl::Peer>> peers;
  {
    std::lock_guard lock(impl_->peers_mu);
    peers.swap(impl_->peers);
  }
  for (auto& p : peers) {
    // Unblocks the reader; the socket itself is closed by its owner.
    ::shutdown(p->ws.next_layer().native_handle(), SHUT_RDWR);
  }
  for (auto& p : peers) {
    if (p->reader.joinable()) p->reader.join();
  }
  beast::error_code ec;
  impl_->acceptor.close(ec);
}

void Server::publish_metrics(const nlohmann::json& event) { impl_->send(impl_->hub.metrics(event)); }

}  // namespace tactile::service
