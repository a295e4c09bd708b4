#ifndef SPECTREE_GATEWAY_HPP
#define SPECTREE_GATEWAY_HPP

#include <atomic>
#include <deque>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "engine.hpp"
#include "pick.hpp"
#include "protocol.hpp"

namespace spectree {

struct GatewayOptions {
  std::string host = "127.0.0.1";
  unsigned short port = 8080;  // 0 picks a free port
  bool simulate = true;        // run the session's real-time loop
  std::chrono::milliseconds poll{4};
};

namespace gateway_detail {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;

// State shared by all connections. Only the io thread touches the encoded
// frame cache, but the lock keeps metrics readers honest.
struct Hub {
  Hub(InteractiveSession& s, std::shared_ptr<const std::string> snap, std::chrono::milliseconds every)
      : session(s), snapshot(std::move(snap)), poll(every) {}

  InteractiveSession& session;
  std::shared_ptr<const std::string> snapshot;
  std::chrono::milliseconds poll;
  std::atomic<std::size_t> clients{0};
  std::atomic<std::uint64_t> dropped_clients{0};

  std::mutex cache_mutex;
  std::int64_t cached_index = -1;
  std::shared_ptr<const std::string> cached_bytes;

  // Latest frame, encoded once and shared by every client.
  std::pair<std::int64_t, std::shared_ptr<const std::string>> latest_frame() {
    auto frame = session.frames().latest();
    std::lock_guard lock(cache_mutex);
    if (!frame) return {cached_index, cached_bytes};
    if (static_cast<std::int64_t>(frame->index) != cached_index) {
      auto bytes = encode_frame(*frame, session.config().payload);
      cached_bytes = std::make_shared<const std::string>(bytes.begin(), bytes.end());
      cached_index = frame->index;
    }
    return {cached_index, cached_bytes};
  }
};

class WsSession : public std::enable_shared_from_this<WsSession> {
public:
  WsSession(tcp::socket&& socket, Hub& hub) : ws_(std::move(socket)), timer_(ws_.get_executor()), hub_(hub) {}

  template <class Body, class Allocator>
  void start(http::request<Body, http::basic_fields<Allocator>> req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) { self->on_accept(ec); });
  }

private:
  struct Outgoing {
    std::shared_ptr<const std::string> data;
    bool binary;
  };

  void on_accept(beast::error_code ec) {
    if (ec) return;
    hub_.clients.fetch_add(1);
    counted_ = true;
    do_read();
    tick();
  }

  void do_read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_read(ec); });
  }

  void on_read(beast::error_code ec) {
    if (ec) return finish();
    if (!ws_.got_text()) return reject("binary messages are not accepted");
    const std::string text = beast::buffers_to_string(buffer_.data());
    buffer_.consume(buffer_.size());
    try {
      handle(nlohmann::json::parse(text));
    } catch (const nlohmann::json::exception& e) {
      return reject(std::string("malformed message: ") + e.what());
    } catch (const Error& e) {
      return reject(e.what());
    }
    do_read();
  }

  void handle(const nlohmann::json& msg) {
    if (!msg.is_object() || !msg.contains("type") || !msg["type"].is_string()) fail_data("message needs a string 'type'");
    const auto type = msg["type"].get<std::string>();
    if (type == "hello") {
      const auto& s = hub_.session;
      send_text({{"type", "hello"},
                 {"protocol", kProtocolVersion},
                 {"payload", payload_name(s.config().payload)},
                 {"vertex_count", s.mesh().vertex_count()},
                 {"splat_count", s.cloud().size()},
                 {"dt", s.config().dt}});
    } else if (type == "snapshot") {
      enqueue({hub_.snapshot, false});
    } else if (type == "force") {
      const auto w = parse_force(msg);
      std::uint32_t voxel = 0;
      if (const auto* v = std::get_if<std::uint32_t>(&w.pick)) {
        voxel = *v;
        if (voxel >= hub_.session.bank().voxels) fail_data("voxel " + std::to_string(voxel) + " out of range");
      } else {
        auto hit = resolve_pick(std::get<Ray>(w.pick), hub_.session.mesh(), hub_.session.grid());
        if (!hit) return send_text({{"type", "miss"}});
        voxel = hit->voxel;
      }
      const double t = hub_.session.time();
      hub_.session.submit({voxel, w.force, w.duration});
      send_text({{"type", "ack"}, {"t", t}, {"voxel", voxel}});
    } else {
      fail_data("unknown message type '" + type + "'");
    }
  }

  void reject(const std::string& why) {
    closing_ = true;
    hub_.dropped_clients.fetch_add(1);
    send_text(error_message(why));
  }

  void send_text(const nlohmann::json& j) { enqueue({std::make_shared<const std::string>(j.dump()), false}); }

  void enqueue(Outgoing out) {
    queue_.push_back(std::move(out));
    if (!writing_) write_next();
  }

  void write_next() {
    if (queue_.empty()) {
      writing_ = false;
      if (closing_) close();
      return;
    }
    writing_ = true;
    ws_.binary(queue_.front().binary);
    ws_.async_write(net::buffer(*queue_.front().data),
                    [self = shared_from_this()](beast::error_code ec, std::size_t) {
                      if (ec) return self->finish();
                      self->queue_.pop_front();
                      self->write_next();
                    });
  }

  // Frames go out only when the connection is idle, so a slow reader skips
  // frames instead of queueing them.
  void tick() {
    if (done_ || closing_) return;
    if (!writing_ && queue_.empty()) {
      auto [index, bytes] = hub_.latest_frame();
      if (bytes && index > last_sent_) {
        last_sent_ = index;
        enqueue({bytes, true});
      }
    }
    timer_.expires_after(hub_.poll);
    timer_.async_wait([self = shared_from_this()](beast::error_code ec) {
      if (!ec) self->tick();
    });
  }

  void close() {
    ws_.async_close(websocket::close_code::policy_error,
                    [self = shared_from_this()](beast::error_code) { self->finish(); });
  }

  void finish() {
    if (done_) return;
    done_ = true;
    timer_.cancel();
    if (counted_) hub_.clients.fetch_sub(1);
  }

  websocket::stream<beast::tcp_stream> ws_;
  net::steady_timer timer_;
  beast::flat_buffer buffer_;
  Hub& hub_;
  std::deque<Outgoing> queue_;
  std::int64_t last_sent_ = -1;
  bool writing_ = false;
  bool closing_ = false;
  bool done_ = false;
  bool counted_ = false;
};

class HttpSession : public std::enable_shared_from_this<HttpSession> {
public:
  HttpSession(tcp::socket&& socket, Hub& hub) : stream_(std::move(socket)), hub_(hub) {}

  void start() { do_read(); }

private:
  void do_read() {
    req_ = {};
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, req_,
                     [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_read(ec); });
  }

  void on_read(beast::error_code ec) {
    if (ec) return;
    if (websocket::is_upgrade(req_)) {
      stream_.expires_never();
      std::make_shared<WsSession>(stream_.release_socket(), hub_)->start(std::move(req_));
      return;
    }
    auto res = std::make_shared<http::response<http::string_body>>(respond());
    http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code ec, std::size_t) {
      if (ec) return;
      if (res->need_eof()) {
        beast::error_code ignored;
        self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
        return;
      }
      self->do_read();
    });
  }

  http::response<http::string_body> respond() {
    http::response<http::string_body> res;
    res.version(req_.version());
    res.keep_alive(req_.keep_alive());
    res.set(http::field::access_control_allow_origin, "*");
    const std::string target(req_.target());
    const std::string path = target.substr(0, target.find('?'));
    auto body = [&](http::status status, std::string type, std::string text) {
      res.result(status);
      res.set(http::field::content_type, type);
      res.body() = std::move(text);
      res.prepare_payload();
    };
    if (req_.method() != http::verb::get) {
      body(http::status::method_not_allowed, "text/plain", "only GET is supported");
    } else if (path == "/health") {
      body(http::status::ok, "text/plain", "ok");
    } else if (path == "/snapshot") {
      body(http::status::ok, "application/json", *hub_.snapshot);
    } else if (path == "/metrics") {
      auto m = hub_.session.metrics();
      m["clients"] = hub_.clients.load();
      m["dropped_clients"] = hub_.dropped_clients.load();
      body(http::status::ok, "application/json", m.dump());
    } else {
      body(http::status::not_found, "text/plain", "not found");
    }
    return res;
  }

  beast::tcp_stream stream_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
  Hub& hub_;
};

}  // namespace gateway_detail

/// HTTP + WebSocket front end for one interactive session. All network I/O
/// runs on a single io thread; the session steps on its own thread.
class Gateway {
public:
  Gateway(InteractiveSession& session, GatewayOptions options)
      : options_(std::move(options)),
        hub_{session, std::make_shared<const std::string>(snapshot_json(session).dump()), options_.poll} {}
  ~Gateway() { stop(); }
  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  void start() {
    namespace net = gateway_detail::net;
    using gateway_detail::tcp;
    try {
      const tcp::endpoint ep(net::ip::make_address(options_.host), options_.port);
      acceptor_.open(ep.protocol());
      acceptor_.set_option(net::socket_base::reuse_address(true));
      acceptor_.bind(ep);
      acceptor_.listen(net::socket_base::max_listen_connections);
    } catch (const boost::system::system_error& e) {
      fail_runtime("cannot listen on " + options_.host + ":" + std::to_string(options_.port) + " (" + e.what() + ")");
    }
    port_ = acceptor_.local_endpoint().port();
    accept();
    io_thread_ = std::jthread([this] { ioc_.run(); });
    if (options_.simulate) sim_thread_ = std::jthread([this](std::stop_token st) { hub_.session.run(st); });
  }

  void stop() {
    if (sim_thread_.joinable()) {
      sim_thread_.request_stop();
      sim_thread_.join();
    }
    if (io_thread_.joinable()) {
      ioc_.stop();
      io_thread_.join();
    }
  }

  /// Blocks until stop() is called from another thread or the io loop ends.
  void wait() {
    if (io_thread_.joinable()) io_thread_.join();
  }

  unsigned short port() const { return port_; }
  std::size_t client_count() const { return hub_.clients.load(); }

private:
  void accept() {
    acceptor_.async_accept(gateway_detail::net::make_strand(ioc_),
                           [this](boost::beast::error_code ec, gateway_detail::tcp::socket socket) {
                             if (!ec) std::make_shared<gateway_detail::HttpSession>(std::move(socket), hub_)->start();
                             if (acceptor_.is_open()) accept();
                           });
  }

  GatewayOptions options_;
  gateway_detail::Hub hub_;
  gateway_detail::net::io_context ioc_{1};
  gateway_detail::tcp::acceptor acceptor_{ioc_};
  unsigned short port_ = 0;
  std::jthread io_thread_;
  std::jthread sim_thread_;
};

}  // namespace spectree

#endif  // SPECTREE_GATEWAY_HPP
