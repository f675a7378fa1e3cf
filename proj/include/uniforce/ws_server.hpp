#pragma once

#include <atomic>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "uniforce/teleop.hpp"

namespace uniforce {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;

inline constexpr const char* kBindEnv = "UNIFORCE_BIND";  // host:port

struct Endpoint {
  std::string host = "127.0.0.1";
  unsigned short port = 8765;
};

/// Parses "host:port", ":port" or "host".
inline Endpoint parse_endpoint(const std::string& s, Endpoint fallback = {}) {
  Endpoint e = fallback;
  if (s.empty()) return e;
  const auto colon = s.rfind(':');
  if (colon == std::string::npos) {
    e.host = s;
    return e;
  }
  if (colon > 0) e.host = s.substr(0, colon);
  const std::string port = s.substr(colon + 1);
  try {
    std::size_t used = 0;
    const unsigned long p = std::stoul(port, &used);
    if (used != port.size() || p > 65535) throw std::out_of_range("port");
    e.port = static_cast<unsigned short>(p);
  } catch (const std::exception&) {
    throw Error(ErrorCode::ConfigError, "invalid port in '" + s + "'");
  }
  return e;
}

inline Endpoint endpoint_from_env(Endpoint fallback = {}) {
  const char* v = std::getenv(kBindEnv);
  return v ? parse_endpoint(v, fallback) : fallback;
}

struct ServerOptions {
  Endpoint bind{};
  std::filesystem::path static_root;  // empty: no static files
  std::size_t max_pending_per_client = 64;
};

inline std::string mime_type(const std::filesystem::path& p) {
  const auto ext = p.extension().string();
  if (ext == ".html") return "text/html";
  if (ext == ".js" || ext == ".mjs") return "application/javascript";
  if (ext == ".css") return "text/css";
  if (ext == ".json") return "application/json";
  if (ext == ".svg") return "image/svg+xml";
  if (ext == ".png") return "image/png";
  return "application/octet-stream";
}

/// Network endpoint: WebSocket clients on any path, static files for other
/// GET requests. Runs its own io thread; talks to the control loop only
/// through the two queues.
class WsServer {
 public:
  WsServer(ServerOptions opts, InboxQueue& inbox, OutboxQueue& outbox)
      : opts_(std::move(opts)), inbox_(inbox), outbox_(outbox), acceptor_(ioc_), pump_(ioc_) {
    const auto addr = net::ip::make_address(opts_.bind.host);
    tcp::endpoint ep(addr, opts_.bind.port);
    acceptor_.open(ep.protocol());
    acceptor_.set_option(net::socket_base::reuse_address(true));
    acceptor_.bind(ep);
    acceptor_.listen();
  }

  ~WsServer() { stop(); }

  unsigned short port() const { return acceptor_.local_endpoint().port(); }

  void start() {
    accept();
    schedule_pump();
    thread_ = std::thread([this] { ioc_.run(); });
  }

  void stop() {
    if (stopped_.exchange(true)) return;
    ioc_.stop();
    if (thread_.joinable()) thread_.join();
  }

  std::size_t clients() const { return client_count_.load(); }

 private:
  class Session;

  void accept() {
    acceptor_.async_accept([this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;
      std::make_shared<HttpConnection>(this, std::move(socket))->read();
      accept();
    });
  }

  void schedule_pump() {
    pump_.expires_after(std::chrono::milliseconds(5));
    pump_.async_wait([this](beast::error_code ec) {
      if (ec) return;
      for (auto& out : outbox_.drain()) deliver(out);
      schedule_pump();
    });
  }

  void deliver(const Outbound& out) {
    const auto text = std::make_shared<const std::string>(encode(out.msg));
    const bool droppable = out.msg.type == ServerMessageType::StateUpdate;
    if (out.target == kBroadcast) {
      for (auto& [id, weak] : sessions_)
        if (auto s = weak.lock()) s->send(text, droppable);
    } else if (auto it = sessions_.find(out.target); it != sessions_.end()) {
      if (auto s = it->second.lock()) s->send(text, droppable);
    }
  }

  class Session : public std::enable_shared_from_this<Session> {
   public:
    Session(WsServer* server, tcp::socket socket, ClientId id)
        : server_(server), ws_(std::move(socket)), id_(id) {}

    template <class Request>
    void accept(Request req) {
      ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
      ws_.text(true);
      ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) {
        if (ec) return;
        self->server_->sessions_[self->id_] = self;
        ++self->server_->client_count_;
        self->server_->inbox_.push({Inbound::Kind::Connected, self->id_, {}});
        self->read();
      });
    }

    /// StateUpdates are dropped oldest-first when this client falls behind.
    void send(std::shared_ptr<const std::string> text, bool droppable) {
      if (closed_) return;
      if (droppable && queue_.size() >= server_->opts_.max_pending_per_client) {
        for (auto it = queue_.begin() + (writing_ ? 1 : 0); it != queue_.end(); ++it)
          if (it->second) {
            queue_.erase(it);
            break;
          }
        if (queue_.size() >= server_->opts_.max_pending_per_client) return;
      }
      queue_.emplace_back(std::move(text), droppable);
      if (!writing_) write();
    }

   private:
    void read() {
      ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
        if (ec) return self->close();
        self->server_->inbox_.push({Inbound::Kind::Text, self->id_, beast::buffers_to_string(self->buffer_.data())});
        self->buffer_.consume(self->buffer_.size());
        self->read();
      });
    }

    void write() {
      writing_ = true;
      ws_.async_write(net::buffer(*queue_.front().first), [self = shared_from_this()](beast::error_code ec, std::size_t) {
        self->queue_.pop_front();
        self->writing_ = false;
        if (ec) return self->close();
        if (!self->queue_.empty()) self->write();
      });
    }

    void close() {
      if (closed_) return;
      closed_ = true;
      server_->sessions_.erase(id_);
      --server_->client_count_;
      server_->inbox_.push({Inbound::Kind::Disconnected, id_, {}});
    }

    WsServer* server_;
    websocket::stream<beast::tcp_stream> ws_;
    ClientId id_;
    beast::flat_buffer buffer_;
    std::deque<std::pair<std::shared_ptr<const std::string>, bool>> queue_;
    bool writing_ = false;
    bool closed_ = false;
  };

  class HttpConnection : public std::enable_shared_from_this<HttpConnection> {
   public:
    HttpConnection(WsServer* server, tcp::socket socket) : server_(server), stream_(std::move(socket)) {}

    void read() {
      stream_.expires_after(std::chrono::seconds(30));
      http::async_read(stream_, buffer_, req_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
        if (ec) return;
        self->route();
      });
    }

   private:
    void route() {
      if (websocket::is_upgrade(req_)) {
        stream_.expires_never();
        const ClientId id = ++server_->next_id_;
        std::make_shared<Session>(server_, stream_.release_socket(), id)->accept(std::move(req_));
        return;
      }
      auto res = std::make_shared<http::response<http::string_body>>(serve_file());
      http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code, std::size_t) {
        beast::error_code ignored;
        self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
      });
    }

    http::response<http::string_body> serve_file() {
      http::response<http::string_body> res;
      res.version(req_.version());
      res.keep_alive(false);
      const auto& root = server_->opts_.static_root;
      std::string target(req_.target());
      if (const auto q = target.find('?'); q != std::string::npos) target.resize(q);
      if (req_.method() != http::verb::get || root.empty() || target.find("..") != std::string::npos) {
        res.result(http::status::not_found);
        res.body() = "not found\n";
        res.prepare_payload();
        return res;
      }
      if (target.empty() || target.back() == '/') target += "index.html";
      const auto path = root / target.substr(1);
      std::ifstream in(path, std::ios::binary);
      if (!in) {
        res.result(http::status::not_found);
        res.body() = "not found\n";
      } else {
        std::ostringstream os;
        os << in.rdbuf();
        res.result(http::status::ok);
        res.set(http::field::content_type, mime_type(path));
        res.body() = os.str();
      }
      res.prepare_payload();
      return res;
    }

    WsServer* server_;
    beast::tcp_stream stream_;
    beast::flat_buffer buffer_;
    http::request<http::string_body> req_;
  };

  ServerOptions opts_;
  InboxQueue& inbox_;
  OutboxQueue& outbox_;
  net::io_context ioc_;
  tcp::acceptor acceptor_;
  net::steady_timer pump_;
  std::thread thread_;
  std::atomic<bool> stopped_{false};
  std::atomic<std::size_t> client_count_{0};
  ClientId next_id_ = 0;
  std::map<ClientId, std::weak_ptr<Session>> sessions_;
};

/// Minimal synchronous client, used by tests and scripted sessions.
class WsClient {
 public:
  WsClient(const std::string& host, unsigned short port) : ws_(ioc_) {
    tcp::resolver resolver(ioc_);
    const auto results = resolver.resolve(host, std::to_string(port));
    net::connect(ws_.next_layer(), results.begin(), results.end());
    ws_.handshake(host + ":" + std::to_string(port), "/");
    ws_.text(true);
  }

  void send(const std::string& text) { ws_.write(net::buffer(text)); }
  void send(const ClientMessage& m) { send(encode(m)); }

  std::string receive() {
    beast::flat_buffer buf;
    ws_.read(buf);
    return beast::buffers_to_string(buf.data());
  }

  /// Reads until a message of the given type arrives.
  ServerMessage receive_until(ServerMessageType type) {
    for (;;) {
      ServerMessage m = decode_server_message(receive());
      if (m.type == type) return m;
    }
  }

  void close() {
    beast::error_code ec;
    ws_.close(websocket::close_code::normal, ec);
  }

 private:
  net::io_context ioc_;
  websocket::stream<tcp::socket> ws_;
};

}  // namespace uniforce
