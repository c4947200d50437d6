#include "glasspipe/bus_tcp.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <cstring>

namespace glasspipe {

namespace {

int64_t wall_now_us() {
  return std::chrono::duration_cast<std::chrono::microseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

bool read_exact(int fd, void* buf, size_t len) {
  auto* p = static_cast<unsigned char*>(buf);
  size_t got = 0;
  while (got < len) {
    const ssize_t n = ::recv(fd, p + got, len - got, 0);
    if (n <= 0) return false;
    got += static_cast<size_t>(n);
  }
  return true;
}

void write_exact(int fd, const void* buf, size_t len) {
  const auto* p = static_cast<const unsigned char*>(buf);
  size_t sent = 0;
  while (sent < len) {
    const ssize_t n = ::send(fd, p + sent, len - sent, MSG_NOSIGNAL);
    if (n <= 0) throw IoError("socket write failed");
    sent += static_cast<size_t>(n);
  }
}

constexpr uint32_t kMaxFrameBytes = 8u << 20;

}  // namespace

void write_frame(int fd, const json& j) {
  const std::string body = j.dump();
  if (body.size() > kMaxFrameBytes) throw IoError("frame too large");
  unsigned char header[4];
  const uint32_t len = static_cast<uint32_t>(body.size());
  header[0] = static_cast<unsigned char>(len >> 24);
  header[1] = static_cast<unsigned char>(len >> 16);
  header[2] = static_cast<unsigned char>(len >> 8);
  header[3] = static_cast<unsigned char>(len);
  write_exact(fd, header, 4);
  write_exact(fd, body.data(), body.size());
}

std::optional<json> read_frame(int fd) {
  unsigned char header[4];
  if (!read_exact(fd, header, 4)) return std::nullopt;
  const uint32_t len = static_cast<uint32_t>(header[0]) << 24 |
                       static_cast<uint32_t>(header[1]) << 16 |
                       static_cast<uint32_t>(header[2]) << 8 | static_cast<uint32_t>(header[3]);
  if (len > kMaxFrameBytes) throw IoError("oversized frame");
  std::string body(len, '\0');
  if (!read_exact(fd, body.data(), len)) return std::nullopt;
  try {
    return json::parse(body);
  } catch (const json::parse_error& e) {
    throw IoError(std::string("malformed frame: ") + e.what());
  }
}

BusTcpServer::BusTcpServer(Broker& broker, uint16_t port) : broker_(&broker) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw IoError("cannot create listen socket");
  const int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);

  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(port);
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
    throw IoError("cannot bind port " + std::to_string(port));
  if (::listen(listen_fd_, 16) != 0) throw IoError("listen failed");

  socklen_t len = sizeof addr;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

BusTcpServer::~BusTcpServer() { stop(); }

void BusTcpServer::start() {
  running_ = true;
  accept_thread_ = std::thread([this] { accept_loop(); });
  pump_thread_ = std::thread([this] { pump_loop(); });
}

void BusTcpServer::stop() {
  if (!running_.exchange(false)) {
    if (listen_fd_ >= 0) ::close(listen_fd_), listen_fd_ = -1;
    return;
  }
  ::shutdown(listen_fd_, SHUT_RDWR);
  ::close(listen_fd_);
  listen_fd_ = -1;
  if (accept_thread_.joinable()) accept_thread_.join();
  if (pump_thread_.joinable()) pump_thread_.join();

  std::vector<std::shared_ptr<Connection>> conns;
  {
    std::lock_guard lock(conns_mutex_);
    conns.swap(conns_);
  }
  for (auto& c : conns) {
    ::shutdown(c->fd, SHUT_RDWR);
    if (c->reader.joinable()) c->reader.join();
    ::close(c->fd);
  }
}

void BusTcpServer::accept_loop() {
  while (running_) {
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (!running_) return;
      continue;
    }
    const int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    auto conn = std::make_shared<Connection>();
    conn->fd = fd;
    {
      std::lock_guard lock(conns_mutex_);
      conns_.push_back(conn);
    }
    conn->reader = std::thread([this, conn] { reader_loop(conn); });
  }
}

void BusTcpServer::reader_loop(std::shared_ptr<Connection> conn) {
  while (running_) {
    std::optional<json> req;
    try {
      req = read_frame(conn->fd);
    } catch (const std::exception&) {
      break;
    }
    if (!req) break;

    json resp;
    try {
      resp = handle_request(*conn, *req);
    } catch (const std::exception& e) {
      resp = {{"op", "error"}, {"error", e.what()}};
    }
    try {
      std::lock_guard lock(conn->write_mutex);
      write_frame(conn->fd, resp);
    } catch (const std::exception&) {
      break;
    }
  }
}

json BusTcpServer::handle_request(Connection& conn, const json& req) {
  const std::string op = req.value("op", "");
  if (op == "publish") {
    Envelope env = Envelope::from_json(req);
    if (env.ts_us == 0) env.ts_us = wall_now_us();
    const Receipt r = broker_->publish(std::move(env));
    return {{"op", "receipt"}, {"msg_id", r.msg_id}, {"topic", r.topic}, {"seq", r.seq}};
  }
  if (op == "subscribe") {
    Subscription sub;
    sub.pattern = req.at("pattern").get<std::string>();
    sub.durable = req.value("durable", false);
    sub.ack_deadline_ms = req.value("ack_deadline_ms", int64_t{30000});
    const std::string sub_id = broker_->subscribe(sub);
    {
      std::lock_guard lock(conns_mutex_);
      conn.sub_ids.push_back(sub_id);
    }
    return {{"op", "subscribed"}, {"sub_id", sub_id}};
  }
  if (op == "ack") {
    const bool known =
        broker_->ack(req.at("sub_id").get<std::string>(), req.at("msg_id").get<std::string>());
    return {{"op", "ok"}, {"known", known}};
  }
  if (op == "nack") {
    const bool known =
        broker_->nack(req.at("sub_id").get<std::string>(), req.at("msg_id").get<std::string>());
    return {{"op", "ok"}, {"known", known}};
  }
  if (op == "replay") {
    const auto msgs =
        broker_->replay(req.at("topic").get<std::string>(), req.value("from_seq", int64_t{0}));
    json arr = json::array();
    for (const auto& m : msgs) arr.push_back(m.to_json());
    return {{"op", "replay_result"}, {"messages", arr}};
  }
  return {{"op", "error"}, {"error", "unknown op: " + op}};
}

void BusTcpServer::pump_loop() {
  while (running_) {
    bool delivered_any = false;
    std::vector<std::shared_ptr<Connection>> conns;
    {
      std::lock_guard lock(conns_mutex_);
      conns = conns_;
    }
    const int64_t now = wall_now_us();
    for (auto& conn : conns) {
      std::vector<std::string> sub_ids;
      {
        std::lock_guard lock(conns_mutex_);
        sub_ids = conn->sub_ids;
      }
      for (const auto& sub_id : sub_ids) {
        while (auto d = broker_->next(sub_id, now)) {
          json frame = d->envelope.to_json();
          frame["op"] = "deliver";
          frame["sub_id"] = d->sub_id;
          frame["redelivered"] = d->redelivered;
          try {
            std::lock_guard lock(conn->write_mutex);
            write_frame(conn->fd, frame);
            delivered_any = true;
          } catch (const std::exception&) {
            break;
          }
        }
      }
    }
    if (!delivered_any)
      std::this_thread::sleep_for(std::chrono::milliseconds(2));
  }
}

BusTcpClient::BusTcpClient(const std::string& host, uint16_t port) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw IoError("cannot create socket");
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host == "localhost" ? "127.0.0.1" : host.c_str(), &addr.sin_addr) != 1)
    throw IoError("bad host address: " + host);
  if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
    throw IoError("cannot connect to " + host + ":" + std::to_string(port));
  const int one = 1;
  ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  reader_ = std::thread([this] { reader_loop(); });
}

BusTcpClient::~BusTcpClient() { close(); }

void BusTcpClient::close() {
  {
    std::lock_guard lock(queue_mutex_);
    if (closed_) return;
    closed_ = true;
  }
  ::shutdown(fd_, SHUT_RDWR);
  if (reader_.joinable()) reader_.join();
  ::close(fd_);
  queue_cv_.notify_all();
}

void BusTcpClient::reader_loop() {
  while (true) {
    std::optional<json> frame;
    try {
      frame = read_frame(fd_);
    } catch (const std::exception&) {
      frame = std::nullopt;
    }
    std::unique_lock lock(queue_mutex_);
    if (!frame) {
      closed_ = true;
      queue_cv_.notify_all();
      return;
    }
    if (frame->value("op", "") == "deliver") {
      Delivery d;
      d.envelope = Envelope::from_json(*frame);
      d.redelivered = frame->value("redelivered", false);
      d.sub_id = frame->value("sub_id", "");
      deliveries_.push_back(std::move(d));
    } else {
      responses_.push_back(std::move(*frame));
    }
    queue_cv_.notify_all();
  }
}

json BusTcpClient::request(const json& req) {
  std::lock_guard io_lock(io_mutex_);  // one in-flight request at a time
  write_frame(fd_, req);
  std::unique_lock lock(queue_mutex_);
  queue_cv_.wait(lock, [this] { return !responses_.empty() || closed_; });
  if (responses_.empty()) throw IoError("connection closed awaiting response");
  json resp = std::move(responses_.front());
  responses_.pop_front();
  if (resp.value("op", "") == "error")
    throw IoError("bus error: " + resp.value("error", "unknown"));
  return resp;
}

Receipt BusTcpClient::publish(const Envelope& env) {
  json req = env.to_json();
  req["op"] = "publish";
  const json resp = request(req);
  return {resp.at("msg_id").get<std::string>(), resp.at("topic").get<std::string>(),
          resp.at("seq").get<int64_t>()};
}

std::string BusTcpClient::subscribe(const Subscription& sub) {
  const json resp = request({{"op", "subscribe"},
                             {"pattern", sub.pattern},
                             {"durable", sub.durable},
                             {"ack_deadline_ms", sub.ack_deadline_ms}});
  return resp.at("sub_id").get<std::string>();
}

void BusTcpClient::ack(const std::string& sub_id, const std::string& msg_id) {
  request({{"op", "ack"}, {"sub_id", sub_id}, {"msg_id", msg_id}});
}

void BusTcpClient::nack(const std::string& sub_id, const std::string& msg_id) {
  request({{"op", "nack"}, {"sub_id", sub_id}, {"msg_id", msg_id}});
}

std::vector<Envelope> BusTcpClient::replay(const std::string& topic, int64_t from_seq) {
  const json resp = request({{"op", "replay"}, {"topic", topic}, {"from_seq", from_seq}});
  std::vector<Envelope> out;
  for (const auto& m : resp.at("messages")) out.push_back(Envelope::from_json(m));
  return out;
}

std::optional<Delivery> BusTcpClient::poll_delivery(int timeout_ms) {
  std::unique_lock lock(queue_mutex_);
  queue_cv_.wait_for(lock, std::chrono::milliseconds(timeout_ms),
                     [this] { return !deliveries_.empty() || closed_; });
  if (deliveries_.empty()) return std::nullopt;
  Delivery d = std::move(deliveries_.front());
  deliveries_.pop_front();
  return d;
}

}  // namespace glasspipe
