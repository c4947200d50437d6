#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <thread>
#include <vector>

#include "glasspipe/bus.hpp"

namespace glasspipe {

// Framing shared by server and client: 4-byte big-endian length prefix
// followed by a UTF-8 JSON document.
void write_frame(int fd, const json& j);
std::optional<json> read_frame(int fd);  // nullopt on orderly close

// Length-prefixed JSON-over-TCP binding for the broker. Request ops:
//   {"op":"publish", ...envelope fields}            -> {"op":"receipt",...}
//   {"op":"subscribe","pattern":..,"durable":..,
//    "ack_deadline_ms":..}                          -> {"op":"subscribed","sub_id":..}
//   {"op":"ack","sub_id":..,"msg_id":..}            -> {"op":"ok",...}
//   {"op":"nack","sub_id":..,"msg_id":..}           -> {"op":"ok",...}
//   {"op":"replay","topic":..,"from_seq":..}        -> {"op":"replay_result","messages":[..]}
// Deliveries are pushed to subscribed connections as
//   {"op":"deliver","sub_id":..,"redelivered":..., ...envelope fields}
// Errors come back as {"op":"error","error":"..."}.
class BusTcpServer {
 public:
  // port 0 binds an ephemeral port; read it back with port().
  BusTcpServer(Broker& broker, uint16_t port);
  ~BusTcpServer();

  void start();
  void stop();
  uint16_t port() const { return port_; }

 private:
  struct Connection {
    int fd = -1;
    std::vector<std::string> sub_ids;
    std::mutex write_mutex;
    std::thread reader;
  };

  void accept_loop();
  void reader_loop(std::shared_ptr<Connection> conn);
  void pump_loop();
  json handle_request(Connection& conn, const json& req);

  Broker* broker_;
  int listen_fd_ = -1;
  uint16_t port_ = 0;
  std::atomic<bool> running_{false};
  std::thread accept_thread_;
  std::thread pump_thread_;
  std::mutex conns_mutex_;
  std::vector<std::shared_ptr<Connection>> conns_;
};

// Blocking client for the wire protocol above. One in-flight request at a
// time; pushed deliveries land in an internal queue consumed via
// poll_delivery().
class BusTcpClient {
 public:
  BusTcpClient(const std::string& host, uint16_t port);
  ~BusTcpClient();

  Receipt publish(const Envelope& env);
  std::string subscribe(const Subscription& sub);
  void ack(const std::string& sub_id, const std::string& msg_id);
  void nack(const std::string& sub_id, const std::string& msg_id);
  std::vector<Envelope> replay(const std::string& topic, int64_t from_seq);

  std::optional<Delivery> poll_delivery(int timeout_ms);

  void close();

 private:
  json request(const json& req);
  void reader_loop();

  int fd_ = -1;
  std::thread reader_;
  std::mutex io_mutex_;

  std::mutex queue_mutex_;
  std::condition_variable queue_cv_;
  std::deque<json> responses_;
  std::deque<Delivery> deliveries_;
  bool closed_ = false;
};

}  // namespace glasspipe
