#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "glasspipe/util.hpp"

namespace glasspipe {

// Routed, prioritized message. seq is per-topic and assigned by the broker;
// msg_id must be unique per broker lifetime (auto-assigned when empty).
struct Envelope {
  std::string msg_id;
  std::string topic;
  std::string command_type;
  std::string group;
  json payload;
  double priority_hint = 0.0;
  int64_t ts_us = 0;
  int64_t seq = -1;

  json to_json() const;
  static Envelope from_json(const json& j);
};

struct Receipt {
  std::string msg_id;
  std::string topic;
  int64_t seq = -1;
};

struct Subscription {
  std::string pattern;  // AMQP-style: '*' one segment, '#' zero or more
  bool durable = false;
  int64_t ack_deadline_ms = 30000;
};

struct Delivery {
  Envelope envelope;
  bool redelivered = false;
  std::string sub_id;
};

// Topics are dot-separated segments of [A-Za-z0-9_-]; wildcards are only
// legal in patterns.
bool topic_valid(std::string_view topic);
bool pattern_valid(std::string_view pattern);
bool topic_matches(std::string_view pattern, std::string_view topic);

struct BrokerOptions {
  std::filesystem::path data_dir;
  bool fsync_on_publish = true;
  size_t max_payload_bytes = 1 << 20;
};

struct BrokerStats {
  int64_t published = 0;
  int64_t delivered = 0;
  int64_t redeliveries = 0;
  int64_t acked = 0;
  int64_t unknown_acks = 0;
};

// Topic-routed broker with at-least-once delivery and a durable per-topic
// JSONL log. A publish receipt is returned only after the envelope has been
// appended (and optionally fsynced), so receipted messages survive restart.
//
// Delivery is pull-based and time-explicit: consumers call next(sub, now_us)
// and ack/nack by msg_id. Per subscriber and topic, at most one message is
// in flight and messages are handed out in seq order, so an observer sees a
// non-decreasing seq sequence (duplicates possible, reordering not).
// next() copies the envelope out under the lock and returns; no consumer
// code ever runs while broker-internal locks are held.
class Broker {
 public:
  explicit Broker(BrokerOptions opts);
  ~Broker();
  Broker(const Broker&) = delete;
  Broker& operator=(const Broker&) = delete;

  Receipt publish(Envelope env);

  std::string subscribe(const Subscription& sub);
  void unsubscribe(const std::string& sub_id);

  // Next deliverable message for this subscriber: expired in-flight
  // messages first (flagged redelivered), then fresh ones, ordered by
  // (ts_us, topic, seq). Returns nullopt when nothing is deliverable.
  std::optional<Delivery> next(const std::string& sub_id, int64_t now_us);

  // Idempotent: acking an unknown or already-acked msg_id is a counted
  // no-op returning false.
  bool ack(const std::string& sub_id, const std::string& msg_id);

  // Makes the message immediately redeliverable.
  bool nack(const std::string& sub_id, const std::string& msg_id);

  // Durable log suffix in seq order; unknown topic yields an empty stream.
  std::vector<Envelope> replay(const std::string& topic, int64_t from_seq) const;

  std::vector<std::string> topics() const;
  int64_t topic_size(const std::string& topic) const;
  BrokerStats stats() const;

 private:
  struct TopicState {
    std::vector<Envelope> log;
    int fd = -1;
  };

  struct Cursor {
    int64_t next_seq = 0;
    bool in_flight = false;
    int64_t deadline_us = 0;
    int delivery_count = 0;
  };

  struct SubState {
    Subscription sub;
    std::map<std::string, Cursor> cursors;              // topic -> cursor
    std::map<std::string, int64_t> size_at_subscribe;   // non-durable start offsets
  };

  TopicState& topic_state_locked(const std::string& topic);
  Cursor& cursor_locked(SubState& s, const std::string& topic);
  void append_locked(TopicState& t, const Envelope& env);

  BrokerOptions opts_;
  std::map<std::string, TopicState> topics_;
  std::unordered_map<std::string, SubState> subs_;
  std::unordered_set<std::string> seen_msg_ids_;
  int64_t next_msg_counter_ = 0;
  int64_t next_sub_counter_ = 0;
  BrokerStats stats_;
  mutable std::mutex mutex_;
};

}  // namespace glasspipe
