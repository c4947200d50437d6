#include "glasspipe/bus.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <fstream>

namespace glasspipe {

json Envelope::to_json() const {
  json j;
  j["msg_id"] = msg_id;
  j["topic"] = topic;
  j["command_type"] = command_type;
  j["group"] = group;
  j["payload"] = payload;
  j["priority_hint"] = priority_hint;
  j["ts_us"] = ts_us;
  j["seq"] = seq;
  return j;
}

Envelope Envelope::from_json(const json& j) {
  Envelope e;
  e.msg_id = j.value("msg_id", "");
  e.topic = j.at("topic").get<std::string>();
  e.command_type = j.value("command_type", "");
  e.group = j.value("group", "");
  e.payload = j.value("payload", json());
  e.priority_hint = j.value("priority_hint", 0.0);
  e.ts_us = j.value("ts_us", int64_t{0});
  e.seq = j.value("seq", int64_t{-1});
  return e;
}

namespace {

std::vector<std::string_view> split_segments(std::string_view s) {
  std::vector<std::string_view> out;
  size_t start = 0;
  while (true) {
    const size_t dot = s.find('.', start);
    if (dot == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, dot - start));
    start = dot + 1;
  }
}

bool plain_segment(std::string_view seg) {
  if (seg.empty()) return false;
  for (char c : seg) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                    (c >= '0' && c <= '9') || c == '_' || c == '-';
    if (!ok) return false;
  }
  return true;
}

bool match_segments(const std::vector<std::string_view>& pat, size_t pi,
                    const std::vector<std::string_view>& top, size_t ti) {
  if (pi == pat.size()) return ti == top.size();
  if (pat[pi] == "#") {
    for (size_t k = ti; k <= top.size(); ++k)
      if (match_segments(pat, pi + 1, top, k)) return true;
    return false;
  }
  if (ti == top.size()) return false;
  if (pat[pi] == "*" || pat[pi] == top[ti]) return match_segments(pat, pi + 1, top, ti + 1);
  return false;
}

}  // namespace

bool topic_valid(std::string_view topic) {
  if (topic.empty()) return false;
  for (auto seg : split_segments(topic))
    if (!plain_segment(seg)) return false;
  return true;
}

bool pattern_valid(std::string_view pattern) {
  if (pattern.empty()) return false;
  for (auto seg : split_segments(pattern))
    if (seg != "*" && seg != "#" && !plain_segment(seg)) return false;
  return true;
}

bool topic_matches(std::string_view pattern, std::string_view topic) {
  return match_segments(split_segments(pattern), 0, split_segments(topic), 0);
}

Broker::Broker(BrokerOptions opts) : opts_(std::move(opts)) {
  if (opts_.data_dir.empty()) throw ConfigError("broker data_dir must be set");
  std::filesystem::create_directories(opts_.data_dir);

  // Recover every per-topic log present in the data dir.
  for (const auto& entry : std::filesystem::directory_iterator(opts_.data_dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".jsonl") continue;
    const std::string topic = entry.path().stem().string();
    if (!topic_valid(topic)) continue;

    TopicState state;
    std::ifstream in(entry.path());
    std::string line;
    int line_no = 0;
    std::uintmax_t offset = 0;   // byte offset of the current line start
    std::uintmax_t valid_end = 0;
    bool torn_tail = false;
    while (std::getline(in, line)) {
      ++line_no;
      const auto line_bytes = line.size() + 1;
      if (line.empty()) {
        offset += line_bytes;
        continue;
      }
      json j;
      try {
        j = json::parse(line);
      } catch (const json::parse_error& e) {
        // A torn final line is an interrupted append of a message that was
        // never receipted; drop it. Corruption before intact lines is not
        // recoverable.
        if (in.peek() == std::char_traits<char>::eof()) {
          torn_tail = true;
          break;
        }
        throw IoError(entry.path().string() + ":" + std::to_string(line_no) +
                      ": malformed log line: " + e.what());
      }
      Envelope env = Envelope::from_json(j);
      if (env.seq != static_cast<int64_t>(state.log.size()))
        throw IoError(entry.path().string() + ":" + std::to_string(line_no) +
                      ": seq gap in durable log");
      seen_msg_ids_.insert(env.msg_id);
      state.log.push_back(std::move(env));
      offset += line_bytes;
      valid_end = offset;
    }
    in.close();
    if (torn_tail) std::filesystem::resize_file(entry.path(), valid_end);
    topics_.emplace(topic, std::move(state));
  }
}

Broker::~Broker() {
  for (auto& [topic, state] : topics_)
    if (state.fd >= 0) ::close(state.fd);
}

Broker::TopicState& Broker::topic_state_locked(const std::string& topic) {
  return topics_[topic];  // default-constructed on first use
}

void Broker::append_locked(TopicState& t, const Envelope& env) {
  if (t.fd < 0) {
    const auto path = opts_.data_dir / (env.topic + ".jsonl");
    t.fd = ::open(path.c_str(), O_WRONLY | O_APPEND | O_CREAT, 0644);
    if (t.fd < 0) throw IoError("cannot open log for topic " + env.topic);
  }
  const std::string line = env.to_json().dump() + "\n";
  size_t written = 0;
  while (written < line.size()) {
    const ssize_t n = ::write(t.fd, line.data() + written, line.size() - written);
    if (n < 0) throw IoError("log append failed for topic " + env.topic);
    written += static_cast<size_t>(n);
  }
  if (opts_.fsync_on_publish && ::fsync(t.fd) != 0)
    throw IoError("fsync failed for topic " + env.topic);
}

Receipt Broker::publish(Envelope env) {
  if (!topic_valid(env.topic)) throw ConfigError("malformed topic: " + env.topic);
  if (env.payload.dump().size() > opts_.max_payload_bytes)
    throw ConfigError("payload exceeds max size on topic " + env.topic);

  std::lock_guard lock(mutex_);
  if (env.msg_id.empty()) {
    // Skip ids recovered from durable logs.
    do {
      char buf[24];
      std::snprintf(buf, sizeof buf, "m%08lld", static_cast<long long>(next_msg_counter_++));
      env.msg_id = buf;
    } while (seen_msg_ids_.count(env.msg_id));
  }
  if (!seen_msg_ids_.insert(env.msg_id).second)
    throw ConfigError("duplicate msg_id: " + env.msg_id);

  TopicState& t = topic_state_locked(env.topic);
  env.seq = static_cast<int64_t>(t.log.size());

  append_locked(t, env);  // persistence precedes the receipt
  t.log.push_back(env);
  ++stats_.published;
  return {env.msg_id, env.topic, env.seq};
}

std::string Broker::subscribe(const Subscription& sub) {
  if (!pattern_valid(sub.pattern)) throw ConfigError("malformed pattern: " + sub.pattern);
  if (sub.ack_deadline_ms <= 0) throw ConfigError("ack_deadline_ms must be > 0");

  std::lock_guard lock(mutex_);
  std::string sub_id = "s" + std::to_string(next_sub_counter_++);
  SubState state;
  state.sub = sub;
  if (!sub.durable)
    for (const auto& [topic, t] : topics_)
      state.size_at_subscribe[topic] = static_cast<int64_t>(t.log.size());
  subs_.emplace(sub_id, std::move(state));
  return sub_id;
}

void Broker::unsubscribe(const std::string& sub_id) {
  std::lock_guard lock(mutex_);
  subs_.erase(sub_id);
}

Broker::Cursor& Broker::cursor_locked(SubState& s, const std::string& topic) {
  auto it = s.cursors.find(topic);
  if (it != s.cursors.end()) return it->second;
  Cursor c;
  if (!s.sub.durable) {
    // Topics that existed at subscribe time start past their backlog.
    auto size_it = s.size_at_subscribe.find(topic);
    if (size_it != s.size_at_subscribe.end()) c.next_seq = size_it->second;
  }
  return s.cursors.emplace(topic, c).first->second;
}

std::optional<Delivery> Broker::next(const std::string& sub_id, int64_t now_us) {
  std::lock_guard lock(mutex_);
  auto sub_it = subs_.find(sub_id);
  if (sub_it == subs_.end()) throw ConfigError("unknown subscription: " + sub_id);
  SubState& s = sub_it->second;

  const Envelope* best = nullptr;
  Cursor* best_cursor = nullptr;
  for (auto& [topic, t] : topics_) {
    if (!topic_matches(s.sub.pattern, topic)) continue;
    Cursor& c = cursor_locked(s, topic);
    if (c.next_seq >= static_cast<int64_t>(t.log.size())) continue;
    if (c.in_flight && now_us < c.deadline_us) continue;  // awaiting ack
    const Envelope& head = t.log[c.next_seq];
    if (!best || head.ts_us < best->ts_us ||
        (head.ts_us == best->ts_us && head.topic < best->topic)) {
      best = &head;
      best_cursor = &c;
    }
  }
  if (!best) return std::nullopt;

  Delivery d;
  d.envelope = *best;
  d.redelivered = best_cursor->delivery_count > 0;
  d.sub_id = sub_id;
  best_cursor->in_flight = true;
  best_cursor->deadline_us = now_us + sub_it->second.sub.ack_deadline_ms * 1000;
  ++best_cursor->delivery_count;
  ++stats_.delivered;
  if (d.redelivered) ++stats_.redeliveries;
  return d;
}

bool Broker::ack(const std::string& sub_id, const std::string& msg_id) {
  std::lock_guard lock(mutex_);
  auto sub_it = subs_.find(sub_id);
  if (sub_it == subs_.end()) throw ConfigError("unknown subscription: " + sub_id);
  SubState& s = sub_it->second;

  for (auto& [topic, c] : s.cursors) {
    if (!c.in_flight) continue;
    const auto& log = topics_.at(topic).log;
    if (log[c.next_seq].msg_id != msg_id) continue;
    c.in_flight = false;
    c.delivery_count = 0;
    ++c.next_seq;
    ++stats_.acked;
    return true;
  }
  ++stats_.unknown_acks;
  return false;
}

bool Broker::nack(const std::string& sub_id, const std::string& msg_id) {
  std::lock_guard lock(mutex_);
  auto sub_it = subs_.find(sub_id);
  if (sub_it == subs_.end()) throw ConfigError("unknown subscription: " + sub_id);
  SubState& s = sub_it->second;

  for (auto& [topic, c] : s.cursors) {
    if (!c.in_flight) continue;
    const auto& log = topics_.at(topic).log;
    if (log[c.next_seq].msg_id != msg_id) continue;
    c.deadline_us = 0;  // redeliver on the next poll
    return true;
  }
  return false;
}

std::vector<Envelope> Broker::replay(const std::string& topic, int64_t from_seq) const {
  if (from_seq < 0) throw ConfigError("from_seq must be >= 0");
  std::lock_guard lock(mutex_);
  auto it = topics_.find(topic);
  if (it == topics_.end()) return {};
  const auto& log = it->second.log;
  if (from_seq >= static_cast<int64_t>(log.size())) return {};
  return {log.begin() + from_seq, log.end()};
}

std::vector<std::string> Broker::topics() const {
  std::lock_guard lock(mutex_);
  std::vector<std::string> out;
  out.reserve(topics_.size());
  for (const auto& [topic, t] : topics_) out.push_back(topic);
  return out;
}

int64_t Broker::topic_size(const std::string& topic) const {
  std::lock_guard lock(mutex_);
  auto it = topics_.find(topic);
  return it == topics_.end() ? 0 : static_cast<int64_t>(it->second.log.size());
}

BrokerStats Broker::stats() const {
  std::lock_guard lock(mutex_);
  return stats_;
}

}  // namespace glasspipe
