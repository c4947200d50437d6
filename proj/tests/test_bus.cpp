#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>
#include <thread>

#include "glasspipe/bus.hpp"
#include "glasspipe/netpath.hpp"
#include "glasspipe/util.hpp"
#include "oracles.hpp"
#include "temp_dir.hpp"

using namespace glasspipe;

namespace {

Envelope make_env(const std::string& topic, const json& payload = json{{"n", 1}}) {
  Envelope e;
  e.topic = topic;
  e.command_type = "test";
  e.group = "g";
  e.payload = payload;
  return e;
}

BrokerOptions opts_for(const std::filesystem::path& dir, bool fsync = false) {
  BrokerOptions o;
  o.data_dir = dir;
  o.fsync_on_publish = fsync;
  return o;
}

}  // namespace

TEST_CASE("topic and pattern validity") {
  CHECK(topic_valid("task.submit.glasses"));
  CHECK(topic_valid("a"));
  CHECK_FALSE(topic_valid(""));
  CHECK_FALSE(topic_valid("a..b"));
  CHECK_FALSE(topic_valid("a.*"));
  CHECK_FALSE(topic_valid(".a"));
  CHECK_FALSE(topic_valid("a b"));

  CHECK(pattern_valid("task.*"));
  CHECK(pattern_valid("#"));
  CHECK(pattern_valid("task.#"));
  CHECK_FALSE(pattern_valid("task..*"));
  CHECK_FALSE(pattern_valid(""));
}

TEST_CASE("documented wildcard semantics") {
  CHECK(topic_matches("task.*", "task.browser"));
  CHECK_FALSE(topic_matches("task.*", "task.browser.open"));
  CHECK_FALSE(topic_matches("task.*", "task"));
  CHECK(topic_matches("task.#", "task"));
  CHECK(topic_matches("task.#", "task.browser.open"));
  CHECK(topic_matches("#", "anything.at.all"));
  CHECK(topic_matches("a.#.b", "a.b"));
  CHECK(topic_matches("a.#.b", "a.x.y.b"));
  CHECK_FALSE(topic_matches("a.#.b", "a.x.y"));
  CHECK(topic_matches("gaze.*", "gaze.dev0"));
  CHECK_FALSE(topic_matches("gaze.*", "task.dev0"));
}

TEST_CASE("wildcard matching agrees with the brute-force table matcher") {
  Rng rng(41);
  const std::vector<std::string> seg_pool = {"a", "b", "task", "done", "x"};
  const std::vector<std::string> pat_pool = {"a", "b", "task", "done", "x", "*", "#"};

  for (int trial = 0; trial < 2000; ++trial) {
    std::string topic, pattern;
    const int tn = static_cast<int>(rng.uniform_int(1, 4));
    const int pn = static_cast<int>(rng.uniform_int(1, 4));
    for (int i = 0; i < tn; ++i) {
      if (i) topic += '.';
      topic += seg_pool[static_cast<size_t>(rng.uniform_int(0, 4))];
    }
    for (int i = 0; i < pn; ++i) {
      if (i) pattern += '.';
      pattern += pat_pool[static_cast<size_t>(rng.uniform_int(0, 6))];
    }
    CHECK(topic_matches(pattern, topic) == oracle::topic_matches_table(pattern, topic));
  }
}

TEST_CASE("publish without subscribers is durably logged") {
  testutil::TempDir tmp("bus1");
  Broker broker(opts_for(tmp.path()));
  const Receipt r = broker.publish(make_env("task.submit.g"));
  CHECK(r.seq == 0);
  CHECK_FALSE(r.msg_id.empty());
  const auto msgs = broker.replay("task.submit.g", 0);
  REQUIRE(msgs.size() == 1);
  CHECK(msgs[0].msg_id == r.msg_id);
  CHECK(std::filesystem::exists(tmp.path() / "task.submit.g.jsonl"));
}

TEST_CASE("malformed topic and oversized payload are rejected") {
  testutil::TempDir tmp("bus2");
  BrokerOptions o = opts_for(tmp.path());
  o.max_payload_bytes = 64;
  Broker broker(o);
  CHECK_THROWS_AS(broker.publish(make_env("bad topic")), ConfigError);
  CHECK_THROWS_AS(broker.publish(make_env("a.#")), ConfigError);
  CHECK_THROWS_AS(broker.publish(make_env("ok", json{{"blob", std::string(100, 'x')}})),
                  ConfigError);
}

TEST_CASE("duplicate msg_id is rejected") {
  testutil::TempDir tmp("bus3");
  Broker broker(opts_for(tmp.path()));
  Envelope e = make_env("t");
  e.msg_id = "fixed";
  broker.publish(e);
  CHECK_THROWS_AS(broker.publish(e), ConfigError);
}

TEST_CASE("durable subscriber attached after 500 of 1000 publishes sees all in seq order") {
  testutil::TempDir tmp("bus4");
  Broker broker(opts_for(tmp.path()));
  for (int i = 0; i < 500; ++i) {
    Envelope e = make_env("feed", json{{"i", i}});
    e.ts_us = i;
    broker.publish(e);
  }
  const std::string sub = broker.subscribe({"feed", true, 1000});
  for (int i = 500; i < 1000; ++i) {
    Envelope e = make_env("feed", json{{"i", i}});
    e.ts_us = i;
    broker.publish(e);
  }

  int64_t expected_seq = 0;
  while (auto d = broker.next(sub, /*now_us=*/1'000'000)) {
    REQUIRE(d->envelope.seq == expected_seq);
    REQUIRE_FALSE(d->redelivered);
    broker.ack(sub, d->envelope.msg_id);
    ++expected_seq;
  }
  CHECK(expected_seq == 1000);
}

TEST_CASE("non-durable subscriber sees only messages published after attach") {
  testutil::TempDir tmp("bus5");
  Broker broker(opts_for(tmp.path()));
  broker.publish(make_env("t"));
  const std::string sub = broker.subscribe({"t", false, 1000});
  CHECK_FALSE(broker.next(sub, 0));
  broker.publish(make_env("t"));
  auto d = broker.next(sub, 0);
  REQUIRE(d);
  CHECK(d->envelope.seq == 1);
}

TEST_CASE("unacked delivery is redelivered with the redelivered flag") {
  testutil::TempDir tmp("bus6");
  Broker broker(opts_for(tmp.path()));
  broker.publish(make_env("t"));
  const std::string sub = broker.subscribe({"t", true, /*ack_deadline_ms=*/100});

  auto first = broker.next(sub, /*now_us=*/0);
  REQUIRE(first);
  CHECK_FALSE(first->redelivered);

  // Within the deadline nothing new is deliverable.
  CHECK_FALSE(broker.next(sub, 50'000));

  auto second = broker.next(sub, /*now_us=*/100'000);
  REQUIRE(second);
  CHECK(second->redelivered);
  CHECK(second->envelope.msg_id == first->envelope.msg_id);
  CHECK(broker.ack(sub, second->envelope.msg_id));
}

TEST_CASE("ack is idempotent and unknown acks are counted no-ops") {
  testutil::TempDir tmp("bus7");
  Broker broker(opts_for(tmp.path()));
  broker.publish(make_env("t"));
  const std::string sub = broker.subscribe({"t", true, 1000});
  auto d = broker.next(sub, 0);
  REQUIRE(d);
  CHECK(broker.ack(sub, d->envelope.msg_id));
  CHECK_FALSE(broker.ack(sub, d->envelope.msg_id));
  CHECK_FALSE(broker.ack(sub, "never-existed"));
  CHECK(broker.stats().unknown_acks == 2);
}

TEST_CASE("nack triggers immediate redelivery") {
  testutil::TempDir tmp("bus8");
  Broker broker(opts_for(tmp.path()));
  broker.publish(make_env("t"));
  const std::string sub = broker.subscribe({"t", true, 60'000});
  auto d = broker.next(sub, 0);
  REQUIRE(d);
  CHECK(broker.nack(sub, d->envelope.msg_id));
  auto again = broker.next(sub, 1);
  REQUIRE(again);
  CHECK(again->redelivered);
  CHECK(again->envelope.msg_id == d->envelope.msg_id);
}

TEST_CASE("per-topic observed seq never decreases") {
  testutil::TempDir tmp("bus9");
  Broker broker(opts_for(tmp.path()));
  for (int i = 0; i < 20; ++i) broker.publish(make_env("t", json{{"i", i}}));
  const std::string sub = broker.subscribe({"t", true, 10});

  Rng rng(5);
  std::vector<int64_t> observed;
  int64_t now = 0;
  int acked = 0;
  while (acked < 20) {
    now += 20'000;  // always past the deadline
    auto d = broker.next(sub, now);
    if (!d) continue;
    observed.push_back(d->envelope.seq);
    if (rng.uniform01() < 0.5) {
      broker.ack(sub, d->envelope.msg_id);
      ++acked;
    }
  }
  for (size_t i = 1; i < observed.size(); ++i) CHECK(observed[i] >= observed[i - 1]);
  CHECK(broker.stats().redeliveries > 0);
}

TEST_CASE("no message reaches a non-matching subscription") {
  testutil::TempDir tmp("bus10");
  Broker broker(opts_for(tmp.path()));
  const std::string sub = broker.subscribe({"task.done.*", true, 1000});
  broker.publish(make_env("task.submit.g"));
  broker.publish(make_env("gaze.dev0"));
  CHECK_FALSE(broker.next(sub, 0));
  broker.publish(make_env("task.done.g"));
  auto d = broker.next(sub, 0);
  REQUIRE(d);
  CHECK(d->envelope.topic == "task.done.g");
}

TEST_CASE("receipted messages survive broker restart") {
  testutil::TempDir tmp("bus11");
  std::vector<std::string> ids;
  {
    Broker broker(opts_for(tmp.path(), /*fsync=*/true));
    for (int i = 0; i < 25; ++i) ids.push_back(broker.publish(make_env("t", json{{"i", i}})).msg_id);
  }  // destructor = process kill for in-memory state
  Broker reborn(opts_for(tmp.path(), true));
  const auto msgs = reborn.replay("t", 0);
  REQUIRE(msgs.size() == ids.size());
  for (size_t i = 0; i < msgs.size(); ++i) {
    CHECK(msgs[i].msg_id == ids[i]);
    CHECK(msgs[i].seq == static_cast<int64_t>(i));
  }
  // msg_id uniqueness persists across the restart.
  Envelope dup = make_env("t");
  dup.msg_id = ids[0];
  CHECK_THROWS_AS(reborn.publish(dup), ConfigError);
}

TEST_CASE("replay edge cases") {
  testutil::TempDir tmp("bus12");
  Broker broker(opts_for(tmp.path()));
  CHECK(broker.replay("nothing.here", 0).empty());
  broker.publish(make_env("t"));
  CHECK(broker.replay("t", 5).empty());
  CHECK_THROWS_AS(broker.replay("t", -1), ConfigError);
}

TEST_CASE("all messages are eventually acked under injected drops") {
  testutil::TempDir tmp("bus13");
  Broker broker(opts_for(tmp.path()));
  const int total = 60;
  for (int i = 0; i < total; ++i) broker.publish(make_env("t", json{{"i", i}}));

  const std::string sub = broker.subscribe({"t", true, 50});
  DropInjector drops(999);
  std::set<std::string> acked;
  int64_t duplicates = 0;
  int64_t now = 0;
  std::set<std::string> seen;
  while (static_cast<int>(acked.size()) < total) {
    now += 60'000;
    auto d = broker.next(sub, now);
    if (!d) continue;
    if (drops.should_drop(0.3)) continue;  // consumer never saw it
    if (!seen.insert(d->envelope.msg_id).second) ++duplicates;
    broker.ack(sub, d->envelope.msg_id);
    acked.insert(d->envelope.msg_id);
  }
  CHECK(static_cast<int>(acked.size()) == total);
  CHECK(drops.drops() > 0);
}

TEST_CASE("concurrent publishers keep per-topic seq gapless") {
  testutil::TempDir tmp("bus14");
  Broker broker(opts_for(tmp.path()));
  constexpr int kThreads = 4, kPerThread = 50;
  std::vector<std::thread> workers;
  for (int w = 0; w < kThreads; ++w)
    workers.emplace_back([&broker, w] {
      for (int i = 0; i < kPerThread; ++i) {
        Envelope e;
        e.topic = "shared";
        e.payload = json{{"w", w}, {"i", i}};
        broker.publish(std::move(e));
      }
    });
  for (auto& t : workers) t.join();

  const auto msgs = broker.replay("shared", 0);
  REQUIRE(msgs.size() == kThreads * kPerThread);
  std::set<std::string> ids;
  for (size_t i = 0; i < msgs.size(); ++i) {
    CHECK(msgs[i].seq == static_cast<int64_t>(i));
    ids.insert(msgs[i].msg_id);
  }
  CHECK(ids.size() == msgs.size());
}

TEST_CASE("a torn final log line is dropped on recovery") {
  testutil::TempDir tmp("bus15");
  {
    Broker broker(opts_for(tmp.path()));
    broker.publish(make_env("t"));
    broker.publish(make_env("t"));
  }
  // Simulate a crash mid-append: a partial, unreceipted record at the tail.
  write_text_file(tmp.path() / "t.jsonl",
                  read_text_file(tmp.path() / "t.jsonl") + "{\"msg_id\":\"torn");

  Broker recovered(opts_for(tmp.path()));
  CHECK(recovered.replay("t", 0).size() == 2);
  // The file itself was truncated back to the receipted prefix.
  CHECK(read_text_file(tmp.path() / "t.jsonl").ends_with("\n"));
  // And appends continue with the right seq.
  CHECK(recovered.publish(make_env("t")).seq == 2);
}

TEST_CASE("interior log corruption is rejected with its line number") {
  testutil::TempDir tmp("bus16");
  {
    Broker broker(opts_for(tmp.path()));
    broker.publish(make_env("t"));
  }
  write_text_file(tmp.path() / "t.jsonl",
                  "oops not json\n" + read_text_file(tmp.path() / "t.jsonl"));
  try {
    Broker broken(opts_for(tmp.path()));
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find(":1") != std::string::npos);
  }
}

TEST_CASE("seq continues after restart") {
  testutil::TempDir tmp("bus17");
  {
    Broker broker(opts_for(tmp.path(), true));
    for (int i = 0; i < 5; ++i) broker.publish(make_env("t"));
  }
  Broker reborn(opts_for(tmp.path(), true));
  CHECK(reborn.publish(make_env("t")).seq == 5);
  CHECK(reborn.topic_size("t") == 6);
}
