#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/socket.h>
#include <unistd.h>

#include <set>

#include "glasspipe/bus_tcp.hpp"
#include "temp_dir.hpp"

using namespace glasspipe;

TEST_CASE("frames carry a 4-byte big-endian length prefix") {
  int fds[2];
  REQUIRE(::socketpair(AF_UNIX, SOCK_STREAM, 0, fds) == 0);

  const json msg = {{"op", "publish"}, {"topic", "t"}};
  write_frame(fds[0], msg);

  const std::string body = msg.dump();
  unsigned char header[4];
  REQUIRE(::read(fds[1], header, 4) == 4);
  const uint32_t len = static_cast<uint32_t>(header[0]) << 24 |
                       static_cast<uint32_t>(header[1]) << 16 |
                       static_cast<uint32_t>(header[2]) << 8 | header[3];
  CHECK(len == body.size());
  std::string got(len, '\0');
  REQUIRE(::read(fds[1], got.data(), len) == static_cast<ssize_t>(len));
  CHECK(json::parse(got) == msg);

  // Round trip through read_frame as well.
  write_frame(fds[0], msg);
  auto back = read_frame(fds[1]);
  REQUIRE(back);
  CHECK(*back == msg);

  ::close(fds[0]);
  ::close(fds[1]);
}

TEST_CASE("publish, subscribe, deliver, ack and replay over TCP") {
  testutil::TempDir tmp("tcp1");
  BrokerOptions opts;
  opts.data_dir = tmp.path();
  opts.fsync_on_publish = false;
  Broker broker(opts);
  BusTcpServer server(broker, /*port=*/0);
  server.start();

  BusTcpClient client("127.0.0.1", server.port());

  Envelope env;
  env.topic = "task.submit.g";
  env.command_type = "open_url";
  env.group = "g";
  env.payload = {{"url", "https://example.com"}};
  const Receipt r = client.publish(env);
  CHECK(r.seq == 0);
  CHECK_FALSE(r.msg_id.empty());

  const std::string sub_id = client.subscribe({"task.submit.*", /*durable=*/true, 5000});
  auto d = client.poll_delivery(3000);
  REQUIRE(d);
  CHECK(d->envelope.topic == "task.submit.g");
  CHECK(d->envelope.payload["url"] == "https://example.com");
  CHECK(d->sub_id == sub_id);
  client.ack(sub_id, d->envelope.msg_id);

  const auto replayed = client.replay("task.submit.g", 0);
  REQUIRE(replayed.size() == 1);
  CHECK(replayed[0].msg_id == r.msg_id);

  client.close();
  server.stop();
}

TEST_CASE("two clients: one publishes, the other consumes in order") {
  testutil::TempDir tmp("tcp2");
  BrokerOptions opts;
  opts.data_dir = tmp.path();
  opts.fsync_on_publish = false;
  Broker broker(opts);
  BusTcpServer server(broker, 0);
  server.start();

  BusTcpClient consumer("127.0.0.1", server.port());
  const std::string sub_id = consumer.subscribe({"feed.#", true, 5000});

  BusTcpClient producer("127.0.0.1", server.port());
  for (int i = 0; i < 20; ++i) {
    Envelope e;
    e.topic = "feed.a";
    e.payload = {{"i", i}};
    producer.publish(e);
  }

  std::set<int> seen;
  int64_t last_seq = -1;
  while (static_cast<int>(seen.size()) < 20) {
    auto d = consumer.poll_delivery(3000);
    REQUIRE(d);
    CHECK(d->envelope.seq > last_seq);
    last_seq = d->envelope.seq;
    seen.insert(d->envelope.payload["i"].get<int>());
    consumer.ack(sub_id, d->envelope.msg_id);
  }
  CHECK(seen.size() == 20);

  producer.close();
  consumer.close();
  server.stop();
}

TEST_CASE("protocol errors come back as error frames") {
  testutil::TempDir tmp("tcp3");
  BrokerOptions opts;
  opts.data_dir = tmp.path();
  opts.fsync_on_publish = false;
  Broker broker(opts);
  BusTcpServer server(broker, 0);
  server.start();

  BusTcpClient client("127.0.0.1", server.port());
  Envelope bad;
  bad.topic = "not a topic";
  CHECK_THROWS_AS(client.publish(bad), IoError);

  // The connection stays usable afterwards.
  Envelope ok;
  ok.topic = "fine";
  CHECK(client.publish(ok).seq == 0);

  client.close();
  server.stop();
}
