#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "glasspipe/sched.hpp"
#include "glasspipe/util.hpp"
#include "temp_dir.hpp"

using namespace glasspipe;

namespace {

Task make_task(std::string id, double utility, double decay, double alpha, double arrival,
               std::map<std::string, double> resources = {}) {
  Task t;
  t.task_id = std::move(id);
  t.task_type = TaskType::open_url;
  t.task_type_raw = "open_url";
  t.utility = utility;
  t.decay = decay;
  t.alpha = alpha;
  t.arrival_s = arrival;
  t.resources = std::move(resources);
  t.payload = {{"url", "https://example.com"}};
  return t;
}

ResourcePool pool_with(std::map<std::string, double> capacity) {
  ResourcePool p;
  p.capacity = std::move(capacity);
  return p;
}

}  // namespace

TEST_CASE("priority at arrival time is U/D") {
  const Task t = make_task("a", 10, 2, 0.1, 5.0);
  CHECK(task_priority(t, 5.0) == doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("hand-evaluated priority decay") {
  const Task t = make_task("a", 10, 2, 0.1, 0.0);
  CHECK(task_priority(t, 10.0) == doctest::Approx(1.83940).epsilon(1e-4));
}

TEST_CASE("alpha zero keeps priority constant") {
  const Task t = make_task("a", 3, 2, 0.0, 0.0);
  CHECK(task_priority(t, 0.0) == 1.5);
  CHECK(task_priority(t, 1e6) == 1.5);
}

TEST_CASE("clock skew counts a warning and clamps the wait to zero") {
  const Task t = make_task("a", 4, 2, 0.5, 100.0);
  int64_t warnings = 0;
  CHECK(task_priority(t, 50.0, &warnings) == doctest::Approx(2.0));
  CHECK(warnings == 1);
}

TEST_CASE("priority is non-increasing in waiting time for positive alpha") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const Task t = make_task("a", rng.uniform(0.1, 10), rng.uniform(0.1, 5),
                             rng.uniform(0.0001, 1), 0.0);
    double t1 = rng.uniform(0, 50), t2 = rng.uniform(0, 50);
    if (t1 > t2) std::swap(t1, t2);
    CHECK(task_priority(t, t1) >= task_priority(t, t2));
  }
}

TEST_CASE("empty queue is an idle step") {
  Scheduler s(pool_with({{"cpu", 1}}));
  CHECK(s.schedule_step(0.0).kind == DispatchDecision::Kind::idle);
}

TEST_CASE("equal priorities dispatch in arrival order") {
  // alpha = 0 makes the priorities tie exactly; the tie-break is arrival.
  Scheduler s(pool_with({{"cpu", 4}}));
  s.submit(make_task("late", 5, 1, 0.0, 1.0));
  s.submit(make_task("early", 5, 1, 0.0, 0.0));
  const auto d = s.schedule_step(10.0);
  REQUIRE(d.kind == DispatchDecision::Kind::dispatched);
  CHECK(d.task->task_id == "early");
}

TEST_CASE("under decay, the younger of two otherwise-equal tasks outranks the older") {
  // Under decay, waiting longer can only lower a task's priority.
  Scheduler s(pool_with({{"cpu", 4}}));
  s.submit(make_task("old", 5, 1, 0.1, 0.0));
  s.submit(make_task("young", 5, 1, 0.1, 1.0));
  const auto d = s.schedule_step(10.0);
  REQUIRE(d.kind == DispatchDecision::Kind::dispatched);
  CHECK(d.task->task_id == "young");
}

TEST_CASE("three-task dispatch order follows the recomputed priorities") {
  // At t=10: 10*e^-1/2 = 1.83940, 8*e^-1 = 2.94304, 4*1 = 4.0.
  Scheduler s(pool_with({{"cpu", 4}}));
  s.submit(make_task("t1", 10, 2, 0.1, 0.0));
  s.submit(make_task("t2", 8, 1, 0.1, 0.0));
  s.submit(make_task("t3", 4, 1, 0.0, 0.0));

  const auto first = s.schedule_step(10.0);
  REQUIRE(first.kind == DispatchDecision::Kind::dispatched);
  CHECK(first.task->task_id == "t3");
  CHECK(first.priority == doctest::Approx(4.0));
  s.complete("t3");

  const auto second = s.schedule_step(10.0);
  REQUIRE(second.kind == DispatchDecision::Kind::dispatched);
  CHECK(second.task->task_id == "t2");
  CHECK(second.priority == doctest::Approx(2.9430).epsilon(1e-4));
  s.complete("t2");

  const auto third = s.schedule_step(10.0);
  REQUIRE(third.kind == DispatchDecision::Kind::dispatched);
  CHECK(third.task->task_id == "t1");
  CHECK(third.priority == doctest::Approx(1.8394).epsilon(1e-4));
}

TEST_CASE("head-of-line blocking without backfill") {
  Scheduler s(pool_with({{"cpu", 2}}));
  s.submit(make_task("big", 10, 1, 0, 0.0, {{"cpu", 2}}));
  s.submit(make_task("small", 1, 1, 0, 0.0, {{"cpu", 1}}));

  const auto d1 = s.schedule_step(0.0);
  REQUIRE(d1.kind == DispatchDecision::Kind::dispatched);
  CHECK(d1.task->task_id == "big");

  // "big" holds both cpus; the top of the remaining queue cannot fit and
  // the literal algorithm waits.
  const auto d2 = s.schedule_step(0.0);
  CHECK(d2.kind == DispatchDecision::Kind::waiting);
  CHECK(d2.blocked_task_id == "small");

  s.complete("big");
  CHECK(s.schedule_step(0.0).kind == DispatchDecision::Kind::dispatched);
}

TEST_CASE("backfill dispatches the first fitting lower-priority task") {
  SchedulerConfig cfg;
  cfg.backfill = true;
  Scheduler s(pool_with({{"cpu", 3}}), cfg);
  s.submit(make_task("hog", 10, 1, 0, 0.0, {{"cpu", 2}}));
  s.submit(make_task("greedy", 9, 1, 0, 0.0, {{"cpu", 2}}));
  s.submit(make_task("tiny", 1, 1, 0, 0.0, {{"cpu", 1}}));

  REQUIRE(s.schedule_step(0.0).task->task_id == "hog");
  // "greedy" blocks, but backfill reaches "tiny".
  const auto d = s.schedule_step(0.0);
  REQUIRE(d.kind == DispatchDecision::Kind::dispatched);
  CHECK(d.task->task_id == "tiny");
}

TEST_CASE("tasks exceeding total capacity are rejected at submit") {
  Scheduler s(pool_with({{"cpu", 2}}));
  const auto r = s.submit(make_task("huge", 1, 1, 0, 0.0, {{"cpu", 3}}));
  CHECK_FALSE(r.accepted);
  CHECK(s.rejected() == 1);
  CHECK(s.pending() == 0);
  // Unknown resources have zero capacity.
  CHECK_FALSE(s.submit(make_task("gpu", 1, 1, 0, 0.0, {{"gpu", 1}})).accepted);
}

TEST_CASE("aging mode raises priority with wait instead") {
  SchedulerConfig cfg;
  cfg.priority_mode = SchedulerConfig::PriorityMode::aging;
  cfg.aging_cap = 10.0;
  Scheduler s(pool_with({{"cpu", 1}}), cfg);
  const Task t = make_task("a", 2, 1, 0.1, 0.0);
  CHECK(s.priority_of(t, 0.0) == doctest::Approx(2.0));
  CHECK(s.priority_of(t, 10.0) == doctest::Approx(2.0 * std::exp(1.0)));
  CHECK(s.priority_of(t, 1000.0) == doctest::Approx(20.0));  // capped
}

TEST_CASE("resource safety holds through a randomized simulation") {
  Rng rng(97);
  Scheduler s(pool_with({{"cpu", 4}, {"display", 1}}));
  int accepted = 0, finished = 0;
  std::vector<std::string> running;
  double now = 0.0;

  for (int i = 0; i < 300; ++i) {
    now += rng.uniform(0, 0.5);
    std::map<std::string, double> res;
    if (rng.uniform01() < 0.8) res["cpu"] = static_cast<double>(rng.uniform_int(1, 3));
    if (rng.uniform01() < 0.3) res["display"] = 1.0;
    Task t = make_task("t" + std::to_string(i), rng.uniform(0.5, 10), rng.uniform(0.5, 3),
                       rng.uniform(0, 0.5), now, std::move(res));
    if (s.submit(t).accepted) ++accepted;

    // Occasionally finish something, then try to dispatch.
    while (!running.empty() && rng.uniform01() < 0.5) {
      s.complete(running.back());
      running.pop_back();
      ++finished;
    }
    while (true) {
      const auto d = s.schedule_step(now);  // check_invariant runs inside
      if (d.kind != DispatchDecision::Kind::dispatched) break;
      running.push_back(d.task->task_id);
    }
  }
  while (!running.empty()) {
    s.complete(running.back());
    running.pop_back();
    ++finished;
  }
  CHECK(finished == static_cast<int>(s.dispatched()));
  CHECK(accepted == static_cast<int>(s.submitted()));
}

TEST_CASE("identical task sets and clocks dispatch identically") {
  auto run_once = [] {
    Rng rng(55);
    Scheduler s(pool_with({{"cpu", 3}}));
    std::vector<std::string> order;
    for (int i = 0; i < 40; ++i) {
      s.submit(make_task("t" + std::to_string(i), rng.uniform(1, 10), rng.uniform(0.5, 2),
                         rng.uniform(0, 0.3), rng.uniform(0, 5),
                         {{"cpu", static_cast<double>(rng.uniform_int(1, 2))}}));
    }
    for (double now = 5.0; now < 50.0 && order.size() < 40; now += 0.5) {
      while (true) {
        const auto d = s.schedule_step(now);
        if (d.kind != DispatchDecision::Kind::dispatched) break;
        order.push_back(d.task->task_id);
        s.complete(d.task->task_id);
      }
    }
    return order;
  };
  CHECK(run_once() == run_once());
}

TEST_CASE("executor records effects per task type") {
  testutil::TempDir tmp("exec");
  TaskExecutor exec(tmp / "effects");

  Task url = make_task("u1", 1, 1, 0, 0);
  url.payload = {{"url", "https://maps.example/q"}};
  const Effect e1 = exec.execute(url, 1.0);
  CHECK(e1.effect_type == "open_url");
  CHECK(e1.details["url"] == "https://maps.example/q");
  CHECK(std::filesystem::exists(tmp / "effects" / "u1.json"));

  Task html = make_task("h1", 1, 1, 0, 0);
  html.task_type = TaskType::display_html;
  html.task_type_raw = "display_html";
  html.payload = {{"html", "<html><body>UR10</body></html>"}, {"title", "diag"}};
  const Effect e2 = exec.execute(html, 2.0);
  CHECK(e2.effect_type == "display_html");
  const auto html_path = exec.effects_dir() / e2.details["html_path"].get<std::string>();
  CHECK(std::filesystem::exists(html_path));
  CHECK(read_text_file(html_path).find("UR10") != std::string::npos);

  Task weird = make_task("w1", 1, 1, 0, 0);
  weird.task_type = TaskType::unknown;
  weird.task_type_raw = "frobnicate";
  const Effect e3 = exec.execute(weird, 3.0);
  CHECK(e3.effect_type == "failure");
  CHECK(e3.details["requested_type"] == "frobnicate");
}

TEST_CASE("unknown task type releases its resources") {
  testutil::TempDir tmp("execrel");
  Scheduler s(pool_with({{"cpu", 2}}));
  TaskExecutor exec(tmp / "effects");

  Task weird = make_task("w1", 1, 1, 0, 0, {{"cpu", 2}});
  weird.task_type = TaskType::unknown;
  weird.task_type_raw = "frobnicate";
  REQUIRE(s.submit(weird).accepted);
  const auto d = s.schedule_step(0.0);
  REQUIRE(d.kind == DispatchDecision::Kind::dispatched);
  const Effect e = exec.execute(*d.task, 0.0);
  CHECK(e.effect_type == "failure");
  s.complete("w1");
  CHECK(s.pool().allocated.at("cpu") == 0.0);
}

TEST_CASE("scheduler service consumes bus submissions and publishes completions") {
  testutil::TempDir tmp("svc");
  BrokerOptions opts;
  opts.data_dir = tmp / "bus";
  opts.fsync_on_publish = false;
  Broker broker(opts);
  Scheduler scheduler(pool_with({{"cpu", 4}, {"display", 1}}));
  TaskExecutor executor(tmp / "effects");
  SchedulerService service(broker, scheduler, executor);

  Task t = make_task("job1", 2, 1, 0.05, 0.0, {{"cpu", 1}});
  t.group = "glasses";
  Envelope env;
  env.topic = "task.submit.glasses";
  env.command_type = "open_url";
  env.group = "glasses";
  env.payload = t.to_json();
  broker.publish(std::move(env));

  // Malformed submission envelope: counted rejected, never redelivered.
  Envelope junk;
  junk.topic = "task.submit.glasses";
  junk.payload = {{"not_a_task", true}};
  broker.publish(std::move(junk));

  const PumpResult r = service.pump(0.0, 0);
  CHECK(r.intake_count == 2);
  REQUIRE(r.effects.size() == 1);
  CHECK(r.effects[0].task_id == "job1");
  CHECK(service.rejected() == 1);

  const auto done = broker.replay("task.done.glasses", 0);
  REQUIRE(done.size() == 1);
  CHECK(done[0].payload["task_id"] == "job1");
  CHECK(done[0].payload["effect_type"] == "open_url");

  // Accounting: submitted == done + rejected (for intake of 2).
  CHECK(scheduler.dispatched() == 1);
  CHECK(r.intake_count == static_cast<int64_t>(r.effects.size()) + service.rejected());

  // Nothing left pending.
  const PumpResult again = service.pump(1.0, 1'000'000);
  CHECK(again.intake_count == 0);
  CHECK(again.effects.empty());
}

TEST_CASE("task json round trip") {
  Task t = make_task("x", 2.5, 1.5, 0.2, 3.0, {{"cpu", 2}});
  t.group = "glasses";
  const Task back = Task::from_json(t.to_json());
  CHECK(back.task_id == t.task_id);
  CHECK(back.task_type == t.task_type);
  CHECK(back.utility == t.utility);
  CHECK(back.decay == t.decay);
  CHECK(back.alpha == t.alpha);
  CHECK(back.arrival_s == t.arrival_s);
  CHECK(back.resources == t.resources);
  CHECK(back.group == t.group);
}

TEST_CASE("task validation") {
  CHECK_THROWS_AS(make_task("", 1, 1, 0, 0).validate(), ConfigError);
  CHECK_THROWS_AS(make_task("a", 0, 1, 0, 0).validate(), ConfigError);
  CHECK_THROWS_AS(make_task("a", 1, 0, 0, 0).validate(), ConfigError);
  CHECK_THROWS_AS(make_task("a", 1, 1, -1, 0).validate(), ConfigError);
  CHECK_THROWS_AS(make_task("a", 1, 1, 0, 0, {{"cpu", -1}}).validate(), ConfigError);
  Task bad_group = make_task("a", 1, 1, 0, 0);
  bad_group.group = "not a segment";
  CHECK_THROWS_AS(bad_group.validate(), ConfigError);
}
