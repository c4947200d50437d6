#include "glasspipe/sched.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace glasspipe {

std::string to_string(TaskType t) {
  switch (t) {
    case TaskType::open_url: return "open_url";
    case TaskType::launch_app: return "launch_app";
    case TaskType::file_op: return "file_op";
    case TaskType::display_html: return "display_html";
    case TaskType::unknown: return "unknown";
  }
  return "unknown";
}

TaskType task_type_from_string(const std::string& s) {
  if (s == "open_url") return TaskType::open_url;
  if (s == "launch_app") return TaskType::launch_app;
  if (s == "file_op") return TaskType::file_op;
  if (s == "display_html") return TaskType::display_html;
  return TaskType::unknown;
}

void Task::validate() const {
  if (task_id.empty()) throw ConfigError("task_id must be non-empty");
  if (!(utility > 0.0)) throw ConfigError(task_id + ": utility must be > 0");
  if (!(decay > 0.0)) throw ConfigError(task_id + ": decay must be > 0");
  if (alpha < 0.0) throw ConfigError(task_id + ": alpha must be >= 0");
  for (const auto& [name, units] : resources)
    if (units < 0.0) throw ConfigError(task_id + ": negative resource demand for " + name);
  if (!topic_valid("task.done." + group))
    throw ConfigError(task_id + ": group is not a valid topic segment: " + group);
}

json Task::to_json() const {
  json j;
  j["task_id"] = task_id;
  j["task_type"] = task_type_raw.empty() ? to_string(task_type) : task_type_raw;
  j["utility"] = utility;
  j["decay"] = decay;
  j["alpha"] = alpha;
  j["arrival_s"] = arrival_s;
  j["resources"] = resources;
  j["payload"] = payload;
  j["group"] = group;
  return j;
}

Task Task::from_json(const json& j) {
  Task t;
  t.task_id = j.at("task_id").get<std::string>();
  t.task_type_raw = j.at("task_type").get<std::string>();
  t.task_type = task_type_from_string(t.task_type_raw);
  t.utility = j.value("utility", 1.0);
  t.decay = j.value("decay", 1.0);
  t.alpha = j.value("alpha", 0.05);
  t.arrival_s = j.value("arrival_s", 0.0);
  if (j.contains("resources"))
    t.resources = j["resources"].get<std::map<std::string, double>>();
  t.payload = j.value("payload", json());
  t.group = j.value("group", "default");
  t.validate();
  return t;
}

bool ResourcePool::fits(const std::map<std::string, double>& demand) const {
  for (const auto& [name, units] : demand) {
    const auto cap_it = capacity.find(name);
    const double cap = cap_it == capacity.end() ? 0.0 : cap_it->second;
    const auto alloc_it = allocated.find(name);
    const double used = alloc_it == allocated.end() ? 0.0 : alloc_it->second;
    if (units > cap - used + 1e-12) return false;
  }
  return true;
}

bool ResourcePool::within_capacity(const std::map<std::string, double>& demand) const {
  for (const auto& [name, units] : demand) {
    const auto cap_it = capacity.find(name);
    const double cap = cap_it == capacity.end() ? 0.0 : cap_it->second;
    if (units > cap + 1e-12) return false;
  }
  return true;
}

void ResourcePool::allocate(const std::map<std::string, double>& demand) {
  if (!fits(demand)) throw ConfigError("allocation exceeds available resources");
  for (const auto& [name, units] : demand) allocated[name] += units;
  check_invariant();
}

void ResourcePool::release(const std::map<std::string, double>& demand) {
  for (const auto& [name, units] : demand) {
    allocated[name] -= units;
    if (allocated[name] < 1e-12) allocated[name] = 0.0;
  }
  check_invariant();
}

void ResourcePool::check_invariant() const {
  for (const auto& [name, used] : allocated) {
    const auto cap_it = capacity.find(name);
    const double cap = cap_it == capacity.end() ? 0.0 : cap_it->second;
    if (used < -1e-9 || used > cap + 1e-9)
      throw ConfigError("resource invariant violated for " + name);
  }
}

double task_priority(const Task& task, double t_current, int64_t* skew_warnings) {
  double wait = t_current - task.arrival_s;
  if (wait < 0.0) {
    if (skew_warnings) ++(*skew_warnings);
    wait = 0.0;
  }
  return task.utility * std::exp(-task.alpha * wait) / task.decay;
}

Scheduler::Scheduler(ResourcePool pool, SchedulerConfig cfg)
    : pool_(std::move(pool)), cfg_(cfg) {
  pool_.check_invariant();
}

double Scheduler::priority_of(const Task& task, double t_current) {
  double p = task_priority(task, t_current, &skew_warnings_);
  if (cfg_.priority_mode == SchedulerConfig::PriorityMode::aging) {
    const double wait = std::max(0.0, t_current - task.arrival_s);
    p = task.utility * std::min(std::exp(task.alpha * wait), cfg_.aging_cap) / task.decay;
  }
  return p;
}

SubmitResult Scheduler::submit(Task task) {
  task.validate();
  if (!pool_.within_capacity(task.resources)) {
    ++rejected_;
    return {false, task.task_id + " demands more than total capacity; would wait forever"};
  }
  ++submitted_;
  queue_.push_back(std::move(task));
  return {true, ""};
}

DispatchDecision Scheduler::schedule_step(double t_current) {
  pool_.check_invariant();
  if (queue_.empty()) return {};

  // Recompute every priority at t_current, then order the queue.
  struct Ranked {
    double priority;
    size_t index;
  };
  std::vector<Ranked> ranked;
  ranked.reserve(queue_.size());
  for (size_t i = 0; i < queue_.size(); ++i)
    ranked.push_back({priority_of(queue_[i], t_current), i});

  std::sort(ranked.begin(), ranked.end(), [this](const Ranked& a, const Ranked& b) {
    if (a.priority != b.priority) return a.priority > b.priority;
    const Task& ta = queue_[a.index];
    const Task& tb = queue_[b.index];
    if (ta.arrival_s != tb.arrival_s) return ta.arrival_s < tb.arrival_s;
    return ta.task_id < tb.task_id;
  });

  const size_t limit = cfg_.backfill ? ranked.size() : 1;
  for (size_t r = 0; r < limit; ++r) {
    const Task& candidate = queue_[ranked[r].index];
    if (!pool_.fits(candidate.resources)) continue;

    DispatchDecision d;
    d.kind = DispatchDecision::Kind::dispatched;
    d.priority = ranked[r].priority;
    d.task = candidate;
    pool_.allocate(candidate.resources);
    running_.emplace(candidate.task_id, candidate);
    queue_.erase(queue_.begin() + static_cast<ptrdiff_t>(ranked[r].index));
    ++dispatched_;
    pool_.check_invariant();
    return d;
  }

  DispatchDecision d;
  d.kind = DispatchDecision::Kind::waiting;
  d.priority = ranked.front().priority;
  d.blocked_task_id = queue_[ranked.front().index].task_id;
  return d;
}

void Scheduler::complete(const std::string& task_id) {
  auto it = running_.find(task_id);
  if (it == running_.end()) throw ConfigError("complete: unknown task " + task_id);
  pool_.release(it->second.resources);
  running_.erase(it);
  ++completed_;
  pool_.check_invariant();
}

json Effect::to_json() const {
  json j;
  j["task_id"] = task_id;
  j["effect_type"] = effect_type;
  j["details"] = details;
  j["completed_s"] = completed_s;
  return j;
}

TaskExecutor::TaskExecutor(std::filesystem::path effects_dir)
    : effects_dir_(std::move(effects_dir)) {
  std::filesystem::create_directories(effects_dir_);
}

Effect TaskExecutor::execute(const Task& task, double now_s) {
  Effect e;
  e.task_id = task.task_id;
  e.completed_s = now_s;

  switch (task.task_type) {
    case TaskType::open_url:
      e.effect_type = "open_url";
      e.details["url"] = task.payload.value("url", "");
      break;
    case TaskType::launch_app:
      e.effect_type = "launch_app";
      e.details["app"] = task.payload.value("app", "");
      break;
    case TaskType::file_op:
      e.effect_type = "file_op";
      e.details["op"] = task.payload.value("op", "");
      e.details["path"] = task.payload.value("path", "");
      break;
    case TaskType::display_html: {
      e.effect_type = "display_html";
      const std::string html = task.payload.value("html", "");
      const std::string rel = "html/" + task.task_id + ".html";
      write_text_file(effects_dir_ / rel, html);
      // Stored relative to the effects dir so same-seed runs in different
      // directories produce identical logs.
      e.details["html_path"] = rel;
      e.details["title"] = task.payload.value("title", "");
      e.details["html"] = html;
      break;
    }
    case TaskType::unknown:
      e.effect_type = "failure";
      e.details["reason"] = "unknown task_type";
      e.details["requested_type"] = task.task_type_raw;
      break;
  }

  write_text_file(effects_dir_ / (task.task_id + ".json"), e.to_json().dump(2) + "\n");
  return e;
}

SchedulerService::SchedulerService(Broker& broker, Scheduler& scheduler, TaskExecutor& executor)
    : broker_(&broker), scheduler_(&scheduler), executor_(&executor) {
  sub_id_ = broker_->subscribe({"task.submit.#", /*durable=*/true, /*ack_deadline_ms=*/30000});
}

PumpResult SchedulerService::pump(double t_s, int64_t now_us) {
  const auto steady_us = [] {
    return std::chrono::duration_cast<std::chrono::microseconds>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
  };

  PumpResult result;

  // Intake: drain every pending submission envelope.
  while (auto delivery = broker_->next(sub_id_, now_us)) {
    try {
      Task task = Task::from_json(delivery->envelope.payload);
      const SubmitResult r = scheduler_->submit(std::move(task));
      if (!r.accepted) ++rejected_;
    } catch (const std::exception&) {
      ++rejected_;  // malformed submission; acked below so it is not redelivered
    }
    ++result.intake_count;
    broker_->ack(sub_id_, delivery->envelope.msg_id);
  }

  // Dispatch and execute until the pool blocks or the queue empties.
  while (true) {
    const DispatchDecision d = scheduler_->schedule_step(t_s);
    if (d.kind != DispatchDecision::Kind::dispatched) break;
    if (result.first_dispatch_wall_us == 0) result.first_dispatch_wall_us = steady_us();

    Effect e = executor_->execute(*d.task, t_s);
    scheduler_->complete(d.task->task_id);
    result.last_effect_wall_us = steady_us();
    result.effects.push_back(e);
    result.dispatch_priorities.push_back(d.priority);

    Envelope done;
    done.topic = "task.done." + d.task->group;
    done.command_type = e.effect_type;
    done.group = d.task->group;
    done.payload = e.to_json();
    done.ts_us = now_us;
    broker_->publish(std::move(done));
  }
  return result;
}

}  // namespace glasspipe
