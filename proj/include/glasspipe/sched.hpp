#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "glasspipe/bus.hpp"
#include "glasspipe/util.hpp"

namespace glasspipe {

enum class TaskType { open_url, launch_app, file_op, display_html, unknown };

std::string to_string(TaskType t);
TaskType task_type_from_string(const std::string& s);

struct Task {
  std::string task_id;
  std::string task_type_raw;  // preserved verbatim for the failure path
  TaskType task_type = TaskType::unknown;
  double utility = 1.0;   // > 0
  double decay = 1.0;     // > 0, static divisor
  double alpha = 0.05;    // >= 0, 1/s
  double arrival_s = 0.0;
  std::map<std::string, double> resources;  // non-negative demands
  json payload;
  std::string group = "default";

  void validate() const;
  json to_json() const;
  static Task from_json(const json& j);
};

struct ResourcePool {
  std::map<std::string, double> capacity;
  std::map<std::string, double> allocated;

  bool fits(const std::map<std::string, double>& demand) const;
  bool within_capacity(const std::map<std::string, double>& demand) const;
  void allocate(const std::map<std::string, double>& demand);
  void release(const std::map<std::string, double>& demand);
  void check_invariant() const;  // 0 <= allocated[r] <= capacity[r]
};

// Utility * exp(-alpha * wait) / decay. Negative waits (clock skew) are
// treated as zero wait; the caller may count the warning.
double task_priority(const Task& task, double t_current, int64_t* skew_warnings = nullptr);

struct SchedulerConfig {
  bool backfill = false;  // scan down for the first fitting task instead of blocking
  // "aging" flips the exponent sign (capped) so long-waiting tasks gain
  // priority instead of losing it; experimental, never the default.
  enum class PriorityMode { decay, aging } priority_mode = PriorityMode::decay;
  double aging_cap = 100.0;
};

struct DispatchDecision {
  enum class Kind { idle, dispatched, waiting } kind = Kind::idle;
  std::optional<Task> task;
  double priority = 0.0;
  std::string blocked_task_id;  // set when waiting (head-of-line blocking)
};

struct SubmitResult {
  bool accepted = false;
  std::string reason;
};

// Single-owner priority scheduler: recomputes priorities on every step,
// dispatches the max if its resources fit, otherwise blocks (or backfills
// when configured). Tie-break: earlier arrival, then task_id.
class Scheduler {
 public:
  Scheduler(ResourcePool pool, SchedulerConfig cfg = {});

  // Tasks demanding more than total capacity of any resource are rejected
  // here — they could never dispatch.
  SubmitResult submit(Task task);

  DispatchDecision schedule_step(double t_current);

  // Releases the task's resources.
  void complete(const std::string& task_id);

  double priority_of(const Task& task, double t_current);

  const ResourcePool& pool() const { return pool_; }
  size_t pending() const { return queue_.size(); }
  size_t running() const { return running_.size(); }
  int64_t submitted() const { return submitted_; }
  int64_t dispatched() const { return dispatched_; }
  int64_t completed() const { return completed_; }
  int64_t rejected() const { return rejected_; }
  int64_t skew_warnings() const { return skew_warnings_; }

 private:
  ResourcePool pool_;
  SchedulerConfig cfg_;
  std::vector<Task> queue_;
  std::map<std::string, Task> running_;
  int64_t submitted_ = 0, dispatched_ = 0, completed_ = 0, rejected_ = 0;
  int64_t skew_warnings_ = 0;
};

struct Effect {
  std::string task_id;
  std::string effect_type;
  json details;
  double completed_s = 0.0;

  json to_json() const;
};

// Effect-recording executor: every task type maps to an observable artifact
// (a JSON effect file; display_html additionally writes the HTML payload)
// instead of a real OS action.
class TaskExecutor {
 public:
  explicit TaskExecutor(std::filesystem::path effects_dir);

  Effect execute(const Task& task, double now_s);

  const std::filesystem::path& effects_dir() const { return effects_dir_; }

 private:
  std::filesystem::path effects_dir_;
};

struct PumpResult {
  std::vector<Effect> effects;
  std::vector<double> dispatch_priorities;  // parallel to effects
  int64_t intake_count = 0;
  int64_t first_dispatch_wall_us = 0;  // steady-clock, 0 when nothing dispatched
  int64_t last_effect_wall_us = 0;
};

// Wires bus intake (task.submit.<group>) through the scheduler and executor,
// publishing completions on task.done.<group>. Driven by explicit pump
// calls under the caller's clock.
class SchedulerService {
 public:
  SchedulerService(Broker& broker, Scheduler& scheduler, TaskExecutor& executor);

  // Consumes pending submissions, then dispatches/executes until the step
  // decision is idle or waiting.
  PumpResult pump(double t_s, int64_t now_us);

  int64_t rejected() const { return rejected_; }

 private:
  Broker* broker_;
  Scheduler* scheduler_;
  TaskExecutor* executor_;
  std::string sub_id_;
  int64_t rejected_ = 0;
};

}  // namespace glasspipe
