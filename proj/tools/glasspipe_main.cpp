#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <iostream>
#include <thread>

#include "glasspipe/bus_tcp.hpp"
#include "glasspipe/gaze.hpp"
#include "glasspipe/harness.hpp"
#include "glasspipe/intent.hpp"
#include "glasspipe/memory.hpp"
#include "glasspipe/netpath.hpp"
#include "glasspipe/sched.hpp"
#include "glasspipe/wav.hpp"

namespace gp = glasspipe;

namespace {

std::atomic<bool> g_stop{false};
void handle_sigint(int) { g_stop = true; }

gp::FusionWeights parse_weights(const std::string& csv) {
  gp::FusionWeights w;
  if (csv.empty()) return w;
  double vals[3];
  if (std::sscanf(csv.c_str(), "%lf,%lf,%lf", &vals[0], &vals[1], &vals[2]) != 3)
    throw gp::ConfigError("--weights expects wp,wl,wc");
  w.w_pattern = vals[0];
  w.w_llm = vals[1];
  w.w_context = vals[2];
  w.validate();
  return w;
}

std::map<std::string, double> parse_capacity(const std::string& spec) {
  std::map<std::string, double> cap;
  std::string item;
  std::stringstream ss(spec);
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw gp::ConfigError("--capacity expects name=units,...");
    cap[item.substr(0, eq)] = std::stod(item.substr(eq + 1));
  }
  return cap;
}

int cmd_segment(const std::string& audio, int rate, const gp::SegmenterConfig& cfg) {
  const gp::PcmStream stream = gp::read_audio_file(audio, rate);
  gp::WindowIterator it(stream, cfg);
  while (auto w = it.next()) {
    const gp::VadDecision d = gp::vad_classify(*w, cfg);
    gp::ordered_json line;
    line["index"] = w->index;
    line["start_s"] = w->start_time_s;
    line["end_s"] = w->end_time_s;
    line["energy"] = d.energy;
    line["zcr"] = d.zcr;
    line["is_speech"] = d.is_speech;
    std::cout << line.dump() << "\n";
  }
  return 0;
}

int cmd_classify(const std::string& command, const std::string& registry,
                 const std::string& corpus, int k, const std::string& weights_csv) {
  gp::IntentEngine engine(gp::IntentEngine::load_registry(registry), parse_weights(weights_csv));
  std::optional<gp::MemoryStore> memory;
  if (!corpus.empty()) memory.emplace(gp::MemoryStore::load(corpus));
  const auto scores = engine.classify(command, memory ? &*memory : nullptr, k);
  gp::json out = gp::json::array();
  for (const auto& s : scores)
    out.push_back({{"intent_id", s.intent_id},
                   {"c_intent", s.c_intent},
                   {"p_s", s.p_s},
                   {"l_s", s.l_s},
                   {"c_context", s.c_context}});
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_memory_add(const std::string& corpus, const std::string& id, const std::string& text) {
  gp::MemoryStore store = std::filesystem::exists(corpus) ? gp::MemoryStore::load(corpus)
                                                          : gp::MemoryStore();
  store.add(id, text);
  store.persist(corpus);
  std::cout << "added " << id << " (" << store.size() << " documents)\n";
  return 0;
}

int cmd_memory_query(const std::string& corpus, const std::string& text, int k) {
  const gp::MemoryStore store = gp::MemoryStore::load(corpus);
  gp::json out = gp::json::array();
  for (const auto& r : store.top_k_text(text, k))
    out.push_back({{"doc_id", r.doc_id}, {"similarity", r.similarity}, {"rank", r.rank}});
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_netpath(const std::string& trace_path, const std::string& candidates_path,
                double tick_ms, gp::RateConfig rate_cfg) {
  const gp::LinkSession link = gp::LinkSession::load(trace_path);
  const gp::PathWeights weights;

  std::vector<gp::PathCandidate> static_candidates;
  if (!candidates_path.empty()) {
    for (const auto& c : gp::load_json_file(candidates_path)) {
      gp::PathCandidate cand;
      cand.method = gp::method_from_string(c.at("method_id").get<std::string>());
      cand.metrics.latency_s = c.at("latency_s").get<double>();
      cand.metrics.bandwidth = c.at("bandwidth").get<double>();
      cand.metrics.reliability = c.at("reliability").get<double>();
      static_candidates.push_back(cand);
    }
  }

  for (double t = link.start_time(); t <= link.end_time() + 1e-9; t += tick_ms / 1000.0) {
    const gp::TracePoint& p = link.at(t);
    gp::Method method;
    double score = 0.0;
    if (!static_candidates.empty()) {
      method = gp::select_path(static_candidates, weights);
      for (const auto& c : static_candidates)
        if (c.method == method) score = gp::score_method(c.metrics, weights);
    } else {
      gp::PathCandidate cand{gp::Method::direct_lan,
                             {p.latency_s, std::min(1.0, p.b_available / rate_cfg.b_required),
                              1.0 - p.loss_prob},
                             0.0};
      method = cand.method;
      score = gp::score_method(cand.metrics, weights);
    }
    const double rate = gp::adaptive_rate(rate_cfg, p.b_available, p.latency_s);
    gp::ordered_json line;
    line["t"] = t;
    line["method"] = gp::to_string(method);
    line["score"] = score;
    line["rate"] = rate;
    std::cout << line.dump() << "\n";
  }
  return 0;
}

int cmd_gaze_stream(const std::string& script_path, const std::string& cal_path,
                    const std::string& data_dir) {
  gp::GazeScript script = gp::GazeScript::load(script_path);
  gp::Calibration cal;
  if (!cal_path.empty()) cal = gp::Calibration::load(cal_path);

  gp::BrokerOptions opts;
  opts.data_dir = data_dir;
  gp::Broker broker(opts);
  gp::SyntheticGazeSource source(script);
  gp::GazeStreamSession session(broker, script.device_id, cal, script.rate_hz);
  session.run(source);

  for (const auto& env : broker.replay(session.topic(), 0))
    std::cout << env.payload.dump() << "\n";
  std::cerr << "emitted " << session.stats().emitted << " messages on " << session.topic()
            << "\n";
  return 0;
}

int cmd_bus_serve(uint16_t port, const std::string& data_dir, bool fsync) {
  gp::BrokerOptions opts;
  opts.data_dir = data_dir;
  opts.fsync_on_publish = fsync;
  gp::Broker broker(opts);
  gp::BusTcpServer server(broker, port);
  server.start();
  std::cerr << "bus listening on 127.0.0.1:" << server.port() << " (data: " << data_dir
            << ")\n";
  std::signal(SIGINT, handle_sigint);
  std::signal(SIGTERM, handle_sigint);
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server.stop();
  return 0;
}

int cmd_bus_tail(const std::string& pattern, const std::string& host, uint16_t port) {
  gp::BusTcpClient client(host, port);
  const std::string sub_id = client.subscribe({pattern, /*durable=*/true, 30000});
  std::signal(SIGINT, handle_sigint);
  while (!g_stop) {
    auto d = client.poll_delivery(200);
    if (!d) continue;
    gp::json line = d->envelope.to_json();
    line["redelivered"] = d->redelivered;
    std::cout << line.dump() << "\n" << std::flush;
    client.ack(sub_id, d->envelope.msg_id);
  }
  return 0;
}

int cmd_sched_run(const std::string& capacity, bool backfill, const std::string& tasks_path,
                  const std::string& data_dir, const std::string& effects_dir) {
  gp::ResourcePool pool;
  pool.capacity = parse_capacity(capacity);
  gp::SchedulerConfig cfg;
  cfg.backfill = backfill;
  gp::Scheduler scheduler(pool, cfg);
  gp::TaskExecutor executor(effects_dir);

  if (!tasks_path.empty()) {
    // Offline mode: virtual clock stepped over the arrival times.
    std::vector<gp::Task> tasks;
    for (const auto& t : gp::load_json_file(tasks_path)) tasks.push_back(gp::Task::from_json(t));
    std::sort(tasks.begin(), tasks.end(),
              [](const gp::Task& a, const gp::Task& b) { return a.arrival_s < b.arrival_s; });
    size_t next = 0;
    std::vector<double> times;
    for (const auto& t : tasks) times.push_back(t.arrival_s);
    for (double t_now : times) {
      while (next < tasks.size() && tasks[next].arrival_s <= t_now) {
        const auto r = scheduler.submit(tasks[next++]);
        if (!r.accepted) std::cerr << "rejected: " << r.reason << "\n";
      }
      while (true) {
        const auto d = scheduler.schedule_step(t_now);
        if (d.kind != gp::DispatchDecision::Kind::dispatched) break;
        const gp::Effect e = executor.execute(*d.task, t_now);
        scheduler.complete(d.task->task_id);
        gp::ordered_json line;
        line["t"] = t_now;
        line["task_id"] = e.task_id;
        line["priority"] = d.priority;
        line["effect_type"] = e.effect_type;
        std::cout << line.dump() << "\n";
      }
    }
    return 0;
  }

  // Bus mode: consume task.submit.# from a broker data dir until drained.
  gp::BrokerOptions opts;
  opts.data_dir = data_dir;
  gp::Broker broker(opts);
  gp::SchedulerService service(broker, scheduler, executor);
  const auto result = service.pump(/*t_s=*/0.0, /*now_us=*/0);
  for (const auto& e : result.effects)
    std::cout << e.to_json().dump() << "\n";
  std::cerr << "intake=" << result.intake_count << " executed=" << result.effects.size()
            << " rejected=" << service.rejected() << "\n";
  return 0;
}

int cmd_run(const std::string& scenario_path, std::string data_dir, int64_t seed_override,
            bool json_out, bool verify) {
  gp::Scenario scenario = gp::Scenario::load(scenario_path);
  if (seed_override >= 0) scenario.seed = static_cast<uint64_t>(seed_override);
  if (data_dir.empty()) data_dir = "out/" + scenario.name;
  std::filesystem::remove_all(data_dir);

  const gp::RunReport report = gp::run_scenario(scenario, data_dir);
  gp::write_text_file(std::filesystem::path(data_dir) / "report.json",
                      report.to_json().dump(2) + "\n");
  gp::write_text_file(std::filesystem::path(data_dir) / "decisions.log",
                      report.normalized_decision_log());

  if (json_out) std::cout << report.to_json().dump(2) << "\n";

  if (verify) {
    const gp::CheckResult check = gp::report_check(report, scenario);
    for (const auto& d : check.diffs) std::cerr << "  diff: " << d << "\n";
    std::cout << (check.pass ? "PASS " : "FAIL ") << scenario.name << "\n";
    return check.pass ? 0 : 1;
  }
  if (!json_out)
    std::cout << "scenario " << scenario.name << ": " << report.effects.size()
              << " effects, compute " << report.latencies.compute_total_us() << "us\n";
  return report.failure_stage.empty() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"glasspipe: deterministic AI-glasses pipeline (audio -> intent -> tasks)"};
  app.require_subcommand(1);

  // segment
  auto* segment = app.add_subcommand("segment", "Window a PCM/WAV file and run VAD");
  std::string audio_path;
  int rate = 16000;
  gp::SegmenterConfig seg_cfg;
  segment->add_option("--audio", audio_path, "WAV or raw 16-bit PCM file")->required();
  segment->add_option("--rate", rate, "sample rate for raw PCM");
  segment->add_option("--window", seg_cfg.window_duration_s, "window duration (s)");
  segment->add_option("--hop", seg_cfg.hop_s, "hop (s)");
  segment->add_option("--energy-threshold", seg_cfg.energy_threshold, "VAD energy threshold");
  segment->add_option("--zcr-threshold", seg_cfg.zcr_threshold, "VAD zero-crossing threshold");

  // classify
  auto* classify = app.add_subcommand("classify", "Rank intents for a command");
  std::string command, registry_path, corpus_path, weights_csv;
  int k = 3;
  classify->add_option("--command", command, "command text")->required();
  classify->add_option("--registry", registry_path, "intent registry JSON")->required();
  classify->add_option("--memory", corpus_path, "memory corpus JSONL for context");
  classify->add_option("--k", k, "context top-k");
  classify->add_option("--weights", weights_csv, "fusion weights wp,wl,wc");

  // memory
  auto* memory = app.add_subcommand("memory", "Embedding store operations");
  memory->require_subcommand(1);
  std::string mem_corpus, mem_id, mem_text;
  int mem_k = 3;
  auto* mem_add = memory->add_subcommand("add", "Add a document");
  mem_add->add_option("--corpus", mem_corpus, "corpus JSONL path")->required();
  mem_add->add_option("--id", mem_id, "document id")->required();
  mem_add->add_option("--text", mem_text, "document text")->required();
  auto* mem_query = memory->add_subcommand("query", "Cosine top-k query");
  mem_query->add_option("--corpus", mem_corpus, "corpus JSONL path")->required();
  mem_query->add_option("--text", mem_text, "query text")->required();
  mem_query->add_option("--k", mem_k, "result count");

  // netpath
  auto* netpath = app.add_subcommand("netpath", "Network path scoring");
  netpath->require_subcommand(1);
  auto* netpath_score = netpath->add_subcommand("score", "Score a link trace per tick");
  std::string trace_path, candidates_path;
  double tick_ms = 100.0;
  gp::RateConfig rate_cfg;
  netpath_score->add_option("--trace", trace_path, "trace JSON")->required();
  netpath_score->add_option("--candidates", candidates_path, "static candidate metrics JSON");
  netpath_score->add_option("--tick-ms", tick_ms, "evaluation cadence");
  netpath_score->add_option("--r-max", rate_cfg.r_max, "max streaming rate");
  netpath_score->add_option("--b-required", rate_cfg.b_required, "required bandwidth");
  netpath_score->add_option("--lambda", rate_cfg.lambda, "latency penalty (1/s)");

  // gaze
  auto* gaze = app.add_subcommand("gaze", "Gaze fusion streaming");
  gaze->require_subcommand(1);
  auto* gaze_stream = gaze->add_subcommand("stream", "Run a scripted gaze session to a bus dir");
  std::string gaze_script, gaze_cal, gaze_data_dir = "out/gaze_bus";
  gaze_stream->add_option("--script", gaze_script, "gaze script JSON")->required();
  gaze_stream->add_option("--calibration", gaze_cal, "calibration JSON");
  gaze_stream->add_option("--data-dir", gaze_data_dir, "bus data dir");

  // bus
  auto* bus = app.add_subcommand("bus", "Message bus over TCP");
  bus->require_subcommand(1);
  auto* serve = bus->add_subcommand("serve", "Serve a broker data dir over TCP");
  uint16_t port = 7071;
  std::string bus_data_dir = "out/bus";
  bool no_fsync = false;
  serve->add_option("--port", port, "listen port (0 = ephemeral)");
  serve->add_option("--data-dir", bus_data_dir, "durable log directory");
  serve->add_flag("--no-fsync", no_fsync, "skip fsync on publish");
  auto* tail = bus->add_subcommand("tail", "Follow messages matching a pattern");
  std::string tail_pattern, tail_host = "127.0.0.1";
  uint16_t tail_port = 7071;
  tail->add_option("pattern", tail_pattern, "topic pattern (*/# wildcards)")->required();
  tail->add_option("--host", tail_host, "server host");
  tail->add_option("--port", tail_port, "server port");

  // sched
  auto* sched = app.add_subcommand("sched", "Priority task scheduler");
  sched->require_subcommand(1);
  auto* sched_run = sched->add_subcommand("run", "Dispatch tasks under resource constraints");
  std::string capacity = "cpu=4,display=1", tasks_path, sched_data_dir = "out/bus",
              effects_dir = "out/effects";
  bool backfill = false;
  sched_run->add_option("--capacity", capacity, "resource capacity name=units,...");
  sched_run->add_flag("--backfill", backfill, "skip blocked head-of-line tasks");
  sched_run->add_option("--tasks", tasks_path, "offline task list JSON (virtual clock)");
  sched_run->add_option("--data-dir", sched_data_dir, "bus data dir for task.submit intake");
  sched_run->add_option("--effects-dir", effects_dir, "effect output directory");

  // run / verify
  std::string scenario_path, run_data_dir;
  int64_t seed_override = -1;
  bool json_out = false;
  auto* run = app.add_subcommand("run", "Run a scenario end to end");
  run->add_option("scenario", scenario_path, "scenario JSON")->required();
  run->add_option("--data-dir", run_data_dir, "run output directory");
  run->add_option("--seed", seed_override, "override the scenario seed");
  run->add_flag("--json", json_out, "print the full report JSON");
  auto* verify = app.add_subcommand("verify", "Run a scenario and check expected effects");
  verify->add_option("scenario", scenario_path, "scenario JSON")->required();
  verify->add_option("--data-dir", run_data_dir, "run output directory");
  verify->add_option("--seed", seed_override, "override the scenario seed");
  verify->add_flag("--json", json_out, "print the full report JSON");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*segment) return cmd_segment(audio_path, rate, seg_cfg);
    if (*classify) return cmd_classify(command, registry_path, corpus_path, k, weights_csv);
    if (*mem_add) return cmd_memory_add(mem_corpus, mem_id, mem_text);
    if (*mem_query) return cmd_memory_query(mem_corpus, mem_text, mem_k);
    if (*netpath_score) return cmd_netpath(trace_path, candidates_path, tick_ms, rate_cfg);
    if (*gaze_stream) return cmd_gaze_stream(gaze_script, gaze_cal, gaze_data_dir);
    if (*serve) return cmd_bus_serve(port, bus_data_dir, !no_fsync);
    if (*tail) return cmd_bus_tail(tail_pattern, tail_host, tail_port);
    if (*sched_run)
      return cmd_sched_run(capacity, backfill, tasks_path, sched_data_dir, effects_dir);
    if (*run) return cmd_run(scenario_path, run_data_dir, seed_override, json_out, false);
    if (*verify) return cmd_run(scenario_path, run_data_dir, seed_override, json_out, true);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
