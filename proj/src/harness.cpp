#include "glasspipe/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "glasspipe/gaze.hpp"
#include "glasspipe/netpath.hpp"
#include "glasspipe/wav.hpp"

namespace glasspipe {

namespace {

int64_t steady_us() {
  return std::chrono::duration_cast<std::chrono::microseconds>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::string resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_relative()) path = base / path;
  return path.string();
}

void require_file(const std::string& path, const std::string& what) {
  if (!std::filesystem::exists(path))
    throw ConfigError("scenario references missing " + what + ": " + path);
}

// Substitutes {command}, {command_urlencoded} and {context_top1} in every
// string value of the payload template.
json instantiate_payload(const json& tmpl, const std::string& command,
                         const std::string& context_top1) {
  if (tmpl.is_string()) {
    std::string s = tmpl.get<std::string>();
    const auto replace_all = [&s](const std::string& key, const std::string& value) {
      size_t pos = 0;
      while ((pos = s.find(key, pos)) != std::string::npos) {
        s.replace(pos, key.size(), value);
        pos += value.size();
      }
    };
    replace_all("{command_urlencoded}", percent_encode(command));
    replace_all("{command}", command);
    replace_all("{context_top1}", context_top1);
    return s;
  }
  if (tmpl.is_object()) {
    json out = json::object();
    for (auto it = tmpl.begin(); it != tmpl.end(); ++it)
      out[it.key()] = instantiate_payload(it.value(), command, context_top1);
    return out;
  }
  if (tmpl.is_array()) {
    json out = json::array();
    for (const auto& v : tmpl) out.push_back(instantiate_payload(v, command, context_top1));
    return out;
  }
  return tmpl;
}

class DecisionLog {
 public:
  void add(std::vector<json>& out, const std::string& stage, json detail) {
    json entry;
    entry["seq"] = next_++;
    entry["stage"] = stage;
    entry["ts_us"] = steady_us();
    entry["detail"] = std::move(detail);
    out.push_back(std::move(entry));
  }

 private:
  int64_t next_ = 0;
};

}  // namespace

PcmStream synth_audio(const SyntheticAudioSpec& spec, int sample_rate_hz) {
  if (spec.duration_s <= 0.0) throw ConfigError("synthetic audio duration must be > 0");
  if (spec.amplitude < 0.0 || spec.amplitude > 1.0)
    throw ConfigError("synthetic audio amplitude must be in [0,1]");

  PcmStream stream;
  stream.sample_rate_hz = sample_rate_hz;
  const auto n = static_cast<size_t>(std::llround(spec.duration_s * sample_rate_hz));
  stream.samples.assign(n, 0);

  if (spec.kind == "silence") return stream;
  if (spec.kind == "sine") {
    for (size_t i = 0; i < n; ++i) {
      const double t = static_cast<double>(i) / sample_rate_hz;
      stream.samples[i] = static_cast<int16_t>(
          std::llround(32767.0 * spec.amplitude * std::sin(2.0 * M_PI * spec.freq_hz * t)));
    }
    return stream;
  }
  if (spec.kind == "noise") {
    Rng rng(spec.seed);
    for (size_t i = 0; i < n; ++i)
      stream.samples[i] =
          static_cast<int16_t>(std::llround(32767.0 * spec.amplitude * (rng.uniform01() * 2.0 - 1.0)));
    return stream;
  }
  throw ConfigError("unknown synthetic audio kind: " + spec.kind);
}

Scenario Scenario::load(const std::filesystem::path& path) {
  const json j = load_json_file(path);
  const auto base = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");

  Scenario s;
  s.name = j.at("name").get<std::string>();
  s.seed = j.value("seed", uint64_t{0});
  if (j.contains("transcript")) s.transcript = j["transcript"].get<std::string>();

  if (j.contains("audio")) {
    const json& a = j["audio"];
    ScenarioAudio audio;
    audio.rate = a.value("rate", 16000);
    audio.transcript = a.value("transcript", "");
    if (a.contains("path")) {
      audio.path = resolve(base, a["path"].get<std::string>());
      require_file(*audio.path, "audio file");
    } else if (a.contains("synthetic")) {
      const json& syn = a["synthetic"];
      SyntheticAudioSpec spec;
      spec.kind = syn.value("kind", spec.kind);
      spec.duration_s = syn.value("duration_s", spec.duration_s);
      spec.freq_hz = syn.value("freq_hz", spec.freq_hz);
      spec.amplitude = syn.value("amplitude", spec.amplitude);
      spec.seed = syn.value("seed", spec.seed);
      audio.synthetic = spec;
    } else {
      throw ConfigError("scenario audio needs a path or a synthetic spec");
    }
    s.audio = std::move(audio);
  }

  s.intent_registry_path = resolve(base, j.at("intent_registry").get<std::string>());
  require_file(s.intent_registry_path, "intent registry");

  if (j.contains("memory_seed"))
    for (const auto& d : j["memory_seed"])
      s.memory_seed.push_back({d.at("doc_id").get<std::string>(), d.at("text").get<std::string>()});

  if (j.contains("link_trace")) {
    s.link_trace_path = resolve(base, j["link_trace"].get<std::string>());
    require_file(*s.link_trace_path, "link trace");
  }
  if (j.contains("gaze_script")) {
    s.gaze_script_path = resolve(base, j["gaze_script"].get<std::string>());
    require_file(*s.gaze_script_path, "gaze script");
  }
  if (j.contains("calibration")) {
    s.calibration_path = resolve(base, j["calibration"].get<std::string>());
    require_file(*s.calibration_path, "calibration file");
  }

  for (const auto& e : j.value("expected_effects", json::array())) {
    ExpectedEffect exp;
    exp.effect_type = e.at("effect_type").get<std::string>();
    exp.match = e.value("match", json::object());
    s.expected_effects.push_back(std::move(exp));
  }

  s.intent_cutoff = j.value("intent_cutoff", s.intent_cutoff);
  s.context_k = j.value("context_k", s.context_k);
  if (j.contains("weights")) {
    const json& w = j["weights"];
    s.weights.w_pattern = w.value("w_pattern", s.weights.w_pattern);
    s.weights.w_llm = w.value("w_llm", s.weights.w_llm);
    s.weights.w_context = w.value("w_context", s.weights.w_context);
  }
  s.weights.validate();
  if (j.contains("segmenter")) {
    const json& c = j["segmenter"];
    s.segmenter.window_duration_s = c.value("window_duration_s", s.segmenter.window_duration_s);
    s.segmenter.hop_s = c.value("hop_s", s.segmenter.hop_s);
    s.segmenter.energy_threshold = c.value("energy_threshold", s.segmenter.energy_threshold);
    s.segmenter.zcr_threshold = c.value("zcr_threshold", s.segmenter.zcr_threshold);
  }
  s.segmenter.validate();
  return s;
}

json RunReport::to_json() const {
  json j;
  j["scenario"] = scenario;
  j["seed"] = seed;
  j["latencies_us"] = {{"segmentation", latencies.segmentation_us},
                       {"classify", latencies.classify_us},
                       {"publish_to_dispatch", latencies.publish_to_dispatch_us},
                       {"dispatch_to_effect", latencies.dispatch_to_effect_us},
                       {"compute_total", latencies.compute_total_us()}};
  j["decisions"] = decisions;
  json effects_json = json::array();
  for (const auto& e : effects) effects_json.push_back(e.to_json());
  j["effects"] = effects_json;
  j["counters"] = {{"tasks_submitted", tasks_submitted},
                   {"tasks_done", tasks_done},
                   {"tasks_rejected", tasks_rejected},
                   {"gaze_emitted", gaze_emitted},
                   {"gaze_dropped", gaze_dropped},
                   {"gaze_buffer_overflows", gaze_buffer_overflows},
                   {"bus_published", bus_published},
                   {"bus_delivered", bus_delivered},
                   {"bus_redeliveries", bus_redeliveries}};
  j["failure_stage"] = failure_stage;
  return j;
}

std::string RunReport::normalized_decision_log() const {
  std::string out;
  for (const auto& d : decisions) {
    json e = d;
    e["ts_us"] = 0;
    out += e.dump();
    out += '\n';
  }
  return out;
}

RunReport run_scenario(const Scenario& scenario, const std::filesystem::path& data_dir) {
  RunReport report;
  report.scenario = scenario.name;
  report.seed = scenario.seed;
  DecisionLog log;

  std::filesystem::create_directories(data_dir);
  BrokerOptions bus_opts;
  bus_opts.data_dir = data_dir / "bus";
  Broker broker(bus_opts);

  log.add(report.decisions, "scenario_start",
          {{"name", scenario.name}, {"seed", scenario.seed}});

  std::string current_stage = "setup";
  try {
    // Stage 1: audio -> transcript (ASR itself is stubbed; scenarios attach
    // the transcript their labeled clip maps to).
    std::string transcript;
    if (scenario.audio) {
      current_stage = "segmentation";
      PcmStream stream = scenario.audio->path
                             ? read_audio_file(*scenario.audio->path, scenario.audio->rate)
                             : synth_audio(*scenario.audio->synthetic, scenario.audio->rate);
      const int64_t t0 = steady_us();
      WindowIterator it(stream, scenario.segmenter);
      int64_t windows = 0, speech_windows = 0;
      while (auto w = it.next()) {
        ++windows;
        if (vad_classify(*w, scenario.segmenter).is_speech) ++speech_windows;
      }
      report.latencies.segmentation_us = steady_us() - t0;
      const bool has_speech = speech_windows > 0;
      transcript = has_speech ? scenario.audio->transcript : "";
      log.add(report.decisions, "segmentation",
              {{"windows", windows},
               {"speech_windows", speech_windows},
               {"transcript_used", has_speech}});
    } else if (scenario.transcript) {
      transcript = *scenario.transcript;
      log.add(report.decisions, "transcript", {{"scripted", true}});
    }

    // Stage 2: conversation memory.
    current_stage = "memory_seed";
    MemoryStore memory;
    for (const auto& d : scenario.memory_seed) memory.add(d.doc_id, d.text);
    log.add(report.decisions, "memory_seed", {{"documents", memory.size()}});

    // Stage 3: intent classification.
    std::optional<IntentScore> selected;
    const IntentDef* intent_def = nullptr;
    std::string context_top1;
    IntentEngine engine(IntentEngine::load_registry(scenario.intent_registry_path),
                        scenario.weights);
    if (transcript.empty()) {
      log.add(report.decisions, "no_command", {{"reason", "no speech or transcript"}});
    } else {
      current_stage = "classify";
      const int64_t t0 = steady_us();
      const auto scores = engine.classify(transcript, &memory, scenario.context_k);
      report.latencies.classify_us = steady_us() - t0;

      json ranked = json::array();
      for (const auto& s : scores)
        ranked.push_back({{"intent_id", s.intent_id},
                          {"c_intent", s.c_intent},
                          {"p_s", s.p_s},
                          {"l_s", s.l_s},
                          {"c_context", s.c_context}});
      log.add(report.decisions, "classify",
              {{"command", normalize_command(transcript)}, {"ranked", ranked}});

      if (!scores.empty() && scores.front().c_intent >= scenario.intent_cutoff) {
        selected = scores.front();
        intent_def = engine.find(selected->intent_id);
        const auto docs = memory.top_k_text(normalize_command(transcript), scenario.context_k);
        if (!docs.empty()) {
          for (const auto& d : memory.documents())
            if (d.doc_id == docs.front().doc_id) context_top1 = d.text;
        }
        log.add(report.decisions, "intent_selected",
                {{"intent_id", selected->intent_id},
                 {"c_intent", selected->c_intent},
                 {"cutoff", scenario.intent_cutoff},
                 {"context_top1_doc", docs.empty() ? "" : docs.front().doc_id}});
      } else {
        log.add(report.decisions, "no_intent",
                {{"cutoff", scenario.intent_cutoff},
                 {"top_score", scores.empty() ? 0.0 : scores.front().c_intent}});
      }
    }

    // Stage 4: task over the bus -> scheduler -> effect.
    ResourcePool pool;
    pool.capacity = {{"cpu", 4.0}, {"display", 1.0}};
    Scheduler scheduler(pool);
    TaskExecutor executor(data_dir / "effects");
    SchedulerService service(broker, scheduler, executor);

    if (selected && intent_def) {
      current_stage = "task_submit";
      Task task;
      task.task_id = "t0001";
      task.task_type_raw = intent_def->task_type;
      task.task_type = task_type_from_string(intent_def->task_type);
      task.group = intent_def->group;
      task.arrival_s = 0.0;
      task.payload = instantiate_payload(intent_def->payload_template,
                                         normalize_command(transcript), context_top1);
      if (intent_def->resources.is_object())
        for (auto it = intent_def->resources.begin(); it != intent_def->resources.end(); ++it)
          task.resources[it.key()] = it.value().get<double>();

      Envelope env;
      env.topic = "task.submit." + task.group;
      env.command_type = intent_def->task_type;
      env.group = task.group;
      env.payload = task.to_json();
      env.priority_hint = selected->c_intent;
      env.ts_us = 0;

      const int64_t t_pub = steady_us();
      const Receipt receipt = broker.publish(std::move(env));
      ++report.tasks_submitted;
      log.add(report.decisions, "publish",
              {{"topic", receipt.topic}, {"msg_id", receipt.msg_id}, {"seq", receipt.seq}});

      current_stage = "dispatch";
      const PumpResult pumped = service.pump(/*t_s=*/0.0, /*now_us=*/0);
      report.tasks_rejected += service.rejected();
      if (pumped.first_dispatch_wall_us > 0) {
        report.latencies.publish_to_dispatch_us = pumped.first_dispatch_wall_us - t_pub;
        report.latencies.dispatch_to_effect_us =
            pumped.last_effect_wall_us - pumped.first_dispatch_wall_us;
      }
      for (size_t i = 0; i < pumped.effects.size(); ++i) {
        const Effect& e = pumped.effects[i];
        report.effects.push_back(e);
        ++report.tasks_done;
        log.add(report.decisions, "dispatch",
                {{"task_id", e.task_id}, {"priority", pumped.dispatch_priorities[i]}});
        log.add(report.decisions, "effect",
                {{"task_id", e.task_id}, {"effect_type", e.effect_type}, {"details", e.details}});
      }
      if (service.rejected() > 0)
        log.add(report.decisions, "task_rejected", {{"count", service.rejected()}});
    }

    // Stage 5: gaze stream session (independent producer).
    if (scenario.gaze_script_path) {
      current_stage = "gaze";
      GazeScript script = GazeScript::load(*scenario.gaze_script_path);
      script.seed = script.seed ^ scenario.seed;  // scenario seed perturbs the script stream
      Calibration cal;
      if (scenario.calibration_path) cal = Calibration::load(*scenario.calibration_path);
      SyntheticGazeSource source(script);
      GazeStreamSession session(broker, script.device_id, cal, script.rate_hz);
      session.run(source);
      report.gaze_emitted = session.stats().emitted;
      report.gaze_dropped = session.stats().dropped_pairs;
      report.gaze_buffer_overflows = session.stats().buffer_overflows;
      log.add(report.decisions, "gaze",
              {{"topic", session.topic()},
               {"emitted", session.stats().emitted},
               {"dropped_pairs", session.stats().dropped_pairs}});
    }

    // Stage 6: network path session.
    if (scenario.link_trace_path) {
      current_stage = "netpath";
      LinkSession link = LinkSession::load(*scenario.link_trace_path);
      const PathWeights weights;
      const RateConfig rate_cfg;
      int64_t ticks = 0;
      double last_rate = 0.0, min_rate = 0.0, max_rate = 0.0;
      for (double t = link.start_time(); t <= link.end_time() + 1e-9; t += 0.1) {
        const TracePoint& p = link.at(t);
        PathCandidate cand{Method::direct_lan,
                           {p.latency_s, std::min(1.0, p.b_available / rate_cfg.b_required),
                            1.0 - p.loss_prob},
                           0.0};
        (void)select_path(std::span(&cand, 1), weights);
        last_rate = adaptive_rate(rate_cfg, p.b_available, p.latency_s);
        min_rate = ticks == 0 ? last_rate : std::min(min_rate, last_rate);
        max_rate = ticks == 0 ? last_rate : std::max(max_rate, last_rate);
        ++ticks;
      }
      log.add(report.decisions, "netpath",
              {{"ticks", ticks}, {"min_rate", min_rate}, {"max_rate", max_rate},
               {"final_rate", last_rate}});
    }

    log.add(report.decisions, "scenario_end", {{"effects", report.effects.size()}});
  } catch (const std::exception& e) {
    report.failure_stage = current_stage;
    log.add(report.decisions, "failure", {{"stage", current_stage}, {"error", e.what()}});
  }
  const BrokerStats bus_stats = broker.stats();
  report.bus_published = bus_stats.published;
  report.bus_delivered = bus_stats.delivered;
  report.bus_redeliveries = bus_stats.redeliveries;
  return report;
}

CheckResult report_check(const RunReport& report, const Scenario& scenario) {
  CheckResult result;
  result.pass = true;

  if (!report.failure_stage.empty()) {
    result.pass = false;
    result.diffs.push_back("pipeline failed at stage: " + report.failure_stage);
  }

  const auto matches = [](const Effect& actual, const ExpectedEffect& expected) {
    if (actual.effect_type != expected.effect_type) return false;
    for (auto it = expected.match.begin(); it != expected.match.end(); ++it) {
      const std::string& key = it.key();
      if (key.size() > 9 && key.ends_with("_contains")) {
        const std::string base = key.substr(0, key.size() - 9);
        if (!actual.details.contains(base) || !actual.details[base].is_string()) return false;
        const std::string haystack = actual.details[base].get<std::string>();
        const json& needles = it.value();
        if (needles.is_string()) {
          if (haystack.find(needles.get<std::string>()) == std::string::npos) return false;
        } else {
          for (const auto& n : needles)
            if (haystack.find(n.get<std::string>()) == std::string::npos) return false;
        }
      } else {
        if (!actual.details.contains(key) || actual.details[key] != it.value()) return false;
      }
    }
    return true;
  };

  // Bijective order-insensitive matching.
  std::vector<bool> used(report.effects.size(), false);
  for (const auto& expected : scenario.expected_effects) {
    bool found = false;
    for (size_t i = 0; i < report.effects.size(); ++i) {
      if (used[i] || !matches(report.effects[i], expected)) continue;
      used[i] = true;
      found = true;
      break;
    }
    if (!found) {
      result.pass = false;
      result.diffs.push_back("missing expected effect " + expected.effect_type + " " +
                             expected.match.dump());
    }
  }
  for (size_t i = 0; i < report.effects.size(); ++i) {
    if (!used[i]) {
      result.pass = false;
      result.diffs.push_back("unexpected effect " + report.effects[i].effect_type + " " +
                             report.effects[i].details.dump());
    }
  }

  const int64_t budgeted = report.latencies.compute_total_us() * kLatencyHeadroom;
  if (budgeted > kLatencyBudgetUs) {
    result.pass = false;
    result.diffs.push_back("compute latency " +
                           std::to_string(report.latencies.compute_total_us()) +
                           "us exceeds budget with headroom");
  }
  return result;
}

}  // namespace glasspipe
