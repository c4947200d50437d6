#pragma once

#include <optional>
#include <string>
#include <vector>

#include "glasspipe/audio.hpp"
#include "glasspipe/intent.hpp"
#include "glasspipe/sched.hpp"
#include "glasspipe/util.hpp"

namespace glasspipe {

// Deterministic stand-in signals for scenarios that exercise the audio path.
struct SyntheticAudioSpec {
  std::string kind = "silence";  // silence | sine | noise
  double duration_s = 2.0;
  double freq_hz = 200.0;
  double amplitude = 0.8;  // of full scale
  uint64_t seed = 1;
};

PcmStream synth_audio(const SyntheticAudioSpec& spec, int sample_rate_hz = 16000);

// Audio source plus the transcript the ASR stub maps it to.
struct ScenarioAudio {
  std::optional<std::string> path;                 // WAV or raw PCM
  std::optional<SyntheticAudioSpec> synthetic;
  int rate = 16000;
  std::string transcript;
};

struct ExpectedEffect {
  std::string effect_type;
  json match = json::object();  // exact keys, or "<key>_contains": str|[str]
};

struct MemorySeedDoc {
  std::string doc_id;
  std::string text;
};

struct Scenario {
  std::string name;
  uint64_t seed = 0;
  std::optional<std::string> transcript;  // scripted path, bypassing audio
  std::optional<ScenarioAudio> audio;
  std::string intent_registry_path;
  std::vector<MemorySeedDoc> memory_seed;
  std::optional<std::string> link_trace_path;
  std::optional<std::string> gaze_script_path;
  std::optional<std::string> calibration_path;
  std::vector<ExpectedEffect> expected_effects;
  double intent_cutoff = 0.25;  // below this, no task is generated
  int context_k = 3;
  FusionWeights weights;
  SegmenterConfig segmenter;

  // Relative paths are resolved against the scenario file's directory;
  // referenced files must exist.
  static Scenario load(const std::filesystem::path& path);
};

struct StageLatencies {
  int64_t segmentation_us = 0;
  int64_t classify_us = 0;
  int64_t publish_to_dispatch_us = 0;
  int64_t dispatch_to_effect_us = 0;

  int64_t compute_total_us() const {
    return segmentation_us + classify_us + publish_to_dispatch_us + dispatch_to_effect_us;
  }
};

struct RunReport {
  std::string scenario;
  uint64_t seed = 0;
  StageLatencies latencies;
  std::vector<json> decisions;  // {seq, stage, ts_us, detail}
  std::vector<Effect> effects;
  int64_t tasks_submitted = 0;
  int64_t tasks_done = 0;
  int64_t tasks_rejected = 0;
  int64_t gaze_emitted = 0;
  int64_t gaze_dropped = 0;
  int64_t gaze_buffer_overflows = 0;
  int64_t bus_published = 0;
  int64_t bus_delivered = 0;
  int64_t bus_redeliveries = 0;  // duplicate deliveries observed on the bus
  std::string failure_stage;  // empty on success

  json to_json() const;

  // One decision per line with wall timestamps zeroed; byte-identical
  // across same-seed runs.
  std::string normalized_decision_log() const;
};

RunReport run_scenario(const Scenario& scenario, const std::filesystem::path& data_dir);

struct CheckResult {
  bool pass = false;
  std::vector<std::string> diffs;
};

// Order-insensitive effect-set match plus the compute-latency budget
// (200 ms with 3x headroom).
CheckResult report_check(const RunReport& report, const Scenario& scenario);

inline constexpr int64_t kLatencyBudgetUs = 200000;
inline constexpr int kLatencyHeadroom = 3;

}  // namespace glasspipe
