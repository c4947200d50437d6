#pragma once

#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "glasspipe/bus.hpp"
#include "glasspipe/geom.hpp"
#include "glasspipe/util.hpp"

namespace glasspipe {

enum class Eye { left, right };

struct MonocularSample {
  Eye eye = Eye::left;
  Vec3 gaze;                 // unit direction in the eye frame
  double confidence = 0.0;   // [0,1]
  double noise_sigma = 0.0;  // std-dev; squared internally to a variance
  int64_t timestamp_us = 0;
};

// Rigid eye-to-world calibration. Rotation must be orthonormal with
// det +1 (checked within 1e-6 at load).
struct Calibration {
  Mat3 rotation;
  Vec3 translation;

  void validate() const;
  static Calibration load(const std::filesystem::path& path);
  static Calibration from_json(const json& j);
};

struct FusedGaze {
  Vec3 gaze_combined;  // unit length
  Vec3 p_world;
  double w_left = 0.0;
  double w_right = 0.0;
  int64_t timestamp_us = 0;
};

// c^2 / (c^2 + sigma^2); 0 when both are 0.
double eye_weight(double confidence, double noise_sigma);

inline constexpr int64_t kDefaultPairingWindowUs = 5000;

// Confidence-weighted average of the two gaze directions, renormalized to
// unit length; timestamp is the pair mean. Returns nullopt when both
// weights are zero or the weighted sum degenerates (antipodal inputs) —
// the sample is dropped, never fabricated. Throws ConfigError when the
// timestamps fall outside the pairing window.
std::optional<FusedGaze> fuse(const MonocularSample& left, const MonocularSample& right,
                              int64_t pairing_window_us = kDefaultPairingWindowUs);

// R * g + t, exactly as the calibration transform is written.
Vec3 to_world(const Vec3& gaze, const Calibration& cal);

// Scripted gaze path: fixations hold a direction, saccades sweep between
// two directions; per-eye confidence/noise/timestamp perturbations come
// from the seeded RNG so runs are reproducible.
struct GazeScriptSegment {
  std::string kind;  // "fixation" | "saccade"
  Vec3 direction;
  Vec3 to;  // saccade target
  int ticks = 0;
};

struct GazeScript {
  std::string device_id = "dev0";
  double rate_hz = 30.0;
  double base_confidence = 0.9;
  double noise_sigma = 0.1;
  uint64_t seed = 1;
  std::vector<GazeScriptSegment> segments;

  static GazeScript load(const std::filesystem::path& path);
  static GazeScript from_json(const json& j);
};

class SyntheticGazeSource {
 public:
  explicit SyntheticGazeSource(GazeScript script);

  // One binocular pair per tick; nullopt when the script is exhausted.
  std::optional<std::pair<MonocularSample, MonocularSample>> next();

 private:
  GazeScript script_;
  Rng rng_;
  size_t segment_ = 0;
  int tick_in_segment_ = 0;
  int64_t tick_ = 0;
};

struct GazeStreamStats {
  int64_t emitted = 0;          // published (including flushed) messages
  int64_t dropped_pairs = 0;    // zero-weight / degenerate fusions
  int64_t buffer_overflows = 0; // oldest-dropped while disconnected
  int64_t buffered_peak = 0;
};

// Publishes one fused-gaze JSON message per tick on `gaze.<device_id>`.
// While disconnected, payloads are buffered (bounded; oldest dropped) and
// republished in order on reconnect.
class GazeStreamSession {
 public:
  GazeStreamSession(Broker& broker, std::string device_id, Calibration cal,
                    double rate_hz = 30.0, double buffer_cap_s = 10.0);

  // Wire format: {"ts_us":int,"gaze":[x,y,z],"p_world":[x,y,z],
  //               "w_l":f,"w_r":f,"seq":int}
  void push(const MonocularSample& left, const MonocularSample& right);

  void set_connected(bool connected);
  bool connected() const { return connected_; }
  const GazeStreamStats& stats() const { return stats_; }
  const std::string& topic() const { return topic_; }

  // Drives the session for every pair the source yields.
  void run(SyntheticGazeSource& source);

 private:
  void publish_payload(ordered_json payload, int64_t ts_us);

  Broker* broker_;
  std::string topic_;
  Calibration cal_;
  size_t buffer_cap_msgs_;
  bool connected_ = true;
  int64_t next_seq_ = 0;
  std::deque<std::pair<ordered_json, int64_t>> buffer_;
  GazeStreamStats stats_;
};

}  // namespace glasspipe
