#include "glasspipe/gaze.hpp"

#include <cmath>

namespace glasspipe {

void Calibration::validate() const {
  const Mat3 rtr = rotation.transposed() * rotation;
  const Mat3 id = Mat3::identity();
  for (int i = 0; i < 9; ++i)
    if (std::abs(rtr.m[i] - id.m[i]) > 1e-6)
      throw ConfigError("calibration rotation is not orthonormal");
  if (std::abs(rotation.det() - 1.0) > 1e-6)
    throw ConfigError("calibration rotation must have det +1");
}

Calibration Calibration::from_json(const json& j) {
  Calibration cal;
  const auto rot = j.at("rotation").get<std::vector<double>>();
  if (rot.size() != 9) throw ConfigError("calibration rotation must have 9 entries");
  for (int i = 0; i < 9; ++i) cal.rotation.m[i] = rot[i];
  const auto t = j.at("translation").get<std::vector<double>>();
  if (t.size() != 3) throw ConfigError("calibration translation must have 3 entries");
  cal.translation = {t[0], t[1], t[2]};
  cal.validate();
  return cal;
}

Calibration Calibration::load(const std::filesystem::path& path) {
  return from_json(load_json_file(path));
}

double eye_weight(double confidence, double noise_sigma) {
  if (confidence < 0.0 || confidence > 1.0) throw ConfigError("confidence must be in [0,1]");
  if (noise_sigma < 0.0) throw ConfigError("noise_sigma must be >= 0");
  const double c2 = confidence * confidence;
  const double s2 = noise_sigma * noise_sigma;
  if (c2 + s2 == 0.0) return 0.0;
  return c2 / (c2 + s2);
}

std::optional<FusedGaze> fuse(const MonocularSample& left, const MonocularSample& right,
                              int64_t pairing_window_us) {
  const int64_t dt = left.timestamp_us > right.timestamp_us
                         ? left.timestamp_us - right.timestamp_us
                         : right.timestamp_us - left.timestamp_us;
  if (dt > pairing_window_us)
    throw ConfigError("gaze pair " + std::to_string(dt) + "us apart exceeds pairing window");

  const double w_l = eye_weight(left.confidence, left.noise_sigma);
  const double w_r = eye_weight(right.confidence, right.noise_sigma);
  if (w_l + w_r == 0.0) return std::nullopt;

  const Vec3 weighted = (left.gaze * w_l + right.gaze * w_r) / (w_l + w_r);
  const double n = weighted.norm();
  if (n < 1e-12) return std::nullopt;  // antipodal inputs cancel out

  FusedGaze f;
  f.gaze_combined = weighted / n;
  f.w_left = w_l;
  f.w_right = w_r;
  f.timestamp_us = (left.timestamp_us + right.timestamp_us) / 2;
  return f;
}

Vec3 to_world(const Vec3& gaze, const Calibration& cal) {
  return cal.rotation * gaze + cal.translation;
}

GazeScript GazeScript::from_json(const json& j) {
  GazeScript s;
  s.device_id = j.value("device_id", s.device_id);
  s.rate_hz = j.value("rate_hz", s.rate_hz);
  s.base_confidence = j.value("base_confidence", s.base_confidence);
  s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
  s.seed = j.value("seed", s.seed);
  for (const auto& e : j.at("segments")) {
    GazeScriptSegment seg;
    seg.kind = e.at("kind").get<std::string>();
    const auto d = e.at("direction").get<std::vector<double>>();
    if (d.size() != 3) throw ConfigError("segment direction must have 3 entries");
    seg.direction = Vec3{d[0], d[1], d[2]}.normalized();
    if (e.contains("to")) {
      const auto t = e["to"].get<std::vector<double>>();
      if (t.size() != 3) throw ConfigError("segment 'to' must have 3 entries");
      seg.to = Vec3{t[0], t[1], t[2]}.normalized();
    } else {
      seg.to = seg.direction;
    }
    seg.ticks = e.at("ticks").get<int>();
    if (seg.ticks <= 0) throw ConfigError("segment ticks must be > 0");
    if (seg.kind != "fixation" && seg.kind != "saccade")
      throw ConfigError("segment kind must be fixation or saccade");
    s.segments.push_back(seg);
  }
  if (s.segments.empty()) throw ConfigError("gaze script needs at least one segment");
  if (!(s.rate_hz > 0.0)) throw ConfigError("rate_hz must be > 0");
  return s;
}

GazeScript GazeScript::load(const std::filesystem::path& path) {
  return from_json(load_json_file(path));
}

SyntheticGazeSource::SyntheticGazeSource(GazeScript script)
    : script_(std::move(script)), rng_(script_.seed) {}

std::optional<std::pair<MonocularSample, MonocularSample>> SyntheticGazeSource::next() {
  if (segment_ >= script_.segments.size()) return std::nullopt;
  const GazeScriptSegment& seg = script_.segments[segment_];

  Vec3 dir = seg.direction;
  if (seg.kind == "saccade" && seg.ticks > 1) {
    const double a = static_cast<double>(tick_in_segment_) / (seg.ticks - 1);
    dir = (seg.direction * (1.0 - a) + seg.to * a).normalized();
  }

  const int64_t ts = static_cast<int64_t>(
      std::llround(tick_ * 1'000'000.0 / script_.rate_hz));

  auto make_eye = [&](Eye eye) {
    MonocularSample s;
    s.eye = eye;
    // Small deterministic perturbation: rotate the scripted direction about
    // two fixed axes by angles drawn from the seeded stream.
    const double a1 = (rng_.uniform01() - 0.5) * 2.0 * script_.noise_sigma * 0.1;
    const double a2 = (rng_.uniform01() - 0.5) * 2.0 * script_.noise_sigma * 0.1;
    s.gaze = (rotation_about({1, 0, 0}, a1) * (rotation_about({0, 1, 0}, a2) * dir)).normalized();
    s.confidence =
        std::clamp(script_.base_confidence + (rng_.uniform01() - 0.5) * 0.1, 0.0, 1.0);
    s.noise_sigma = std::max(0.0, script_.noise_sigma + (rng_.uniform01() - 0.5) * 0.02);
    s.timestamp_us = ts + rng_.uniform_int(-2000, 2000);
    return s;
  };

  auto pair = std::make_pair(make_eye(Eye::left), make_eye(Eye::right));
  ++tick_;
  if (++tick_in_segment_ >= seg.ticks) {
    ++segment_;
    tick_in_segment_ = 0;
  }
  return pair;
}

GazeStreamSession::GazeStreamSession(Broker& broker, std::string device_id, Calibration cal,
                                     double rate_hz, double buffer_cap_s)
    : broker_(&broker),
      topic_("gaze." + device_id),
      cal_(cal),
      buffer_cap_msgs_(static_cast<size_t>(std::max(1.0, buffer_cap_s * rate_hz))) {
  cal_.validate();
  if (!topic_valid(topic_)) throw ConfigError("invalid device_id for gaze topic: " + device_id);
}

void GazeStreamSession::push(const MonocularSample& left, const MonocularSample& right) {
  auto fused = fuse(left, right);
  if (!fused) {
    ++stats_.dropped_pairs;
    return;
  }
  const Vec3 world = to_world(fused->gaze_combined, cal_);

  ordered_json payload;
  payload["ts_us"] = fused->timestamp_us;
  payload["gaze"] = {fused->gaze_combined.x, fused->gaze_combined.y, fused->gaze_combined.z};
  payload["p_world"] = {world.x, world.y, world.z};
  payload["w_l"] = fused->w_left;
  payload["w_r"] = fused->w_right;
  payload["seq"] = next_seq_++;
  publish_payload(std::move(payload), fused->timestamp_us);
}

void GazeStreamSession::publish_payload(ordered_json payload, int64_t ts_us) {
  if (!connected_) {
    if (buffer_.size() >= buffer_cap_msgs_) {
      buffer_.pop_front();
      ++stats_.buffer_overflows;
    }
    buffer_.emplace_back(std::move(payload), ts_us);
    stats_.buffered_peak = std::max<int64_t>(stats_.buffered_peak, buffer_.size());
    return;
  }
  Envelope env;
  env.topic = topic_;
  env.command_type = "gaze_sample";
  env.group = "gaze";
  env.payload = json::parse(payload.dump());
  env.ts_us = ts_us;
  broker_->publish(std::move(env));
  ++stats_.emitted;
}

void GazeStreamSession::set_connected(bool connected) {
  if (connected == connected_) return;
  connected_ = connected;
  if (!connected_) return;
  // Replay buffered payloads in original order.
  std::deque<std::pair<ordered_json, int64_t>> pending;
  pending.swap(buffer_);
  for (auto& [payload, ts] : pending) publish_payload(std::move(payload), ts);
}

void GazeStreamSession::run(SyntheticGazeSource& source) {
  while (auto pair = source.next()) push(pair->first, pair->second);
}

}  // namespace glasspipe
