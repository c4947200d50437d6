#include "glasspipe/audio.hpp"

#include <cmath>

namespace glasspipe {

namespace {
constexpr double kAmplitudeScale = 1.0 / 32768.0;
}

void SegmenterConfig::validate() const {
  if (!(window_duration_s > 0.0)) throw ConfigError("window_duration_s must be > 0");
  if (!(hop_s > 0.0) || hop_s > window_duration_s)
    throw ConfigError("hop_s must satisfy 0 < hop_s <= window_duration_s");
  if (energy_threshold < 0.0) throw ConfigError("energy_threshold must be >= 0");
  if (zcr_threshold < 0.0 || zcr_threshold > 1.0)
    throw ConfigError("zcr_threshold must be in [0,1]");
}

int64_t SegmenterConfig::window_samples(int sample_rate_hz) const {
  return std::llround(window_duration_s * sample_rate_hz);
}

int64_t SegmenterConfig::hop_samples(int sample_rate_hz) const {
  return std::llround(hop_s * sample_rate_hz);
}

double window_energy(std::span<const int16_t> samples) {
  double sum = 0.0;
  for (int16_t s : samples) {
    const double a = s * kAmplitudeScale;
    sum += a * a;
  }
  return sum;
}

double window_zcr(std::span<const int16_t> samples) {
  if (samples.size() < 2) return 0.0;
  size_t changes = 0;
  bool prev_positive = samples[0] >= 0;
  for (size_t i = 1; i < samples.size(); ++i) {
    const bool positive = samples[i] >= 0;
    if (positive != prev_positive) ++changes;
    prev_positive = positive;
  }
  return static_cast<double>(changes) / static_cast<double>(samples.size() - 1);
}

double overlap_ratio(const SegmenterConfig& cfg) {
  cfg.validate();
  return (cfg.window_duration_s - cfg.hop_s) / cfg.window_duration_s;
}

std::optional<AudioWindow> next_window(const PcmStream& stream,
                                       const SegmenterConfig& cfg,
                                       int64_t index) {
  cfg.validate();
  if (stream.sample_rate_hz <= 0) throw ConfigError("sample_rate_hz must be > 0");
  if (index < 0) throw ConfigError("window index must be >= 0");

  const int64_t win = cfg.window_samples(stream.sample_rate_hz);
  const int64_t hop = cfg.hop_samples(stream.sample_rate_hz);
  if (win <= 0 || hop <= 0) throw ConfigError("window/hop shorter than one sample");

  const int64_t begin = index * hop;
  const int64_t end = begin + win;
  if (end > static_cast<int64_t>(stream.samples.size())) return std::nullopt;

  AudioWindow w;
  w.index = index;
  w.start_time_s = stream.start_time_s + static_cast<double>(begin) / stream.sample_rate_hz;
  w.end_time_s = w.start_time_s + cfg.window_duration_s;
  w.samples.assign(stream.samples.begin() + begin, stream.samples.begin() + end);
  w.energy = window_energy(w.samples);
  w.zcr = window_zcr(w.samples);
  return w;
}

VadDecision vad_classify(const AudioWindow& window, const SegmenterConfig& cfg) {
  cfg.validate();
  if (window.samples.empty()) throw ConfigError("vad_classify: empty window");
  VadDecision d;
  d.window_index = window.index;
  d.energy = window_energy(window.samples);
  d.zcr = window_zcr(window.samples);
  d.is_speech = d.energy > cfg.energy_threshold && d.zcr < cfg.zcr_threshold;
  return d;
}

}  // namespace glasspipe
