#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "glasspipe/util.hpp"

namespace glasspipe {

// Mono signed 16-bit PCM. Amplitudes are normalized to [-1,1) by dividing
// by 32768 before any energy computation, so thresholds stay rate- and
// encoding-independent.
struct PcmStream {
  std::vector<int16_t> samples;
  int sample_rate_hz = 16000;
  double start_time_s = 0.0;
};

struct SegmenterConfig {
  double window_duration_s = 1.0;
  double hop_s = 0.5;
  double energy_threshold = 2.0;  // documented starting point, not a tuned value
  double zcr_threshold = 0.35;

  void validate() const;
  int64_t window_samples(int sample_rate_hz) const;
  int64_t hop_samples(int sample_rate_hz) const;
};

struct AudioWindow {
  int64_t index = 0;
  double start_time_s = 0.0;
  double end_time_s = 0.0;
  std::vector<int16_t> samples;
  double energy = 0.0;  // sum of squared normalized amplitudes
  double zcr = 0.0;     // sign changes / (N-1)
};

struct VadDecision {
  int64_t window_index = 0;
  bool is_speech = false;
  double energy = 0.0;
  double zcr = 0.0;
};

double window_energy(std::span<const int16_t> samples);

// Zero samples count as positive sign; denominator is N-1.
double window_zcr(std::span<const int16_t> samples);

// Fraction of each window shared with its successor: (duration - hop) / duration.
double overlap_ratio(const SegmenterConfig& cfg);

// Window index i covers sample range [i*hop, i*hop + window). Partial tails
// are discarded, never zero-padded. Returns nullopt at end of stream.
std::optional<AudioWindow> next_window(const PcmStream& stream,
                                       const SegmenterConfig& cfg,
                                       int64_t index);

// Speech iff energy > threshold and zcr < threshold. Throws on an empty window.
VadDecision vad_classify(const AudioWindow& window, const SegmenterConfig& cfg);

class WindowIterator {
 public:
  WindowIterator(const PcmStream& stream, const SegmenterConfig& cfg)
      : stream_(&stream), cfg_(cfg) {
    cfg.validate();
  }

  std::optional<AudioWindow> next() {
    auto w = next_window(*stream_, cfg_, index_);
    if (w) ++index_;
    return w;
  }

 private:
  const PcmStream* stream_;
  SegmenterConfig cfg_;
  int64_t index_ = 0;
};

}  // namespace glasspipe
