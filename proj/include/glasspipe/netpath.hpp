#pragma once

#include <span>
#include <string>
#include <vector>

#include "glasspipe/util.hpp"

namespace glasspipe {

enum class Method { direct_lan, port_forward, vpn };

std::string to_string(Method m);
Method method_from_string(const std::string& s);

struct LinkMetrics {
  double latency_s = 0.0;    // >= 0
  double bandwidth = 0.0;    // [0,1], fraction of reference capacity
  double reliability = 0.0;  // [0,1]

  void validate() const;
};

struct PathWeights {
  double w1 = 0.5;
  double w2 = 0.3;
  double w3 = 0.2;
  double epsilon = 1e-3;  // bounds the latency term at L = 0

  void validate() const;
};

struct RateConfig {
  double r_max = 1.0;
  double b_required = 1.0;
  double lambda = 0.5;  // latency penalty, 1/s

  void validate() const;
};

struct PathCandidate {
  Method method = Method::direct_lan;
  LinkMetrics metrics;
  double score = 0.0;
};

// w1/(L+eps) + w2*B + w3*R. Only ordinal use (argmax) is relied upon.
double score_method(const LinkMetrics& m, const PathWeights& w);

// Argmax of score_method; exact ties fall back to the fixed preference
// order direct_lan > port_forward > vpn, so the result is invariant under
// candidate permutation.
Method select_path(std::span<const PathCandidate> candidates, const PathWeights& w);

// r_max * min(1, b_available/b_required) * exp(-lambda * latency).
// Always within [0, r_max].
double adaptive_rate(const RateConfig& cfg, double b_available, double latency_s);

struct TracePoint {
  double t_s = 0.0;
  double b_available = 0.0;  // same units as RateConfig::b_required
  double latency_s = 0.0;
  double loss_prob = 0.0;
};

// Replayable link whose conditions at time t follow the trace as a step
// function (clamped to the first point before it starts).
class LinkSession {
 public:
  explicit LinkSession(std::vector<TracePoint> trace);

  const TracePoint& at(double t_s) const;
  double start_time() const { return trace_.front().t_s; }
  double end_time() const { return trace_.back().t_s; }
  const std::vector<TracePoint>& trace() const { return trace_; }

  static LinkSession load(const std::filesystem::path& path);

 private:
  std::vector<TracePoint> trace_;
};

// Seeded message-drop source: same seed + same query sequence => same
// schedule. Used by the bus tests to inject delivery loss.
class DropInjector {
 public:
  explicit DropInjector(uint64_t seed) : rng_(seed) {}

  bool should_drop(double loss_prob) {
    if (loss_prob <= 0.0) return false;
    ++queries_;
    const bool drop = rng_.uniform01() < loss_prob;
    if (drop) ++drops_;
    return drop;
  }

  int64_t drops() const { return drops_; }
  int64_t queries() const { return queries_; }

 private:
  Rng rng_;
  int64_t drops_ = 0;
  int64_t queries_ = 0;
};

}  // namespace glasspipe
