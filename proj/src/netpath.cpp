#include "glasspipe/netpath.hpp"

#include <algorithm>
#include <cmath>

namespace glasspipe {

std::string to_string(Method m) {
  switch (m) {
    case Method::direct_lan: return "direct_lan";
    case Method::port_forward: return "port_forward";
    case Method::vpn: return "vpn";
  }
  return "unknown";
}

Method method_from_string(const std::string& s) {
  if (s == "direct_lan") return Method::direct_lan;
  if (s == "port_forward") return Method::port_forward;
  if (s == "vpn") return Method::vpn;
  throw ConfigError("unknown connection method: " + s);
}

void LinkMetrics::validate() const {
  if (!(latency_s >= 0.0) || !std::isfinite(latency_s))
    throw ConfigError("latency_s must be finite and >= 0");
  if (bandwidth < 0.0 || bandwidth > 1.0) throw ConfigError("bandwidth must be in [0,1]");
  if (reliability < 0.0 || reliability > 1.0) throw ConfigError("reliability must be in [0,1]");
}

void PathWeights::validate() const {
  for (double w : {w1, w2, w3})
    if (w < 0.0 || w > 1.0) throw ConfigError("path weight outside [0,1]");
  if (std::abs(w1 + w2 + w3 - 1.0) > 1e-9) throw ConfigError("path weights must sum to 1");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
}

void RateConfig::validate() const {
  if (!(r_max > 0.0)) throw ConfigError("r_max must be > 0");
  if (!(b_required > 0.0)) throw ConfigError("b_required must be > 0");
  if (lambda < 0.0) throw ConfigError("lambda must be >= 0");
}

double score_method(const LinkMetrics& m, const PathWeights& w) {
  m.validate();
  w.validate();
  return w.w1 / (m.latency_s + w.epsilon) + w.w2 * m.bandwidth + w.w3 * m.reliability;
}

namespace {
int preference_rank(Method m) {
  switch (m) {
    case Method::direct_lan: return 0;
    case Method::port_forward: return 1;
    case Method::vpn: return 2;
  }
  return 3;
}
}  // namespace

Method select_path(std::span<const PathCandidate> candidates, const PathWeights& w) {
  if (candidates.empty()) throw ConfigError("select_path: empty candidate list");
  const PathCandidate* best = nullptr;
  double best_score = 0.0;
  for (const auto& c : candidates) {
    const double s = score_method(c.metrics, w);
    if (!best || s > best_score ||
        (s == best_score && preference_rank(c.method) < preference_rank(best->method))) {
      best = &c;
      best_score = s;
    }
  }
  return best->method;
}

double adaptive_rate(const RateConfig& cfg, double b_available, double latency_s) {
  cfg.validate();
  if (b_available < 0.0) throw ConfigError("b_available must be >= 0");
  if (latency_s < 0.0) throw ConfigError("latency_s must be >= 0");
  const double saturation = std::min(1.0, b_available / cfg.b_required);
  const double rate = cfg.r_max * saturation * std::exp(-cfg.lambda * latency_s);
  return std::clamp(rate, 0.0, cfg.r_max);
}

LinkSession::LinkSession(std::vector<TracePoint> trace) : trace_(std::move(trace)) {
  if (trace_.empty()) throw ConfigError("link trace must be non-empty");
  for (size_t i = 0; i < trace_.size(); ++i) {
    const auto& p = trace_[i];
    if (p.b_available < 0.0 || p.latency_s < 0.0 || p.loss_prob < 0.0 || p.loss_prob > 1.0)
      throw ConfigError("trace point " + std::to_string(i) + " out of range");
    if (i > 0 && !(trace_[i - 1].t_s < p.t_s))
      throw ConfigError("trace times must be strictly increasing at index " + std::to_string(i));
  }
}

const TracePoint& LinkSession::at(double t_s) const {
  // Last point with t <= t_s; before the first point, clamp to it.
  const TracePoint* cur = &trace_.front();
  for (const auto& p : trace_) {
    if (p.t_s <= t_s) cur = &p;
    else break;
  }
  return *cur;
}

LinkSession LinkSession::load(const std::filesystem::path& path) {
  const json j = load_json_file(path);
  if (!j.is_array()) throw ConfigError(path.string() + ": trace must be a JSON array");
  std::vector<TracePoint> trace;
  for (const auto& e : j) {
    TracePoint p;
    p.t_s = e.at("t_s").get<double>();
    p.b_available = e.at("b_available").get<double>();
    p.latency_s = e.at("latency_s").get<double>();
    if (e.contains("loss_prob")) p.loss_prob = e["loss_prob"].get<double>();
    trace.push_back(p);
  }
  return LinkSession(std::move(trace));
}

}  // namespace glasspipe
