#include "glasspipe/intent.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace glasspipe {

void IntentDef::validate() const {
  if (intent_id.empty()) throw ConfigError("intent_id must be non-empty");
  if (patterns.empty()) throw ConfigError(intent_id + ": pattern list must be non-empty");
  for (const auto& p : patterns)
    if (p.empty()) throw ConfigError(intent_id + ": empty pattern");
}

void FusionWeights::validate() const {
  for (double w : {w_pattern, w_llm, w_context})
    if (w < 0.0 || w > 1.0) throw ConfigError("fusion weight outside [0,1]");
  if (std::abs(w_pattern + w_llm + w_context - 1.0) > 1e-9)
    throw ConfigError("fusion weights must sum to 1");
}

size_t longest_common_substring(std::string_view a, std::string_view b) {
  if (a.empty() || b.empty()) return 0;
  // One-row DP over suffix-match lengths.
  std::vector<size_t> row(b.size() + 1, 0);
  size_t best = 0;
  for (size_t i = 1; i <= a.size(); ++i) {
    size_t diag = 0;  // row[j-1] from the previous iteration of i
    for (size_t j = 1; j <= b.size(); ++j) {
      const size_t above = row[j];
      row[j] = (a[i - 1] == b[j - 1]) ? diag + 1 : 0;
      best = std::max(best, row[j]);
      diag = above;
    }
  }
  return best;
}

double pattern_score(const std::string& command, const IntentDef& intent) {
  intent.validate();
  const std::string cmd = normalize_command(command);
  if (cmd.empty()) return 0.0;
  double best = 0.0;
  for (const auto& p : intent.patterns) {
    const double s = static_cast<double>(longest_common_substring(cmd, p)) /
                     static_cast<double>(p.size());
    best = std::max(best, s);
  }
  return best;
}

double fuse_confidence(double p_s, double l_s, double c_context, const FusionWeights& w) {
  w.validate();
  return w.w_pattern * p_s + w.w_llm * l_s + w.w_context * c_context;
}

double JaccardStubScorer::score(const std::string& normalized_command,
                                const IntentDef& intent) const {
  std::set<std::string> cmd_tokens;
  for (auto& t : tokenize(normalized_command)) cmd_tokens.insert(std::move(t));

  std::set<std::string> vocab;
  for (const auto& p : intent.patterns)
    for (auto& t : tokenize(p)) vocab.insert(std::move(t));

  if (cmd_tokens.empty() && vocab.empty()) return 0.0;
  size_t inter = 0;
  for (const auto& t : cmd_tokens) inter += vocab.count(t);
  const size_t uni = cmd_tokens.size() + vocab.size() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double contextual_relevance(const std::string& command, const MemoryStore& history, int k) {
  if (k < 1) throw ConfigError("contextual_relevance: k must be >= 1");
  if (history.empty()) return 0.0;
  const auto results = history.top_k_text(normalize_command(command), k);
  double best = 0.0;
  for (const auto& r : results) best = std::max(best, r.similarity);
  return std::clamp(best, 0.0, 1.0);
}

IntentEngine::IntentEngine(std::vector<IntentDef> intents, FusionWeights weights)
    : intents_(std::move(intents)), weights_(weights), scorer_(std::make_unique<JaccardStubScorer>()) {
  if (intents_.empty()) throw ConfigError("intent registry is empty");
  for (const auto& i : intents_) i.validate();
  weights_.validate();
}

std::vector<IntentScore> IntentEngine::classify(const std::string& command,
                                                const MemoryStore* history,
                                                int context_k) const {
  if (!scorer_) throw ConfigError("no LLM scorer registered");
  const std::string cmd = normalize_command(command);
  const double c_context =
      history ? contextual_relevance(cmd, *history, context_k) : 0.0;

  std::vector<IntentScore> scores;
  scores.reserve(intents_.size());
  for (const auto& intent : intents_) {
    IntentScore s;
    s.intent_id = intent.intent_id;
    s.p_s = pattern_score(cmd, intent);
    s.l_s = scorer_->score(cmd, intent);
    s.c_context = c_context;
    s.c_intent = fuse_confidence(s.p_s, s.l_s, s.c_context, weights_);
    scores.push_back(std::move(s));
  }
  std::sort(scores.begin(), scores.end(), [](const IntentScore& a, const IntentScore& b) {
    if (a.c_intent != b.c_intent) return a.c_intent > b.c_intent;
    return a.intent_id < b.intent_id;
  });
  return scores;
}

const IntentDef* IntentEngine::find(const std::string& intent_id) const {
  for (const auto& i : intents_)
    if (i.intent_id == intent_id) return &i;
  return nullptr;
}

std::vector<IntentDef> IntentEngine::load_registry(const std::filesystem::path& path) {
  const json j = load_json_file(path);
  if (!j.is_array()) throw ConfigError(path.string() + ": registry must be a JSON array");
  std::vector<IntentDef> intents;
  for (const auto& e : j) {
    IntentDef d;
    d.intent_id = e.at("intent_id").get<std::string>();
    d.patterns = e.at("patterns").get<std::vector<std::string>>();
    d.task_type = e.at("task_type").get<std::string>();
    if (e.contains("group")) d.group = e["group"].get<std::string>();
    if (e.contains("payload")) d.payload_template = e["payload"];
    if (e.contains("resources")) d.resources = e["resources"];
    d.validate();
    intents.push_back(std::move(d));
  }
  if (intents.empty()) throw ConfigError(path.string() + ": registry is empty");
  return intents;
}

}  // namespace glasspipe
