#pragma once

#include <memory>
#include <string>
#include <vector>

#include "glasspipe/memory.hpp"
#include "glasspipe/util.hpp"

namespace glasspipe {

struct IntentDef {
  std::string intent_id;
  std::vector<std::string> patterns;  // lowercase
  std::string task_type;
  std::string group = "default";          // bus routing group
  json payload_template = json::object();  // optional, used by the harness
  json resources = json::object();          // optional scheduler resource demands

  void validate() const;
};

struct FusionWeights {
  double w_pattern = 0.5;
  double w_llm = 0.3;
  double w_context = 0.2;

  void validate() const;  // each in [0,1], sum 1 within 1e-9
};

struct IntentScore {
  std::string intent_id;
  double c_intent = 0.0;
  double p_s = 0.0;
  double l_s = 0.0;
  double c_context = 0.0;
};

// Longest common contiguous substring length (bytes).
size_t longest_common_substring(std::string_view a, std::string_view b);

// max over the intent's patterns of LCS(command, pattern) / |pattern|.
// The command is normalized first; empty command scores 0.
double pattern_score(const std::string& command, const IntentDef& intent);

// Convex fusion of the three component scores.
double fuse_confidence(double p_s, double l_s, double c_context, const FusionWeights& w);

// Pluggable stand-in for a language-model scorer.
class LlmScorer {
 public:
  virtual ~LlmScorer() = default;
  virtual double score(const std::string& normalized_command, const IntentDef& intent) const = 0;
};

// Default stub: Jaccard overlap between the command token set and the
// union of tokens across the intent's patterns.
class JaccardStubScorer : public LlmScorer {
 public:
  double score(const std::string& normalized_command, const IntentDef& intent) const override;
};

// Max cosine similarity between the command embedding and the top-k
// retrieved history documents, clamped to [0,1]; 0 for empty history.
double contextual_relevance(const std::string& command, const MemoryStore& history, int k);

class IntentEngine {
 public:
  IntentEngine(std::vector<IntentDef> intents, FusionWeights weights);

  void set_scorer(std::unique_ptr<LlmScorer> scorer) { scorer_ = std::move(scorer); }

  // Scores every intent by convex fusion of the three components and sorts
  // descending by c_intent, ties by lexicographic intent_id. `history` may
  // be null.
  std::vector<IntentScore> classify(const std::string& command,
                                    const MemoryStore* history = nullptr,
                                    int context_k = 3) const;

  const std::vector<IntentDef>& intents() const { return intents_; }
  const IntentDef* find(const std::string& intent_id) const;

  // JSON array of {intent_id, patterns, task_type, [group], [payload], [resources]}.
  static std::vector<IntentDef> load_registry(const std::filesystem::path& path);

 private:
  std::vector<IntentDef> intents_;
  FusionWeights weights_;
  std::unique_ptr<LlmScorer> scorer_;
};

}  // namespace glasspipe
