#pragma once

#include <cstdint>
#include <filesystem>
#include <shared_mutex>
#include <string>
#include <unordered_set>
#include <vector>

#include "glasspipe/util.hpp"

namespace glasspipe {

// Unit vector (L2 norm 1 within 1e-6) or the all-zero vector for empty text.
struct Embedding {
  std::vector<double> values;

  double norm() const;
  bool is_zero() const;
  size_t dim() const { return values.size(); }
};

// a.b / (|a||b|); 0 when either norm is zero.
double cosine(const Embedding& a, const Embedding& b);

// Feature-hashed character trigram embedder. Text is normalized, wrapped in
// '^'/'$' boundary markers, and every byte trigram is hashed into one of
// `dim` buckets with a fixed-seed FNV-1a; counts are then L2-normalized.
// Boundary markers keep one- and two-byte texts embeddable and give nearby
// strings ("abc" vs "abd") shared buckets.
class Embedder {
 public:
  explicit Embedder(size_t dim = 256) : dim_(dim) {
    if (dim_ == 0) throw ConfigError("embedding dimension must be > 0");
  }

  Embedding embed(std::string_view text) const;
  size_t dim() const { return dim_; }

 private:
  size_t dim_;
};

struct Document {
  std::string doc_id;
  std::string text;
  Embedding embedding;
  int64_t timestamp = 0;  // insertion order key assigned by the store
};

struct RetrievalResult {
  std::string doc_id;
  double similarity = 0.0;
  int rank = 0;  // 1-based
};

// Append-only embedding store with cosine top-k retrieval. Concurrency
// contract: many concurrent readers or one writer (shared_mutex); top_k
// never observes a partially added document.
class MemoryStore {
 public:
  explicit MemoryStore(size_t dim = 256) : embedder_(dim) {}

  MemoryStore(MemoryStore&& other) noexcept
      : embedder_(other.embedder_),
        docs_(std::move(other.docs_)),
        ids_(std::move(other.ids_)),
        next_timestamp_(other.next_timestamp_) {}
  MemoryStore(const MemoryStore&) = delete;
  MemoryStore& operator=(const MemoryStore&) = delete;

  const Embedder& embedder() const { return embedder_; }

  // Embeds and appends. Throws ConfigError on duplicate doc_id; the corpus
  // is left unchanged in that case.
  Document add(const std::string& doc_id, const std::string& text);

  // The k documents with largest cosine similarity; ties broken by earlier
  // timestamp, then doc_id. Empty corpus yields an empty list.
  std::vector<RetrievalResult> top_k(const Embedding& query, int k) const;
  std::vector<RetrievalResult> top_k_text(const std::string& query, int k) const;

  size_t size() const;
  bool empty() const { return size() == 0; }
  std::vector<Document> documents() const;

  // JSONL, one document per line: {doc_id, text, timestamp, embedding:[...]}.
  void persist(const std::filesystem::path& path) const;

  // Rejects the whole file on any malformed line, reporting the line number.
  static MemoryStore load(const std::filesystem::path& path, size_t dim = 256);

 private:
  Embedder embedder_;
  std::vector<Document> docs_;
  std::unordered_set<std::string> ids_;
  int64_t next_timestamp_ = 0;
  mutable std::shared_mutex mutex_;
};

}  // namespace glasspipe
