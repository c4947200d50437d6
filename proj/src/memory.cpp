#include "glasspipe/memory.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <mutex>

namespace glasspipe {

namespace {

constexpr uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr uint64_t kFnvPrime = 1099511628211ULL;
constexpr uint64_t kHashSeed = 0x5eed5eed5eed5eedULL;  // fixed: embeddings are part of persisted state

uint64_t hash_trigram(const char* p) {
  uint64_t h = kFnvOffset ^ kHashSeed;
  for (int i = 0; i < 3; ++i) {
    h ^= static_cast<unsigned char>(p[i]);
    h *= kFnvPrime;
  }
  return h;
}

}  // namespace

double Embedding::norm() const {
  double s = 0.0;
  for (double v : values) s += v * v;
  return std::sqrt(s);
}

bool Embedding::is_zero() const {
  for (double v : values)
    if (v != 0.0) return false;
  return true;
}

double cosine(const Embedding& a, const Embedding& b) {
  if (a.dim() != b.dim()) throw ConfigError("cosine: dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.values.size(); ++i) {
    dot += a.values[i] * b.values[i];
    na += a.values[i] * a.values[i];
    nb += b.values[i] * b.values[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

Embedding Embedder::embed(std::string_view text) const {
  Embedding e;
  e.values.assign(dim_, 0.0);
  const std::string norm = normalize_command(text);
  if (norm.empty()) return e;  // zero vector by contract

  const std::string padded = "^" + norm + "$";
  for (size_t i = 0; i + 3 <= padded.size(); ++i)
    e.values[hash_trigram(padded.data() + i) % dim_] += 1.0;

  const double n = e.norm();
  if (n > 0.0)
    for (double& v : e.values) v /= n;
  return e;
}

Document MemoryStore::add(const std::string& doc_id, const std::string& text) {
  std::unique_lock lock(mutex_);
  if (ids_.count(doc_id)) throw ConfigError("duplicate doc_id: " + doc_id);
  Document doc;
  doc.doc_id = doc_id;
  doc.text = text;
  doc.embedding = embedder_.embed(text);
  doc.timestamp = next_timestamp_++;
  ids_.insert(doc_id);
  docs_.push_back(doc);
  return doc;
}

std::vector<RetrievalResult> MemoryStore::top_k(const Embedding& query, int k) const {
  if (k < 1) throw ConfigError("top_k: k must be >= 1");
  std::shared_lock lock(mutex_);

  struct Scored {
    double similarity;
    int64_t timestamp;
    const Document* doc;
  };
  std::vector<Scored> scored;
  scored.reserve(docs_.size());
  for (const Document& d : docs_)
    scored.push_back({cosine(query, d.embedding), d.timestamp, &d});

  std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
    return a.doc->doc_id < b.doc->doc_id;
  });

  const size_t n = std::min<size_t>(static_cast<size_t>(k), scored.size());
  std::vector<RetrievalResult> out;
  out.reserve(n);
  for (size_t i = 0; i < n; ++i)
    out.push_back({scored[i].doc->doc_id, scored[i].similarity, static_cast<int>(i + 1)});
  return out;
}

std::vector<RetrievalResult> MemoryStore::top_k_text(const std::string& query, int k) const {
  return top_k(embedder_.embed(query), k);
}

size_t MemoryStore::size() const {
  std::shared_lock lock(mutex_);
  return docs_.size();
}

std::vector<Document> MemoryStore::documents() const {
  std::shared_lock lock(mutex_);
  return docs_;
}

void MemoryStore::persist(const std::filesystem::path& path) const {
  std::shared_lock lock(mutex_);
  std::string out;
  for (const Document& d : docs_) {
    json j;
    j["doc_id"] = d.doc_id;
    j["text"] = d.text;
    j["timestamp"] = d.timestamp;
    j["embedding"] = d.embedding.values;
    out += j.dump();
    out += '\n';
  }
  write_text_file(path, out);
}

MemoryStore MemoryStore::load(const std::filesystem::path& path, size_t dim) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());

  MemoryStore store(dim);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw IoError(path.string() + ":" + std::to_string(line_no) +
                    ": malformed JSONL line: " + e.what());
    }
    if (!j.contains("doc_id") || !j.contains("text") || !j.contains("timestamp") ||
        !j.contains("embedding"))
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": missing document field");

    Document doc;
    doc.doc_id = j["doc_id"].get<std::string>();
    doc.text = j["text"].get<std::string>();
    doc.timestamp = j["timestamp"].get<int64_t>();
    doc.embedding.values = j["embedding"].get<std::vector<double>>();
    if (doc.embedding.dim() != dim)
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": embedding dimension " +
                    std::to_string(doc.embedding.dim()) + ", store expects " + std::to_string(dim));
    if (store.ids_.count(doc.doc_id))
      throw IoError(path.string() + ":" + std::to_string(line_no) +
                    ": duplicate doc_id " + doc.doc_id);
    store.ids_.insert(doc.doc_id);
    store.docs_.push_back(std::move(doc));
  }
  for (const Document& d : store.docs_)
    store.next_timestamp_ = std::max(store.next_timestamp_, d.timestamp + 1);
  return store;
}

}  // namespace glasspipe
