#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace glasspipe {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

// Invalid configuration or registry content.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// File / socket / wire-level failures.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Seeded RNG with explicit bit-level derivations so that streams are
// reproducible across compilers (std::uniform_*_distribution is not
// specified tightly enough for golden tests).
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0,1) with 53 random mantissa bits.
  double uniform01() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Uniform integer in [lo, hi], rejection-sampled.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    const uint64_t range = static_cast<uint64_t>(hi - lo) + 1;
    if (range == 0) return static_cast<int64_t>(engine_());  // full 64-bit span
    const uint64_t limit = UINT64_MAX - UINT64_MAX % range;
    uint64_t v;
    do {
      v = engine_();
    } while (v >= limit);
    return lo + static_cast<int64_t>(v % range);
  }

 private:
  std::mt19937_64 engine_;
};

// Lowercase (ASCII), trim, collapse internal whitespace runs to one space.
// Multi-byte UTF-8 passes through untouched.
std::string normalize_command(std::string_view text);

// Whitespace + ASCII punctuation split of an already-normalized string.
std::vector<std::string> tokenize(std::string_view text);

std::string percent_encode(std::string_view text);

json load_json_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view content);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace glasspipe
