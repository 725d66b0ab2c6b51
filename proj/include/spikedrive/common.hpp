#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace spikedrive {

// Contract violations: a caller broke a documented precondition.
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Flagged runtime errors: numerically or structurally bad data discovered
// mid-computation (NaN rasters, non-finite gradients, corrupt blobs).
struct FlaggedError : std::runtime_error {
  explicit FlaggedError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid user-supplied configuration; carries one message per offending field.
struct ValidationError : std::runtime_error {
  explicit ValidationError(std::vector<std::string> issues_)
      : std::runtime_error(join(issues_)), issues(std::move(issues_)) {}
  std::vector<std::string> issues;

 private:
  static std::string join(const std::vector<std::string>& v) {
    std::string s;
    for (const auto& e : v) {
      if (!s.empty()) s += "; ";
      s += e;
    }
    return s;
  }
};

inline void contract(bool ok, const std::string& msg) {
  if (!ok) throw ContractError(msg);
}

// Deterministic, splittable RNG. Every source of randomness in the project
// flows from one of these; there is no global RNG state.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), engine_(seed) {}

  // Derive an independent stream, e.g. rng.split("weights", layer_idx).
  // Splitting reads only the original seed, not the engine position.
  Rng split(const std::string& label, uint64_t index = 0) const {
    uint64_t h = 1469598103934665603ull;  // FNV-1a over (seed, label, index)
    auto mix = [&h](uint64_t x) {
      for (int i = 0; i < 8; ++i) {
        h ^= (x >> (8 * i)) & 0xff;
        h *= 1099511628211ull;
      }
    };
    mix(seed_);
    for (char c : label) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ull;
    }
    mix(index);
    return Rng(h);
  }

  uint64_t seed() const { return seed_; }

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  int64_t uniform_int(int64_t lo, int64_t hi) {  // inclusive range
    return std::uniform_int_distribution<int64_t>(lo, hi)(engine_);
  }
  uint64_t next() { return engine_(); }

  template <typename It>
  void shuffle(It first, It last) {
    std::shuffle(first, last, engine_);
  }

 private:
  uint64_t seed_;
  std::mt19937_64 engine_;
};

// Worker-thread cap: SPIKEDRIVE_THREADS, else all hardware threads.
int thread_count();
// Applies the cap to OpenMP and Eigen. Safe to call more than once.
void setup_threads();

}  // namespace spikedrive
