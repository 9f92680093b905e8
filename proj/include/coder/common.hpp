#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace coder {

/// Invalid arguments, malformed configuration, violated preconditions.
/// The CLI maps this to exit code 2 when raised during validation.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Filesystem-level failures (missing file, short write).
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Structurally invalid file contents: bad magic, truncation, parse errors.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a training step produces a non-finite loss; no parameter
/// update has been applied when this is thrown.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives an independent rng key from a seed, a purpose tag and up to two
/// indices. Streams keyed this way are stateless and replayable, which is
/// what makes checkpoint resume bit-exact.
uint64_t derive_key(uint64_t seed, std::string_view purpose, uint64_t a = 0,
                    uint64_t b = 0);

/// Counter-based random stream. All randomness in the project goes through
/// this type so that every run is reproducible from (seed, purpose, indices)
/// regardless of platform or call interleaving.
class RngStream {
 public:
  explicit RngStream(uint64_t key) : key_(key) {}
  static RngStream from(uint64_t seed, std::string_view purpose, uint64_t a = 0,
                        uint64_t b = 0) {
    return RngStream(derive_key(seed, purpose, a, b));
  }

  uint64_t next_u64() { return splitmix64(key_ + 0x9e3779b97f4a7c15ULL * ++counter_); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Unbiased integer in [0, n).
  uint64_t bounded(uint64_t n);

  /// Standard normal via Box-Muller.
  double normal();

 private:
  uint64_t key_;
  uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// In-place Fisher-Yates shuffle. std::shuffle's sequence is
/// implementation-defined, this one is pinned.
template <typename T>
void fisher_yates(std::vector<T>& items, RngStream& rng) {
  for (size_t i = items.size(); i > 1; --i) {
    size_t j = static_cast<size_t>(rng.bounded(i));
    std::swap(items[i - 1], items[j]);
  }
}

/// Dot product of a float32 row against a float64 vector, accumulated in
/// 64-bit.
inline double dot_f32_f64(std::span<const float> row, std::span<const double> v) {
  double acc = 0.0;
  for (size_t j = 0; j < row.size(); ++j) acc += static_cast<double>(row[j]) * v[j];
  return acc;
}

inline bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

inline bool all_finite(std::span<const float> v) {
  for (float x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace coder
