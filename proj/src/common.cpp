#include "coder/common.hpp"

namespace coder {

uint64_t derive_key(uint64_t seed, std::string_view purpose, uint64_t a, uint64_t b) {
  // FNV-1a over the purpose tag, then mix in seed and indices.
  uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : purpose) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  h = splitmix64(h ^ splitmix64(seed));
  h = splitmix64(h ^ splitmix64(a ^ 0x517cc1b727220a95ULL));
  h = splitmix64(h ^ splitmix64(b ^ 0x2545f4914f6cdd1dULL));
  return h;
}

uint64_t RngStream::bounded(uint64_t n) {
  if (n == 0) throw ValidationError("RngStream::bounded: n must be positive");
  uint64_t threshold = UINT64_MAX - UINT64_MAX % n;
  for (;;) {
    uint64_t x = next_u64();
    if (x < threshold) return x % n;
  }
}

double RngStream::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = 1.0 - uniform();  // (0, 1]
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 2.0 * 3.14159265358979323846 * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

}  // namespace coder
