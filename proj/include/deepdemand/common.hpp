#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace deepdemand {

/// Raised for unreadable/unwritable files and malformed file contents.
class IoError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Raised when inputs violate a documented precondition or invariant.
class ValidationError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Raised when a computation goes numerically or logically wrong.
class ComputeError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

void log_warn(const std::string& msg);
void log_info(const std::string& msg);

/// Deterministic RNG (xoshiro256++ seeded via splitmix64). The derived
/// distributions avoid std::uniform_*_distribution so a seed produces the
/// same stream on every standard library implementation.
class SplitRng {
 public:
  explicit SplitRng(uint64_t seed);

  uint64_t next_u64();

  /// Uniform double in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi], inclusive. Unbiased via rejection.
  int64_t uniform_int(int64_t lo, int64_t hi);

  /// Standard normal via Box-Muller.
  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& values) {
    for (size_t i = values.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i) - 1));
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  std::array<uint64_t, 4> state_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// FNV-1a, used for content checksums embedded in artifact files.
inline constexpr uint64_t kFnvOffset = 1469598103934665603ULL;

uint64_t fnv1a64_bytes(const void* data, size_t size, uint64_t hash = kFnvOffset);
uint64_t fnv1a64(std::string_view text, uint64_t hash = kFnvOffset);
uint64_t fnv1a64_mix(uint64_t value, uint64_t hash);

std::string to_hex(uint64_t value);
uint64_t parse_hex_u64(std::string_view text);

/// Exact textual encoding of a double (C99 hex-float). Round-trips bit-exactly
/// through parse_double.
std::string hex_double(double value);
double parse_double(std::string_view text);
int64_t parse_int64(std::string_view text);

/// Shortest decimal form that still round-trips; for human-facing CSV output.
std::string format_double(double value);

std::string read_text_file(const std::string& path);
void write_text_file_atomic(const std::string& path, const std::string& content);

}  // namespace deepdemand
