#ifndef ICF_COMMON_HPP
#define ICF_COMMON_HPP

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace icf {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape mismatch in a linear-algebra operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Bad or missing configuration key / value. CLI exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed input file.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Well-formed input carrying out-of-contract values.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Divergence or nonfinite values during optimization.
class TrainingError : public Error {
 public:
  using Error::Error;
};

// Checkpoint unreadable or inconsistent with the live config. CLI exit code 3.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

// Empty cohort or degenerate metric input.
class EvalError : public Error {
 public:
  using Error::Error;
};

// User has no history and no fallback is allowed. CLI exit code 4.
class ColdStartError : public Error {
 public:
  using Error::Error;
};

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives an independent stream seed from a base seed and a stream id.
inline uint64_t mix_seed(uint64_t base, uint64_t stream) {
  return splitmix64(base ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

// Deterministic RNG (xoroshiro128++ engine, seeded via splitmix64). The
// uniform/gaussian transforms are hand-rolled so that sequences do not depend
// on the standard library's unspecified distribution algorithms.
class Rng {
 public:
  explicit Rng(uint64_t seed) : s0_(splitmix64(seed)), s1_(splitmix64(seed ^ 0xdeadbeefcafef00dULL)) {
    if (s0_ == 0 && s1_ == 0) s1_ = 1;
  }

  uint64_t next_u64() {
    // xoroshiro128++, fully specified and portable
    uint64_t a = s0_, b = s1_;
    uint64_t r = rotl(a + b, 17) + a;
    b ^= a;
    s0_ = rotl(a, 49) ^ b ^ (b << 21);
    s1_ = rotl(b, 28);
    return r;
  }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // unbiased integer in [0, n)
  uint64_t below(uint64_t n) {
    uint64_t threshold = (0 - n) % n;
    for (;;) {
      uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  int uniform_int(int n) { return static_cast<int>(below(static_cast<uint64_t>(n))); }

  double gaussian() {
    // Box-Muller, cached spare
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1, u2;
    do {
      u1 = uniform();
    } while (u1 <= 1e-300);
    u2 = uniform();
    double mag = std::sqrt(-2.0 * std::log(u1));
    double two_pi = 6.283185307179586476925286766559;
    spare_ = mag * std::sin(two_pi * u2);
    has_spare_ = true;
    return mag * std::cos(two_pi * u2);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  // k distinct values from [0, n), in draw order
  std::vector<int> sample_without_replacement(int n, int k) {
    std::vector<int> pool(n);
    for (int i = 0; i < n; ++i) pool[i] = i;
    if (k > n) k = n;
    std::vector<int> out(k);
    for (int i = 0; i < k; ++i) {
      int j = i + uniform_int(n - i);
      std::swap(pool[i], pool[j]);
      out[i] = pool[i];
    }
    return out;
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  uint64_t s0_, s1_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace icf

#endif
