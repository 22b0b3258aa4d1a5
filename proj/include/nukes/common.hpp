#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace nukes {

enum class ErrCode {
  MissingFile,
  HeaderMismatch,
  NonFiniteData,
  IoFailure,
  RankDeficient,
  DimensionMismatch,
  ShapeMismatch,
  IndexOutOfRange,
  DegreeUnsupported,
  OutOfDomain,
  ZeroDenominator,
  InvalidParam,
  NonScalarOutput,
  OddSpatialSize,
  ChannelMismatch,
  ZeroVector,
  TooFewPatches,
  AllElementsGuarded,
  IdenticalImages,
  ConstantReference,
  CorruptCheckpoint,
  ConfigInvalid,
};

const char* err_name(ErrCode c);

class Error : public std::runtime_error {
 public:
  Error(ErrCode code, const std::string& what)
      : std::runtime_error(std::string(err_name(code)) + ": " + what), code_(code) {}
  ErrCode code() const { return code_; }

 private:
  ErrCode code_;
};

[[noreturn]] inline void fail(ErrCode code, const std::string& what) { throw Error(code, what); }

// Deterministic RNG. Distributions are hand-rolled so that streams are
// reproducible across standard library versions.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed ^ 0x9e3779b97f4a7c15ull) {
    // warm up splitmix so nearby seeds decorrelate
    next_u64();
    next_u64();
  }

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller, one value per call (the pair's twin is discarded for stream simplicity)
  double normal() {
    double u1 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  // integer in [0, n)
  uint64_t below(uint64_t n) { return next_u64() % n; }

  // derive an independent stream for a named purpose
  Rng fork(uint64_t salt) const {
    uint64_t s = state_;
    s ^= salt * 0xd6e8feb86659fd93ull + 0x2545f4914f6cdd1dull;
    return Rng(s);
  }

 private:
  uint64_t state_;
};

// Thread cap from NUKES_THREADS (default 1). Parallel loops partition work by
// index ranges only; every element is computed by exactly one thread, so
// results are bit-identical to the sequential order.
int max_threads();
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& body);

inline int64_t numel_of(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const std::vector<int>& shape);

}  // namespace nukes
