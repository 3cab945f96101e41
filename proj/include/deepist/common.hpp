#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace deepist {

/// Input data violates a documented precondition or invariant.
class ValidationError : public std::runtime_error {
public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

/// File could not be read, written or parsed.
class IoError : public std::runtime_error {
public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Bad configuration key, value or command-line argument.
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Training loss became non-finite.
class DivergenceError : public std::runtime_error {
public:
  explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Mixes several seed components into one stream seed. Used to derive
/// independent, schedule-invariant seeds (e.g. per sample, per layer).
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0,
                              std::uint64_t c = 0, std::uint64_t d = 0) {
  std::uint64_t s = a;
  std::uint64_t out = splitmix64(s);
  s ^= b + 0x632be59bd9b4e019ULL;
  out ^= splitmix64(s);
  s ^= c + 0x9e3779b97f4a7c15ULL;
  out ^= splitmix64(s);
  s ^= d + 0xd1b54a32d192ed03ULL;
  out ^= splitmix64(s);
  return out;
}

/// Deterministic generator with a fixed algorithm so streams are identical
/// across standard libraries (std distributions are not portable).
class Rng {
public:
  explicit Rng(std::uint64_t seed) : state_(seed ^ 0x5851f42d4c957f2dULL) {
    next_u64();
  }

  std::uint64_t next_u64() { return splitmix64(state_); }

  /// Uniform in [0, 1).
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) {
    return lo + (hi - lo) * next_double();
  }

  /// Uniform integer in [0, n). Rejection-sampled, unbiased.
  std::uint64_t next_below(std::uint64_t n) {
    if (n == 0) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

private:
  std::uint64_t state_;
};

/// Runs fn(begin, end) over contiguous index chunks, one chunk per worker.
/// Chunk boundaries depend only on (n, threads), so any per-chunk results
/// reduced in chunk order are reproducible run to run.
inline void parallel_chunks(
    std::size_t n, unsigned threads,
    const std::function<void(std::size_t chunk, std::size_t begin,
                             std::size_t end)>& fn) {
  if (threads == 0) threads = 1;
  if (threads > n) threads = n > 0 ? static_cast<unsigned>(n) : 1;
  if (threads <= 1) {
    if (n > 0) fn(0, 0, n);
    return;
  }
  std::vector<std::thread> workers;
  workers.reserve(threads);
  const std::size_t base = n / threads;
  const std::size_t rem = n % threads;
  std::size_t begin = 0;
  for (unsigned t = 0; t < threads; ++t) {
    const std::size_t len = base + (t < rem ? 1 : 0);
    const std::size_t end = begin + len;
    workers.emplace_back([&fn, t, begin, end] { fn(t, begin, end); });
    begin = end;
  }
  for (auto& w : workers) w.join();
}

}  // namespace deepist
