#pragma once
// Shared plumbing: errors, shapes, seeded RNG streams, thread pool, hashing.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <stdexcept>
#include <string>
#include <sstream>
#include <vector>
#include <thread>
#include <functional>
#include <cmath>
#include <algorithm>

namespace tpgsr {

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Builds a message from stream pieces: fail("bad shape ", x, " vs ", y)
template <class... Args>
[[noreturn]] inline void fail(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  throw Error(os.str());
}

template <class... Args>
inline void check(bool cond, Args&&... args) {
  if (!cond) fail(std::forward<Args>(args)...);
}

using Shape = std::vector<int64_t>;

inline int64_t numel_of(const Shape& s) {
  int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string r = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) r += ",";
    r += std::to_string(s[i]);
  }
  return r + "]";
}

// ---------------------------------------------------------------------------
// RNG: explicit, seedable, with hand-rolled distributions so streams are
// identical across platforms and element types.
// ---------------------------------------------------------------------------

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(uint64_t seed) { reseed(seed); }
  // Independent stream for (seed, index) pairs, e.g. per-sample generation.
  Rng(uint64_t seed, uint64_t index) {
    uint64_t s = seed ^ (0x9e3779b97f4a7c15ULL * (index + 1));
    splitmix64(s);
    reseed(splitmix64(s));
  }

  uint64_t next_u64() { return splitmix64(state_); }

  // uniform in [0,1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // inclusive integer range
  int64_t randint(int64_t lo, int64_t hi) {
    return lo + int64_t(next_u64() % uint64_t(hi - lo + 1));
  }

  // Box-Muller; always consumes two uniforms (no cached spare → stream
  // position is a pure function of call count).
  double normal() {
    double u1 = uniform(), u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  template <class It>
  void shuffle(It first, It last) {
    auto n = last - first;
    for (auto i = n - 1; i > 0; --i) {
      auto j = randint(0, i);
      std::swap(first[i], first[j]);
    }
  }

 private:
  void reseed(uint64_t seed) { state_ = seed ? seed : 0x6a09e667f3bcc909ULL; }
  uint64_t state_ = 0;
};

// ---------------------------------------------------------------------------
// Worker threads. TPGSR_THREADS caps the count; default is the hardware
// concurrency capped at 4. parallel_for shards [0,n) into per-thread chunks
// with a fixed layout so any follow-up reduction can run in chunk order.
// ---------------------------------------------------------------------------

inline int max_threads() {
  static int cached = [] {
    int hw = int(std::thread::hardware_concurrency());
    if (hw <= 0) hw = 1;
    int n = std::min(hw, 4);
    if (const char* env = std::getenv("TPGSR_THREADS")) {
      char* end = nullptr;
      long v = std::strtol(env, &end, 10);
      if (end != env && v >= 1) n = int(std::min<long>(v, 64));
    }
    return n;
  }();
  return cached;
}

// Runs fn(begin, end, chunk_index) over disjoint chunks. chunk count and
// boundaries depend only on (n, threads), so per-chunk partial results can be
// combined deterministically by ascending chunk index.
inline int plan_chunks(int64_t n, int threads) {
  if (n <= 0) return 0;
  return int(std::min<int64_t>(threads, n));
}

inline void parallel_chunks(int64_t n,
                            const std::function<void(int64_t, int64_t, int)>& fn) {
  int threads = max_threads();
  int chunks = plan_chunks(n, threads);
  if (chunks <= 1) {
    if (n > 0) fn(0, n, 0);
    return;
  }
  int64_t per = (n + chunks - 1) / chunks;
  std::vector<std::thread> pool;
  pool.reserve(size_t(chunks));
  for (int c = 0; c < chunks; ++c) {
    int64_t b = c * per, e = std::min<int64_t>(n, b + per);
    if (b >= e) break;
    pool.emplace_back([&fn, b, e, c] { fn(b, e, c); });
  }
  for (auto& t : pool) t.join();
}

// Simple per-index parallel loop (no cross-index state allowed in fn).
inline void parallel_for(int64_t n, const std::function<void(int64_t)>& fn) {
  parallel_chunks(n, [&fn](int64_t b, int64_t e, int) {
    for (int64_t i = b; i < e; ++i) fn(i);
  });
}

// ---------------------------------------------------------------------------
// FNV-1a 64-bit hash (config fingerprints).
// ---------------------------------------------------------------------------

inline uint64_t fnv1a64(const void* data, size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = 0xcbf29ce484222325ULL;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)v);
  return buf;
}

}  // namespace tpgsr
