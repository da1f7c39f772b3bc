#pragma once

/*
 * Shared small utilities: multi-indices on Z^d (d <= 3), torus distance,
 * error type, deterministic hashing, and a minimal thread pool helper.
 */

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace qpkam {

inline constexpr double TWO_PI = 6.283185307179586476925286766559;

using cplx = std::complex<double>;

struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Frequency vector alpha in R^d, d <= 3.
using Freq = std::vector<double>;

// Multi-index k in Z^d, d <= 3, stored padded with zeros.
struct MultiIndex {
  std::array<int32_t, 3> k{0, 0, 0};
  int d = 1;

  MultiIndex() = default;
  MultiIndex(std::initializer_list<int32_t> v) {
    d = static_cast<int>(v.size());
    int i = 0;
    for (auto x : v) k[static_cast<size_t>(i++)] = x;
  }
  static MultiIndex zero(int dim) {
    MultiIndex m;
    m.d = dim;
    return m;
  }
  int dim() const { return d; }
  int32_t operator[](int i) const { return k[static_cast<size_t>(i)]; }
  int32_t& operator[](int i) { return k[static_cast<size_t>(i)]; }
  int l1() const {
    int s = 0;
    for (int i = 0; i < d; ++i) s += std::abs(k[static_cast<size_t>(i)]);
    return s;
  }
  MultiIndex operator+(const MultiIndex& o) const {
    MultiIndex r = *this;
    for (int i = 0; i < d; ++i) r.k[static_cast<size_t>(i)] += o.k[static_cast<size_t>(i)];
    return r;
  }
  MultiIndex operator-(const MultiIndex& o) const {
    MultiIndex r = *this;
    for (int i = 0; i < d; ++i) r.k[static_cast<size_t>(i)] -= o.k[static_cast<size_t>(i)];
    return r;
  }
  MultiIndex operator-() const {
    MultiIndex r = *this;
    for (int i = 0; i < d; ++i) r.k[static_cast<size_t>(i)] = -r.k[static_cast<size_t>(i)];
    return r;
  }
  MultiIndex operator*(int32_t c) const {
    MultiIndex r = *this;
    for (int i = 0; i < d; ++i) r.k[static_cast<size_t>(i)] *= c;
    return r;
  }
  bool operator==(const MultiIndex& o) const { return d == o.d && k == o.k; }
  bool isZero() const {
    for (int i = 0; i < d; ++i)
      if (k[static_cast<size_t>(i)] != 0) return false;
    return true;
  }
  // Packed key: 21 bits per coordinate, ordered lexicographically by
  // (k_0, k_1, k_2); gives deterministic map iteration.
  uint64_t key() const {
    uint64_t r = 0;
    for (int i = 0; i < 3; ++i) {
      uint64_t v = static_cast<uint64_t>(static_cast<int64_t>(k[static_cast<size_t>(i)]) + (1 << 20));
      r = (r << 21) | (v & 0x1FFFFF);
    }
    return r;
  }
  static MultiIndex fromKey(uint64_t key, int dim) {
    MultiIndex m;
    m.d = dim;
    for (int i = 2; i >= 0; --i) {
      m.k[static_cast<size_t>(i)] = static_cast<int32_t>(static_cast<int64_t>(key & 0x1FFFFF) - (1 << 20));
      key >>= 21;
    }
    return m;
  }
  std::string str() const {
    std::string s = "(";
    for (int i = 0; i < d; ++i) s += std::to_string(k[static_cast<size_t>(i)]) + (i + 1 < d ? "," : "");
    return s + ")";
  }
};

inline double dot(const MultiIndex& n, const Freq& alpha) {
  double s = 0;
  for (int i = 0; i < n.d; ++i) s += n[i] * alpha[static_cast<size_t>(i)];
  return s;
}

// Distance to the nearest integer, |x|_T.
inline double torusDist(double x) {
  double f = x - std::floor(x);
  return std::min(f, 1.0 - f);
}

// Fold into [0, 1).
inline double mod1(double x) {
  double f = x - std::floor(x);
  if (f >= 1.0) f -= 1.0;
  return f;
}

// Enumerate all n in Z^d with 0 <= |n|_1 <= N (includes 0 unless skipZero).
template <class F>
void forLatticeBall(int d, int64_t N, bool skipZero, F&& fn) {
  if (d == 1) {
    for (int64_t a = -N; a <= N; ++a) {
      if (skipZero && a == 0) continue;
      MultiIndex m;
      m.d = 1;
      m[0] = static_cast<int32_t>(a);
      fn(m);
    }
  } else if (d == 2) {
    for (int64_t a = -N; a <= N; ++a)
      for (int64_t b = -(N - std::abs(a)); b <= N - std::abs(a); ++b) {
        if (skipZero && a == 0 && b == 0) continue;
        MultiIndex m;
        m.d = 2;
        m[0] = static_cast<int32_t>(a);
        m[1] = static_cast<int32_t>(b);
        fn(m);
      }
  } else {
    for (int64_t a = -N; a <= N; ++a)
      for (int64_t b = -(N - std::abs(a)); b <= N - std::abs(a); ++b)
        for (int64_t c = -(N - std::abs(a) - std::abs(b)); c <= N - std::abs(a) - std::abs(b); ++c) {
          if (skipZero && a == 0 && b == 0 && c == 0) continue;
          MultiIndex m;
          m.d = 3;
          m[0] = static_cast<int32_t>(a);
          m[1] = static_cast<int32_t>(b);
          m[2] = static_cast<int32_t>(c);
          fn(m);
        }
  }
}

// FNV-1a, used to stamp config content into outputs.
inline uint64_t fnv1a(const std::string& data) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// Static partition of [0, n) over worker threads; fn(i) must be pure or
// write only to its own slot, so results do not depend on the thread count.
// The first exception thrown by any worker is rethrown on the caller.
inline void parallelFor(int64_t n, int threads, const std::function<void(int64_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  int t = static_cast<int>(std::min<int64_t>(threads, n));
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errs(static_cast<size_t>(t));
  pool.reserve(static_cast<size_t>(t));
  for (int w = 0; w < t; ++w) {
    pool.emplace_back([&, w]() {
      try {
        for (int64_t i = w; i < n; i += t) fn(i);
      } catch (...) {
        errs[static_cast<size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
}

inline int hardwareThreads() {
  unsigned h = std::thread::hardware_concurrency();
  return h == 0 ? 1 : static_cast<int>(h);
}

}  // namespace qpkam
