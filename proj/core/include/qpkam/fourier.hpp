#pragma once

/*
 * Finitely supported Fourier series f(theta) = sum_k f_k e^{i w <k,theta>}
 * over the d-torus (w = 2 pi, period 1) or its double cover (w = pi,
 * period 2), with the sub-exponentially weighted norms
 *
 *   |f|_r = sum_k |f_k| exp(r (w |k|_1)^nu),   0 < nu < 1, r > 0,
 *
 * which make each space a Banach algebra under convolution. Embedding the
 * torus into its double cover doubles every index and is an isometry for
 * these norms. Coefficients live in a key-ordered map so all traversals,
 * and hence all floating-point accumulation orders, are deterministic.
 */

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "qpkam/common.hpp"
#include "qpkam/mat2.hpp"

namespace qpkam {

struct GevreyParams {
  double nu = 0.5;
  double r = 1.0;
};

inline double vNorm(cplx v) { return std::abs(v); }
inline double vNorm(const Mat2& v) { return v.norm(); }
inline cplx vConj(cplx v) { return std::conj(v); }
inline Mat2 vConj(const Mat2& v) { return v.conj(); }
template <class V>
inline V vZero() {
  return V{};
}
template <>
inline Mat2 vZero<Mat2>() {
  return Mat2::zero();
}

template <class V>
class Series {
 public:
  Series() = default;
  Series(int d, bool half) : d_(d), half_(half) {
    if (d < 1 || d > 3) throw Error("Series: dimension must be 1, 2 or 3");
  }

  static Series constant(int d, bool half, const V& v) {
    Series s(d, half);
    s.set(MultiIndex::zero(d), v);
    return s;
  }

  int dim() const { return d_; }
  bool halfLattice() const { return half_; }
  // Angular frequency of the characters e^{i w <k, theta>}.
  double w() const { return half_ ? 0.5 * TWO_PI : TWO_PI; }

  const std::map<uint64_t, V>& raw() const { return c_; }
  size_t supportSize() const { return c_.size(); }
  bool empty() const { return c_.empty(); }

  void set(const MultiIndex& k, const V& v) {
    checkDim(k);
    c_[k.key()] = v;
  }
  void add(const MultiIndex& k, const V& v) {
    checkDim(k);
    auto it = c_.find(k.key());
    if (it == c_.end())
      c_.emplace(k.key(), v);
    else
      it->second = it->second + v;
  }
  V coeff(const MultiIndex& k) const {
    auto it = c_.find(k.key());
    return it == c_.end() ? vZero<V>() : it->second;
  }
  V mean() const { return coeff(MultiIndex::zero(d_)); }

  template <class F>
  void forEach(F&& fn) const {
    for (const auto& [key, v] : c_) fn(MultiIndex::fromKey(key, d_), v);
  }

  Series operator+(const Series& o) const {
    requireSameLattice(o);
    Series s = *this;
    for (const auto& [key, v] : o.c_) {
      auto it = s.c_.find(key);
      if (it == s.c_.end())
        s.c_.emplace(key, v);
      else
        it->second = it->second + v;
    }
    return s;
  }
  Series operator-(const Series& o) const { return *this + o * (-1.0); }
  Series operator*(double t) const {
    Series s = *this;
    for (auto& [key, v] : s.c_) v = v * t;
    return s;
  }
  Series operator*(cplx t) const {
    Series s = *this;
    for (auto& [key, v] : s.c_) v = v * t;
    return s;
  }

  // |f|_r with weight exp(r (w |k|_1)^nu); r = 0 gives the coefficient sum,
  // an upper bound for the sup norm.
  double norm(const GevreyParams& g) const {
    double acc = 0;
    double om = w();
    for (const auto& [key, v] : c_) {
      MultiIndex k = MultiIndex::fromKey(key, d_);
      acc += vNorm(v) * std::exp(g.r * std::pow(om * k.l1(), g.nu));
    }
    return acc;
  }
  double normZero() const {
    double acc = 0;
    for (const auto& [key, v] : c_) acc += vNorm(v);
    return acc;
  }

  // Largest |k|_1 in the support (0 for the empty series).
  int64_t supportRadius() const {
    int64_t m = 0;
    for (const auto& [key, v] : c_) {
      (void)v;
      m = std::max(m, (int64_t)MultiIndex::fromKey(key, d_).l1());
    }
    return m;
  }

  Series truncated(int64_t n) const {
    Series s(d_, half_);
    for (const auto& [key, v] : c_)
      if (MultiIndex::fromKey(key, d_).l1() <= n) s.c_.emplace(key, v);
    return s;
  }
  Series projected(const std::function<bool(const MultiIndex&)>& keep) const {
    Series s(d_, half_);
    for (const auto& [key, v] : c_)
      if (keep(MultiIndex::fromKey(key, d_))) s.c_.emplace(key, v);
    return s;
  }
  Series pruned(double tol) const {
    Series s(d_, half_);
    for (const auto& [key, v] : c_)
      if (vNorm(v) > tol) s.c_.emplace(key, v);
    return s;
  }

  // f(theta + alpha): multiplies each coefficient by e^{i w <k, alpha>}.
  Series shifted(const Freq& alpha) const {
    if ((int)alpha.size() != d_) throw Error("Series::shifted: frequency dimension mismatch");
    Series s = *this;
    double om = w();
    for (auto& [key, v] : s.c_) {
      MultiIndex k = MultiIndex::fromKey(key, d_);
      double ph = 0;
      for (int i = 0; i < d_; ++i) ph += k[i] * alpha[i];
      v = v * cplx(std::cos(om * ph), std::sin(om * ph));
    }
    return s;
  }

  V evaluate(const Freq& theta) const {
    if ((int)theta.size() != d_) throw Error("Series::evaluate: point dimension mismatch");
    V acc = vZero<V>();
    double om = w();
    for (const auto& [key, v] : c_) {
      MultiIndex k = MultiIndex::fromKey(key, d_);
      double ph = 0;
      for (int i = 0; i < d_; ++i) ph += k[i] * theta[i];
      acc = acc + v * cplx(std::cos(om * ph), std::sin(om * ph));
    }
    return acc;
  }

  // Complex conjugate function: coefficient conj(f_{-k}) at k.
  Series conjFunction() const {
    Series s(d_, half_);
    for (const auto& [key, v] : c_) {
      MultiIndex k = MultiIndex::fromKey(key, d_);
      s.set(-k, vConj(v));
    }
    return s;
  }

  // Distance to the cone of real-valued functions, max_k |f_k - conj(f_{-k})|.
  double realDefect() const {
    double m = 0;
    for (const auto& [key, v] : c_) {
      MultiIndex k = MultiIndex::fromKey(key, d_);
      m = std::max(m, vNorm(v - vConj(coeff(-k))));
    }
    return m;
  }
  // Orthogonal projection onto real-valued functions; fills in the mirror
  // mode -k even when only k is present.
  Series realPart() const {
    Series s(d_, half_);
    for (const auto& [key, v] : c_) {
      MultiIndex k = MultiIndex::fromKey(key, d_);
      V sym = (v + vConj(coeff(-k))) * 0.5;
      s.set(k, sym);
      s.set(-k, vConj(sym));
    }
    return s;
  }

  // Index-doubling embedding of the torus into its double cover (isometric).
  Series toHalfLattice() const {
    if (half_) return *this;
    Series s(d_, true);
    for (const auto& [key, v] : c_) {
      MultiIndex k = MultiIndex::fromKey(key, d_);
      s.set(k * 2, v);
    }
    return s;
  }
  // Inverse of the embedding; requires every index to be even.
  Series toFullLattice() const {
    if (!half_) return *this;
    Series s(d_, false);
    for (const auto& [key, v] : c_) {
      MultiIndex k = MultiIndex::fromKey(key, d_);
      MultiIndex h = MultiIndex::zero(d_);
      for (int i = 0; i < d_; ++i) {
        if (k[i] % 2 != 0) throw Error("Series::toFullLattice: odd index " + k.str());
        h[i] = k[i] / 2;
      }
      s.set(h, v);
    }
    return s;
  }

  void requireSameLattice(const Series& o) const {
    if (d_ != o.d_ || half_ != o.half_) throw Error("Series: lattice mismatch");
  }

 private:
  void checkDim(const MultiIndex& k) const {
    if (k.dim() != d_) throw Error("Series: index dimension mismatch");
    // the packed map key holds 21 bits per coordinate
    for (int i = 0; i < d_; ++i)
      if (k[i] >= (1 << 20) || k[i] <= -(1 << 20))
        throw Error("Series: mode index out of representable range " + k.str());
  }

  int d_ = 1;
  bool half_ = false;
  std::map<uint64_t, V> c_;
};

using ScalarSeries = Series<cplx>;
using MatrixSeries = Series<Mat2>;

// Convolution product; modes with |k|_1 > capN are dropped when capN >= 0.
template <class V>
Series<V> product(const Series<V>& a, const Series<V>& b, int64_t capN = -1) {
  a.requireSameLattice(b);
  Series<V> s(a.dim(), a.halfLattice());
  a.forEach([&](const MultiIndex& ka, const V& va) {
    b.forEach([&](const MultiIndex& kb, const V& vb) {
      MultiIndex k = ka + kb;
      if (capN >= 0 && k.l1() > capN) return;
      s.add(k, va * vb);
    });
  });
  return s;
}

inline MatrixSeries matFromScalar(const ScalarSeries& s, int row, int col) {
  MatrixSeries m(s.dim(), s.halfLattice());
  s.forEach([&](const MultiIndex& k, cplx v) {
    Mat2 b = Mat2::zero();
    if (row == 1 && col == 1) b.a11 = v;
    if (row == 1 && col == 2) b.a12 = v;
    if (row == 2 && col == 1) b.a21 = v;
    if (row == 2 && col == 2) b.a22 = v;
    m.set(k, b);
  });
  return m;
}

inline ScalarSeries entrySeries(const MatrixSeries& m, int row, int col) {
  ScalarSeries s(m.dim(), m.halfLattice());
  m.forEach([&](const MultiIndex& k, const Mat2& v) {
    cplx e = (row == 1) ? (col == 1 ? v.a11 : v.a12) : (col == 1 ? v.a21 : v.a22);
    s.set(k, e);
  });
  return s;
}

// P X(theta) P^{-1}, coefficientwise conjugation by a constant matrix.
inline MatrixSeries conjugateByConst(const Mat2& p, const MatrixSeries& x) {
  Mat2 pi = p.inv();
  MatrixSeries s(x.dim(), x.halfLattice());
  x.forEach([&](const MultiIndex& k, const Mat2& v) { s.set(k, p * v * pi); });
  return s;
}

inline MatrixSeries constMatSeries(int d, bool half, const Mat2& m) {
  return MatrixSeries::constant(d, half, m);
}

// exp of a matrix series by its power series. Terms are added until the
// geometric tail in |.|_r drops below tol; modes beyond capN are dropped.
MatrixSeries seriesExp(const MatrixSeries& x, const GevreyParams& g, double tol, int64_t capN = -1);

// Truncated BCH product log(e^X e^Y) of matrix series, orders 2..4, with the
// same remainder bound as the pointwise version in mat2.hpp.
struct SeriesBch {
  MatrixSeries z;
  double remainderBound = 0;
};
SeriesBch seriesBch(const MatrixSeries& x, const MatrixSeries& y, int order, const GevreyParams& g,
                    int64_t capN = -1);

// Z_n(theta) = exp(pi <n, theta> K) = R_{<n,theta>/2} on the double cover:
// exact two-mode series with coefficients at +-n.
MatrixSeries rotorSeries(const MultiIndex& n, int d);

// Text form of a scalar series: groups "[k1 .. kd re im]" separated by
// whitespace, full-torus indices.
ScalarSeries parseSeriesLiteral(const std::string& text, int d);
std::string formatSeriesLiteral(const ScalarSeries& s);

}  // namespace qpkam
