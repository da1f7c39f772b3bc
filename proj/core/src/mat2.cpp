#include "qpkam/mat2.hpp"

#include <algorithm>

namespace qpkam {

Mat2 rotation(double phi) {
  double c = std::cos(TWO_PI * phi), s = std::sin(TWO_PI * phi);
  return {c, -s, s, c};
}

Mat2 matM() {
  cplx f = 1.0 / cplx(1.0, 1.0);
  return {f, f * cplx(0, -1), f, f * cplx(0, 1)};
}

Mat2 matMinv() {
  // M is unitary up to the chosen normalization; the adjugate inverts it exactly.
  return matM().inv();
}

Su11 su11Coords(const Mat2& x_sl2r) {
  Mat2 y = mConjugate(x_sl2r);
  Su11 c;
  c.t = y.a11.imag();
  c.mu = y.a12;
  return c;
}

Mat2 fromSu11(const Su11& c) {
  Mat2 y(cplx(0, c.t), c.mu, std::conj(c.mu), cplx(0, -c.t));
  return mConjugateInv(y);
}

// sinh(w)/w, stable near w = 0.
static cplx sinhc(cplx w) {
  if (std::abs(w) < 1e-5) {
    cplx w2 = w * w;
    return 1.0 + w2 / 6.0 + w2 * w2 / 120.0;
  }
  return std::sinh(w) / w;
}

Mat2 expMat(const Mat2& x) {
  cplx h = x.tr() * 0.5;
  Mat2 x0 = x - Mat2::id() * h;
  // x0 traceless: x0^2 = -det(x0) Id =: w^2 Id.
  cplx w = std::sqrt(-x0.det());
  cplx ch, shc;
  if (std::abs(w) < 1e-5) {
    cplx w2 = w * w;
    ch = 1.0 + w2 * 0.5 + w2 * w2 / 24.0;
    shc = sinhc(w);
  } else {
    ch = std::cosh(w);
    shc = std::sinh(w) / w;
  }
  Mat2 r = Mat2::id() * ch + x0 * shc;
  return r * std::exp(h);
}

Mat2 logMat(const Mat2& a) {
  cplx h = a.tr() * 0.5;
  Mat2 a0 = a - Mat2::id() * h;  // traceless part
  // eigenvalues h +- delta with delta^2 = h^2 - det(a)
  cplx delta = std::sqrt(h * h - a.det());
  cplx l1 = h + delta, l2 = h - delta;
  auto onCut = [](cplx z) { return z.real() <= 0.0 && std::abs(z.imag()) < 1e-14 * std::max(1.0, std::abs(z.real())); };
  if (std::abs(l1) < 1e-300 || std::abs(l2) < 1e-300) throw Error("logMat: singular matrix");
  if (onCut(l1) || onCut(l2)) throw Error("logMat: eigenvalue on the closed negative real axis");
  cplx s = (std::log(l1) + std::log(l2)) * 0.5;
  cplx q;
  if (std::abs(delta) < 1e-12 * std::max(1.0, std::abs(h))) {
    // nearly equal eigenvalues: log(a) = s Id + a0 / h + O(delta^2)
    q = 1.0 / h;
  } else {
    q = (std::log(l1) - std::log(l2)) / (2.0 * delta);
  }
  return Mat2::id() * s + a0 * q;
}

Sl2Class classifySl2(const Mat2& a, double parabolicTol) {
  double t = a.tr().real();
  if (std::abs(std::abs(t) - 2.0) <= parabolicTol) return Sl2Class::Parabolic;
  return std::abs(t) < 2.0 ? Sl2Class::Elliptic : Sl2Class::Hyperbolic;
}

cplx eigenAngle(const Mat2& a) {
  cplx h = a.tr() * 0.5;
  cplx delta = std::sqrt(h * h - a.det());
  cplx lambda = h + delta;
  if (std::abs(lambda) < std::abs(h - delta)) lambda = h - delta;
  // lambda = e^{i 2 pi xi}
  return std::log(lambda) / cplx(0, TWO_PI);
}

EllipticData ellipticNormalForm(const Mat2& a) {
  if (!a.isReal(1e-9)) throw Error("ellipticNormalForm: matrix not real");
  if (std::abs(a.det().real() - 1.0) > 1e-9) throw Error("ellipticNormalForm: det != 1");
  double t = a.tr().real();
  if (std::abs(t) >= 2.0 - 1e-12) {
    Sl2Class c = classifySl2(a);
    throw Error(std::string("ellipticNormalForm: matrix not elliptic (") +
                (c == Sl2Class::Parabolic ? "parabolic" : "hyperbolic") + ")");
  }
  double xi0 = std::acos(t * 0.5) / TWO_PI;  // principal angle in (0, 1/2)
  double s = std::sin(TWO_PI * xi0);
  // Complex eigenvector v = (a12, lambda - a11) for lambda = e^{i 2 pi xi0};
  // fall back to the other row if degenerate.
  cplx lambda(std::cos(TWO_PI * xi0), s);
  cplx v1 = a.a12, v2 = lambda - a.a11;
  if (std::abs(v1) + std::abs(v2) < 1e-14) {
    v1 = lambda - a.a22;
    v2 = a.a21;
  }
  // Writing v = x + i y, A [x|y] = [x|y] R_{-xi0}. If det[x|y] < 0 the frame
  // [x|-y] is positively oriented instead and A [x|-y] = [x|-y] R_{+xi0}.
  // det[x|y] is invariant under v -> e^{i phi} v, so the sign of xi is fixed
  // before the phase search.
  double dq0 = v1.real() * v2.imag() - v2.real() * v1.imag();
  if (dq0 == 0.0) throw Error("ellipticNormalForm: degenerate eigenvector");
  double xi = dq0 < 0 ? xi0 : -xi0;
  auto buildP = [&](cplx w1, cplx w2) -> std::optional<Mat2> {
    double x1 = w1.real(), x2 = w2.real(), y1 = w1.imag(), y2 = w2.imag();
    double dq = x1 * y2 - x2 * y1;
    if (dq == 0.0) return std::nullopt;
    if (dq < 0) {
      y1 = -y1;
      y2 = -y2;
      dq = -dq;
    }
    double sc = 1.0 / std::sqrt(dq);
    Mat2 q(x1 * sc, y1 * sc, x2 * sc, y2 * sc);
    return q.inv();
  };
  // Phase freedom v -> e^{i phi} v changes the real frame; pick the phase
  // with the smallest conjugator norm.
  EllipticData best;
  best.pNorm = 1e300;
  for (int j = 0; j < 64; ++j) {
    double phi = j * (3.141592653589793 / 64.0);
    cplx ph(std::cos(phi), std::sin(phi));
    auto p = buildP(v1 * ph, v2 * ph);
    if (!p) continue;
    double n = p->norm();
    if (n < best.pNorm) {
      best.p = *p;
      best.pNorm = n;
    }
  }
  if (best.pNorm >= 1e300) throw Error("ellipticNormalForm: degenerate eigenvector");
  Mat2 check = best.p * a * best.p.inv() - rotation(xi);
  if (check.norm() > 1e-8 * std::max(1.0, a.norm())) {
    throw Error("ellipticNormalForm: conjugation residual too large");
  }
  best.xi = xi;
  best.normBound = 16.0 * std::max(0.5, std::sqrt(a.norm() / (2.0 * std::abs(s))));
  return best;
}

BchResult bchProduct(const Mat2& x, const Mat2& y, int order) {
  if (order < 2 || order > 4) throw Error("bchProduct: order must be 2, 3 or 4");
  double s = x.norm() + y.norm();
  if (s > 0.25) throw Error("bchProduct: ||X|| + ||Y|| > 1/4, outside the validity region");
  Mat2 z = x + y;
  Mat2 xy = commutator(x, y);
  z = z + xy * 0.5;
  if (order >= 3) {
    z = z + (commutator(x, xy) - commutator(y, xy)) * (1.0 / 12.0);
  }
  if (order >= 4) {
    z = z - commutator(y, commutator(x, xy)) * (1.0 / 24.0);
  }
  BchResult r;
  r.z = z;
  // Crude geometric tail bound for the omitted degrees, ample for s <= 1/4.
  double tail = std::pow(s, order + 1);
  r.remainderBound = 2.0 * tail / (1.0 - 2.0 * s + 1e-15);
  return r;
}

}  // namespace qpkam
