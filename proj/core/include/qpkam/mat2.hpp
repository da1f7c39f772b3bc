#pragma once

/*
 * Complex 2x2 matrices with the structure maps used throughout:
 * sl(2,R) <-> su(1,1) conjugation by M = (1/(1+i)) (1 -i; 1 i),
 * closed-form exp/log, elliptic normal form, truncated
 * Baker-Campbell-Hausdorff products.
 *
 * The matrix norm everywhere is ||A|| = 2 max_ij |a_ij|; it is
 * submultiplicative and matches the series norms in fourier.hpp.
 */

#include <optional>

#include "qpkam/common.hpp"

namespace qpkam {

struct Mat2 {
  cplx a11{0}, a12{0}, a21{0}, a22{0};

  Mat2() = default;
  Mat2(cplx x11, cplx x12, cplx x21, cplx x22) : a11(x11), a12(x12), a21(x21), a22(x22) {}

  static Mat2 id() { return {1, 0, 0, 1}; }
  static Mat2 zero() { return {0, 0, 0, 0}; }

  Mat2 operator+(const Mat2& o) const { return {a11 + o.a11, a12 + o.a12, a21 + o.a21, a22 + o.a22}; }
  Mat2 operator-(const Mat2& o) const { return {a11 - o.a11, a12 - o.a12, a21 - o.a21, a22 - o.a22}; }
  Mat2 operator-() const { return {-a11, -a12, -a21, -a22}; }
  Mat2 operator*(const Mat2& o) const {
    return {a11 * o.a11 + a12 * o.a21, a11 * o.a12 + a12 * o.a22,
            a21 * o.a11 + a22 * o.a21, a21 * o.a12 + a22 * o.a22};
  }
  Mat2 operator*(cplx c) const { return {c * a11, c * a12, c * a21, c * a22}; }
  Mat2 operator*(double c) const { return {c * a11, c * a12, c * a21, c * a22}; }

  cplx tr() const { return a11 + a22; }
  cplx det() const { return a11 * a22 - a12 * a21; }
  Mat2 transpose() const { return {a11, a21, a12, a22}; }
  Mat2 conj() const { return {std::conj(a11), std::conj(a12), std::conj(a21), std::conj(a22)}; }

  // Unimodular inverse: adjugate / det, exact for det = 1.
  Mat2 inv() const {
    cplx dt = det();
    if (std::abs(dt) < 1e-300) throw Error("Mat2::inv: singular matrix");
    cplx s = 1.0 / dt;
    return {a22 * s, -a12 * s, -a21 * s, a11 * s};
  }

  double norm() const {
    return 2.0 * std::max(std::max(std::abs(a11), std::abs(a12)),
                          std::max(std::abs(a21), std::abs(a22)));
  }
  double maxImag() const {
    return std::max(std::max(std::abs(a11.imag()), std::abs(a12.imag())),
                    std::max(std::abs(a21.imag()), std::abs(a22.imag())));
  }
  bool isReal(double tol = 1e-11) const { return maxImag() <= tol; }
};

inline Mat2 commutator(const Mat2& x, const Mat2& y) { return x * y - y * x; }

// J = (0 1; -1 0): M J M^{-1} = diag(i, -i).
inline Mat2 matJ() { return {0, 1, -1, 0}; }

// K = -J generates counterclockwise rotations: exp(2 pi phi K) = R_phi.
inline Mat2 matK() { return {0, -1, 1, 0}; }

// R_phi = (cos -sin; sin cos)(2 pi phi): counterclockwise rotation, so the
// rotation number of the constant cocycle (alpha, R_phi) is phi itself.
Mat2 rotation(double phi);

// M = (1/(1+i)) (1 -i; 1 i) with M (x, y+z; y-z, -x) M^{-1} = (iz, x-iy; x+iy, -iz).
Mat2 matM();
Mat2 matMinv();
inline Mat2 mConjugate(const Mat2& b) { return matM() * b * matMinv(); }
inline Mat2 mConjugateInv(const Mat2& x) { return matMinv() * x * matM(); }

// su(1,1)-form coordinates (it, mu; conj mu, -it) of M X M^{-1} for X in sl(2,R).
struct Su11 {
  double t = 0;
  cplx mu{0};
};
Su11 su11Coords(const Mat2& x_sl2r);
Mat2 fromSu11(const Su11& c);

// Closed-form exponential: X = (tr/2) Id + X0, X0^2 = -det(X0) Id.
Mat2 expMat(const Mat2& x);

// Principal logarithm through the eigenvalues; throws if an eigenvalue lies
// on the closed negative real axis or the matrix is not diagonalizable-safe.
Mat2 logMat(const Mat2& a);

enum class Sl2Class { Elliptic, Parabolic, Hyperbolic };
Sl2Class classifySl2(const Mat2& a, double parabolicTol = 1e-10);

// Elliptic normal form: real P with det P = 1 and P A P^{-1} = R_xi.
// xi is signed, in (-1/2, 0) or (0, 1/2): SL(2,R) conjugation preserves the
// sense of an elliptic rotation, so the sign is intrinsic to A.
// ||P|| <= 16 max{1/2, sqrt(||A|| / (2 |sin 2 pi xi|))}.
struct EllipticData {
  Mat2 p;
  double xi = 0;
  double pNorm = 0;
  double normBound = 0;
};
EllipticData ellipticNormalForm(const Mat2& a);

// Rotation angle parameter of A (eigenvalues e^{+-i 2 pi xi}); for
// non-elliptic A the angle is complex (hyperbolic) or 0 / 1/2 (parabolic).
cplx eigenAngle(const Mat2& a);

// Truncated BCH product log(e^X e^Y) with a crude remainder bound
// valid for ||X|| + ||Y|| <= 1/4. order in {2, 3, 4}.
struct BchResult {
  Mat2 z;
  double remainderBound = 0;
};
BchResult bchProduct(const Mat2& x, const Mat2& y, int order);

}  // namespace qpkam
