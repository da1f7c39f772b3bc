#include "qpkam/duality.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace qpkam {
namespace {

std::string numStr(double x) {
  std::ostringstream os;
  os.precision(6);
  os << x;
  return os.str();
}

double l2of(const ScalarSeries& s) {
  double acc = 0;
  s.forEach([&](const MultiIndex&, cplx v) { acc += std::norm(v); });
  return std::sqrt(acc);
}

// Constant unitary with det 1 whose columns are the joint eigenvectors of
// every rotation R_xi: C^{-1} R_xi C = diag(e^{i 2 pi xi}, e^{-i 2 pi xi}).
Mat2 rotationDiagonalizer() {
  const double s = std::sqrt(0.5);
  const cplx ph = std::polar(s, -0.125 * TWO_PI);
  return {ph, ph, ph * cplx(0, -1), ph * cplx(0, 1)};
}

// Low-discrepancy sup of ||B(theta)|| (same generator vectors the
// conjugation residual sampler uses).
double supOnTorus(const MatrixSeries& b, int samples) {
  static const double gvec[3][3] = {{0.6180339887498949, 0, 0},
                                    {0.7548776662466927, 0.5698402909980532, 0},
                                    {0.8191725133961644, 0.6710436067037893, 0.5497004779019703}};
  int d = b.dim();
  double m = 0;
  for (int t = 0; t < samples; ++t) {
    Freq theta(static_cast<size_t>(d));
    for (int i = 0; i < d; ++i)
      theta[static_cast<size_t>(i)] = mod1((t + 0.5) * gvec[d - 1][i]);
    m = std::max(m, b.evaluate(theta).norm());
  }
  return m;
}

}  // namespace

LongRangeOperator makeLongRange(const ScalarSeries& w, double lambda, const Freq& alpha,
                                double phi) {
  if (w.halfLattice()) throw Error("makeLongRange: the symbol lives on full-lattice modes");
  if (static_cast<int>(alpha.size()) != w.dim())
    throw Error("makeLongRange: frequency dimension mismatch");
  if (lambda < 0) throw Error("makeLongRange: negative diagonal coupling");
  double defect = w.realDefect();
  if (defect > 1e-10 * (1.0 + w.normZero()))
    throw Error("makeLongRange: symbol is not a real function (defect " + numStr(defect) + ")");
  return LongRangeOperator{w, lambda, alpha, mod1(phi)};
}

LongRangeOperator dualOperator(const SchrodingerProblem& prob, double lambda, double phi) {
  if (lambda <= 0) throw Error("dualOperator: the duality coupling must be positive");
  return makeLongRange(prob.v * lambda, lambda, prob.alpha, phi);
}

LatticeVector makeLatticeVector(const ScalarSeries& c, int64_t window) {
  if (c.halfLattice()) throw Error("makeLatticeVector: entries live on full-lattice modes");
  if (window < 0) throw Error("makeLatticeVector: negative window");
  int64_t rad = c.supportRadius();
  if (rad > window)
    throw Error("makeLatticeVector: support radius " + std::to_string(rad) +
                " exceeds the window " + std::to_string(window));
  LatticeVector u(c.dim(), window);
  u.c = c;
  return u;
}

double l2Norm(const LatticeVector& u) { return l2of(u.c); }

cplx latticeDot(const LatticeVector& x, const LatticeVector& y) {
  x.c.requireSameLattice(y.c);
  cplx acc = 0;
  x.c.forEach([&](const MultiIndex& n, cplx v) { acc += std::conj(v) * y.c.coeff(n); });
  return acc;
}

LatticeVector shiftedVector(const LatticeVector& u, const MultiIndex& s) {
  if (s.dim() != u.c.dim()) throw Error("shiftedVector: shift dimension mismatch");
  LatticeVector out(u.c.dim(), u.window + s.l1());
  u.c.forEach([&](const MultiIndex& n, cplx v) { out.c.set(n + s, v); });
  return out;
}

LatticeVector longRangeApply(const LongRangeOperator& op, const LatticeVector& u) {
  if (static_cast<int>(op.alpha.size()) != u.c.dim())
    throw Error("longRangeApply: dimension mismatch");
  int64_t win = u.window + op.w.supportRadius();
  if (win >= (1 << 20))
    throw Error("longRangeApply: window " + std::to_string(win) +
                " exceeds the representable index range");
  LatticeVector out(u.c.dim(), win);
  u.c.forEach([&](const MultiIndex& n, cplx uv) {
    op.w.forEach([&](const MultiIndex& k, cplx wv) { out.c.add(n + k, wv * uv); });
    double diag = 2.0 * op.lambda * std::cos(TWO_PI * (op.phi + dot(n, op.alpha)));
    out.c.add(n, uv * diag);
  });
  return out;
}

double eigenResidual(const LongRangeOperator& op, const LatticeVector& u, cplx mu) {
  LatticeVector lu = longRangeApply(op, u);
  return l2of(lu.c - u.c * mu);
}

DualityReport dualEigenfunction(const SchrodingerProblem& prob, double lambda, double E,
                                const MultiIndex& m, const DiophantineReduction& red,
                                double tailTol) {
  int d = static_cast<int>(prob.alpha.size());
  if (lambda <= 0) throw Error("dualEigenfunction: the duality coupling must be positive");
  if (m.dim() != d) throw Error("dualEigenfunction: site dimension mismatch");
  if (tailTol <= 0 || tailTol >= 1) throw Error("dualEigenfunction: tailTol must lie in (0, 1)");
  if (!red.reducible)
    throw Error("dualEigenfunction: the reduction did not certify a resonance-free tail, "
                "so the conjugacy has no constant limit to triangularize");
  const KamResult& kam = red.kam;

  // the shift m' = m - deg(B)/2 must stay on the lattice
  MultiIndex mPrime = m;
  for (int i = 0; i < d; ++i) {
    if (kam.degTotal[i] % 2 != 0)
      throw Error("dualEigenfunction: conjugacy degree " + kam.degTotal.str() +
                  " is odd in coordinate " + std::to_string(i + 1) +
                  ", so the site shift m - deg/2 leaves the lattice; rerun the reduction "
                  "to a different width or relabel the site");
    mPrime[i] = m[i] - kam.degTotal[i] / 2;
  }

  EllipticData el;
  try {
    el = ellipticNormalForm(kam.final.a);
  } catch (const Error& e) {
    throw Error(std::string("dualEigenfunction: reduced constant is not elliptic (") + e.what() +
                ")");
  }

  const double nu = prob.p.nu;
  const double rf = kam.final.r;
  GevreyParams gf{nu, rf};
  Mat2 right = el.p.inv() * rotationDiagonalizer();

  // a priori envelope from the factor norms fixes the support cut before the
  // product is assembled
  double bNormBound = right.norm(), bSupBound = right.norm();
  for (const auto& fac : kam.bFactors) {
    bNormBound *= fac.norm(gf);
    bSupBound *= fac.normZero();
  }
  double logArg = 2.0 * bNormBound * bSupBound / tailTol;
  int64_t cut = 1;
  if (logArg > 1.0)
    cut = static_cast<int64_t>(std::ceil(std::pow(std::log(logArg) / rf, 1.0 / nu) / TWO_PI)) + 1;
  if (cut > 200000)
    throw Error("dualEigenfunction: envelope cut " + std::to_string(cut) +
                " is out of range; raise tailTol or reduce to a larger width");

  MatrixSeries bm(d, true);
  if (kam.bFactors.empty()) {
    bm.set(MultiIndex::zero(d), right);
  } else {
    productAll(kam.bFactors, 2 * cut).forEach([&](const MultiIndex& k, const Mat2& v) {
      bm.set(k, v * right);
    });
  }

  double bGevrey = bm.norm(gf);
  double bSup = supOnTorus(bm, 256);

  // an even total degree forces a single parity class on the support
  double oddMass = 0;
  bm.forEach([&](const MultiIndex& k, const Mat2& v) {
    for (int i = 0; i < d; ++i)
      if (k[i] % 2 != 0) {
        oddMass = std::max(oddMass, v.norm());
        return;
      }
  });
  if (oddMass > 1e-10 * (1.0 + bGevrey))
    throw Error("dualEigenfunction: conjugacy carries odd-parity mass " + numStr(oddMass) +
                " against an even total degree; the factor bookkeeping is inconsistent");
  MatrixSeries bmEven = bm.projected([&](const MultiIndex& k) {
    for (int i = 0; i < d; ++i)
      if (k[i] % 2 != 0) return false;
    return true;
  });

  ScalarSeries b11 = entrySeries(bmEven, 1, 1).toFullLattice();
  double zNorm = l2of(b11);
  bool second = false;
  double xiUsed = el.xi;
  if (zNorm < 1e-13 * std::max(1.0, bGevrey)) {
    // the second column solves the mirror equation with xi -> -xi; with a
    // real B P^{-1} both columns carry the same mass pointwise, so reaching
    // this branch signals a degenerate reduction rather than a bad column
    second = true;
    xiUsed = -el.xi;
    b11 = entrySeries(bmEven, 1, 2).toFullLattice();
    zNorm = l2of(b11);
    if (zNorm < 1e-13 * std::max(1.0, bGevrey))
      throw Error("dualEigenfunction: both columns of the triangularized conjugacy are "
                  "numerically degenerate (mass " + numStr(zNorm) + ")");
  }

  DualityReport rep;
  rep.energy = E;
  rep.eigenvalue = cplx(lambda * E, 0);
  rep.xi = xiUsed;
  rep.mPrime = mPrime;
  rep.phi = mod1(xiUsed - dot(mPrime, prob.alpha));
  rep.op = dualOperator(prob, lambda, rep.phi);
  rep.rFinal = rf;
  rep.bGevrey = bGevrey;
  rep.bSup = bSup;
  rep.zNorm = zNorm;
  rep.zNormFloor = 0.5 / bSup;
  rep.secondColumn = second;
  rep.window = cut + mPrime.l1();
  rep.tailCut = bGevrey * std::exp(-rf * std::pow(TWO_PI * static_cast<double>(cut + 1), nu)) / zNorm;

  rep.u = LatticeVector(d, rep.window);
  double inv = 1.0 / zNorm;
  b11.forEach([&](const MultiIndex& k, cplx v) { rep.u.c.set(k + mPrime, v * inv); });
  rep.residual = eigenResidual(rep.op, rep.u, rep.eigenvalue);
  return rep;
}

GoodnessReport goodEigenfunctionTest(const LatticeVector& u, double nu, double N, double C,
                                     double eps) {
  if (nu <= 0 || nu >= 1) throw Error("goodEigenfunctionTest: nu must lie in (0, 1)");
  if (eps <= 0 || eps >= 1) throw Error("goodEigenfunctionTest: eps must lie in (0, 1)");
  if (N <= 0 || C <= 0) throw Error("goodEigenfunctionTest: N and C must be positive");
  GoodnessReport rep;
  rep.c = C;
  rep.epsilon = eps;
  rep.nCut = (1.0 - eps) * N;
  rep.worstSite = MultiIndex::zero(u.c.dim());
  u.c.forEach([&](const MultiIndex& n, cplx v) {
    double l1 = n.l1();
    if (l1 < rep.nCut) return;
    ++rep.tested;
    double ratio = std::abs(v) * std::exp(C * eps * std::pow(l1, nu));
    if (ratio > rep.worstRatio) {
      rep.worstRatio = ratio;
      rep.worstSite = n;
    }
  });
  rep.pass = rep.worstRatio <= 1.0;
  return rep;
}

}  // namespace qpkam
