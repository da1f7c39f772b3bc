#include "qpkam/kam.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <sstream>

namespace qpkam {
namespace {

std::string numStr(double x) {
  std::ostringstream os;
  os.precision(6);
  os << x;
  return os.str();
}

Mat2 realMat(const Mat2& m, const char* what) {
  if (m.maxImag() > 1e-8 * std::max(1.0, m.norm()))
    throw Error(std::string(what) + ": matrix has an imaginary part of size " +
                numStr(m.maxImag()));
  return {m.a11.real(), m.a12.real(), m.a21.real(), m.a22.real()};
}

Mat2 tracelessPart(const Mat2& m) { return m - Mat2::id() * (m.tr() * 0.5); }

// Long product chains shed trace-direction roundoff that no sl(2) solve can
// remove; project it away wherever a perturbation series is rebuilt.
MatrixSeries slProject(const MatrixSeries& s) {
  MatrixSeries out(s.dim(), s.halfLattice());
  s.forEach([&](const MultiIndex& k, const Mat2& v) { out.set(k, tracelessPart(v)); });
  return out;
}

// Drop coefficients whose weighted size at |.|_r falls below absTol; the
// removed mass is accumulated so callers can account for it.
MatrixSeries pruneWeighted(const MatrixSeries& x, const GevreyParams& g, double absTol,
                           double& dropped) {
  MatrixSeries s(x.dim(), x.halfLattice());
  double om = x.w();
  x.forEach([&](const MultiIndex& k, const Mat2& v) {
    double wm = v.norm() * std::exp(g.r * std::pow(om * k.l1(), g.nu));
    if (wm < absTol) {
      dropped += wm;
      return;
    }
    s.set(k, v);
  });
  return s;
}

// Gaussian elimination with partial pivoting on a 3x3 complex system.
void solve3(cplx m[3][3], cplx b[3]) {
  int p[3] = {0, 1, 2};
  for (int c = 0; c < 3; ++c) {
    int best = c;
    for (int r2 = c + 1; r2 < 3; ++r2)
      if (std::abs(m[p[r2]][c]) > std::abs(m[p[best]][c])) best = r2;
    std::swap(p[c], p[best]);
    cplx piv = m[p[c]][c];
    if (std::abs(piv) < 1e-250) throw Error("mode system is numerically singular");
    for (int r2 = c + 1; r2 < 3; ++r2) {
      cplx f = m[p[r2]][c] / piv;
      if (f == cplx(0)) continue;
      for (int c2 = c; c2 < 3; ++c2) m[p[r2]][c2] -= f * m[p[c]][c2];
      b[p[r2]] -= f * b[p[c]];
    }
  }
  cplx x[3];
  for (int r2 = 2; r2 >= 0; --r2) {
    cplx acc = b[p[r2]];
    for (int c2 = r2 + 1; c2 < 3; ++c2) acc -= m[p[r2]][c2] * x[c2];
    x[r2] = acc / m[p[r2]][r2];
  }
  for (int i = 0; i < 3; ++i) b[i] = x[i];
}

// Matrix of X -> A^{-1} X A on traceless matrices in coordinates
// (x11, x12, x21); A real.
void adMatrix(const Mat2& a, double c[3][3]) {
  Mat2 ai = a.inv();
  const Mat2 basis[3] = {Mat2(1, 0, 0, -1), Mat2(0, 1, 0, 0), Mat2(0, 0, 1, 0)};
  for (int j = 0; j < 3; ++j) {
    Mat2 im = ai * basis[j] * a;
    c[0][j] = im.a11.real();
    c[1][j] = im.a12.real();
    c[2][j] = im.a21.real();
  }
}

// Eigenvalues of Ad_{A^{-1}}: 1 and mu^{-+2} for an eigenvalue mu of A.
std::array<cplx, 3> adEigenvalues(const Mat2& a) {
  cplx t = a.tr() * 0.5;
  cplx mu = t + std::sqrt(t * t - 1.0);
  if (std::abs(mu) < 1e-150) throw Error("adEigenvalues: degenerate matrix");
  cplx m2 = mu * mu;
  return {cplx(1, 0), m2, 1.0 / m2};
}

double phaseOf(const MultiIndex& k, const Freq& alpha, double om) { return om * dot(k, alpha); }

// Shared Newton iteration for both elimination regimes. The three callbacks
// split a coefficient into its eliminated / kept components and solve the
// per-mode linearized equation on the eliminated component.
struct ModeCallbacks {
  std::function<Mat2(const MultiIndex&, const Mat2&)> elim;
  std::function<Mat2(const MultiIndex&, const Mat2&)> kept;
  std::function<Mat2(const MultiIndex&, const Mat2&)> solve;
};

MatrixSeries mapSeries(const MatrixSeries& s,
                       const std::function<Mat2(const MultiIndex&, const Mat2&)>& fn) {
  MatrixSeries out(s.dim(), s.halfLattice());
  s.forEach([&](const MultiIndex& k, const Mat2& v) {
    Mat2 m = fn(k, v);
    if (m.norm() != 0.0) out.set(k, m);
  });
  return out;
}

EliminationOutcome newtonRun(const Mat2& aConst, const MatrixSeries& f, const GevreyParams& gp,
                             const Freq& alpha, const KamParams& kp, double eps,
                             const ModeCallbacks& cb) {
  EliminationOutcome out;
  MatrixSeries y(f.dim(), f.halfLattice());
  MatrixSeries g = f;
  Mat2 aInv = aConst.inv();

  double target = std::max(kp.newtonTol * eps * eps, 1e-14 * eps);
  double res = mapSeries(g, cb.elim).norm(gp);
  double prev = res;
  int stall = 0;
  while (res > target && out.newtonIters < kp.maxNewton) {
    MatrixSeries delta = mapSeries(g, cb.solve);
    y = (y + delta).realPart();
    MatrixSeries ys = y.shifted(alpha);
    MatrixSeries ell = conjugateByConst(aInv, ys) * (-1.0);
    auto inner = seriesBch(f, y, kp.bchOrder, gp);
    auto whole = seriesBch(ell, inner.z, kp.bchOrder, gp);
    g = slProject(whole.z.realPart());
    g = pruneWeighted(g, gp, 1e-3 * target / double(g.supportSize() + 1), out.droppedMass);
    res = mapSeries(g, cb.elim).norm(gp);
    ++out.newtonIters;
    if (res > 0.7 * prev && res > target) {
      if (++stall >= 3) {
        // no progress left; fine when the roundoff floor already sits inside
        // the acceptance band below, fatal otherwise
        if (res <= 1e-8 * eps) break;
        throw Error("elimination: Newton iteration stalled at residual " + numStr(res));
      }
    } else {
      stall = 0;
    }
    prev = res;
  }
  if (res > std::max(target, 1e-8 * eps))
    throw Error("elimination: Newton residual " + numStr(res) + " missed its tolerance " +
                numStr(target));
  out.y = y;
  out.g = g;
  out.fre = mapSeries(g, cb.kept);
  out.residual = res;
  return out;
}

double etaBarrier(double eta, double aNorm) {
  return eta * eta * eta / (eta * eta + 3.0 * aNorm * aNorm * eta + 2.0 * std::pow(aNorm, 4));
}

// Double-double accumulator for long modular sums of a frequency.
struct FoldedSum {
  double hi = 0, lo = 0;
  void add(double a) {
    double s = hi + a;
    double bb = s - hi;
    double err = (hi - (s - bb)) + (a - bb);
    hi = s;
    lo += err;
    double t = hi + lo;
    lo -= t - hi;
    hi = t;
    if (hi >= 1.0) hi -= 1.0;
    if (hi < 0.0) hi += 1.0;
  }
};

}  // namespace

double resonanceThreshold(double eps, int64_t nTrunc, const KamParams& kp) {
  double a = std::pow(eps, kp.sigma);
  double b = 0.25 * kp.gamma * std::pow(4.0 * double(nTrunc), -kp.tau);
  return std::min(a, b);
}

int64_t truncationOrder(double eps, double r, double rNext, double nu) {
  if (!(rNext < r)) throw Error("truncationOrder: widths must decrease");
  double le = std::abs(std::log(std::max(eps, 1e-300)));
  double v = std::pow(2.0 * le / (r - rNext), 1.0 / nu) / TWO_PI;
  v = std::clamp(v, 1.0, 1e15);
  return int64_t(std::ceil(v));
}

ResonanceInfo findResonance(double xi, const Freq& alpha, int64_t nBall, double threshold,
                            int64_t scanCap) {
  ResonanceInfo out;
  out.threshold = threshold;
  int d = int(alpha.size());
  int64_t ball = std::min(nBall, scanCap);
  out.ballRadius = ball;
  out.site = MultiIndex::zero(d);
  if (ball < 1) return out;
  double target = mod1(2.0 * xi);
  if (d == 1) {
    FoldedSum x;
    double a0 = alpha[0] - std::floor(alpha[0]);
    for (int64_t n = 1; n <= ball; ++n) {
      x.add(a0);
      double dp = torusDist(target - x.hi);
      double dm = torusDist(target + x.hi);
      if (dp < out.dist) {
        out.dist = dp;
        out.site = MultiIndex{int32_t(std::min<int64_t>(n, INT32_MAX))};
        if (n > INT32_MAX) throw Error("findResonance: site exceeds index range");
      }
      if (dm < out.dist) {
        out.dist = dm;
        out.site = MultiIndex{int32_t(-std::min<int64_t>(n, INT32_MAX))};
        if (n > INT32_MAX) throw Error("findResonance: site exceeds index range");
      }
    }
  } else {
    double points = std::pow(2.0 * double(ball) + 1.0, d);
    if (points > 2e9)
      throw Error("findResonance: lattice ball of radius " + std::to_string(ball) +
                  " is too large in dimension " + std::to_string(d));
    forLatticeBall(d, ball, true, [&](const MultiIndex& k) {
      double dd = torusDist(target - dot(k, alpha));
      if (dd < out.dist) {
        out.dist = dd;
        out.site = k;
      }
    });
  }
  out.resonant = out.dist < threshold;
  return out;
}

double minDivisorSymmetric(const Mat2& a, const MultiIndex& k, const Freq& alpha) {
  auto eigs = adEigenvalues(a);
  cplx ek = std::polar(1.0, phaseOf(k, alpha, 0.5 * TWO_PI));
  double dmin = 1e300;
  for (const cplx& lam : eigs) dmin = std::min(dmin, std::abs(ek * lam - 1.0));
  return dmin;
}

EliminationOutcome eliminateSymmetric(const Mat2& a, const MatrixSeries& f, double r,
                                      const Freq& alpha, const KamParams& kp, double eps) {
  GevreyParams gp{kp.nu, r};
  Mat2 ar = realMat(a, "eliminateSymmetric");
  double aN = ar.norm();
  double om = f.w();

  double etaTheory = std::min(2.0 * aN * aN * std::pow(eps, 1.0 / 9.0), 0.25);
  double dmin = 1e300;
  f.forEach([&](const MultiIndex& k, const Mat2&) {
    if (!k.isZero()) dmin = std::min(dmin, minDivisorSymmetric(ar, k, alpha));
  });
  double eta = std::min(etaTheory, 0.9 * dmin);
  if (dmin == 1e300)
    eta = 1e30;  // no support off the zero mode, nothing to eliminate
  else if (eta < 1e-13)
    throw Error("eliminateSymmetric: a support divisor collapsed to " + numStr(dmin) +
                "; the mode belongs to the resonant branch");
  double c[3][3];
  adMatrix(ar, c);
  auto eigs = adEigenvalues(ar);

  auto gated = [&, eta](const MultiIndex& k) {
    if (k.isZero()) return false;
    cplx ek = std::polar(1.0, phaseOf(k, alpha, om));
    double dv = 1e300;
    for (const cplx& lam : eigs) dv = std::min(dv, std::abs(ek * lam - 1.0));
    return dv >= eta;
  };
  ModeCallbacks cb;
  cb.elim = [gated](const MultiIndex& k, const Mat2& v) {
    return gated(k) ? v : Mat2::zero();
  };
  cb.kept = [gated](const MultiIndex& k, const Mat2& v) {
    return gated(k) ? Mat2::zero() : v;
  };
  cb.solve = [&, gated](const MultiIndex& k, const Mat2& v) {
    if (!gated(k)) return Mat2::zero();
    cplx ek = std::polar(1.0, phaseOf(k, alpha, om));
    cplx m[3][3];
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) m[i][j] = (i == j ? 1.0 : 0.0) - ek * c[i][j];
    cplx b[3] = {-v.a11, -v.a12, -v.a21};
    solve3(m, b);
    return Mat2(b[0], b[1], b[2], -b[0]);
  };

  auto out = newtonRun(ar, f, gp, alpha, kp, eps, cb);
  out.etaTheory = etaTheory;
  out.eta = eta;
  out.etaTilde = etaBarrier(eta, aN);
  return out;
}

EliminationOutcome eliminateRotated(double xi, const MatrixSeries& fTilde, double r,
                                    const Freq& alpha, const KamParams& kp, double epsTilde,
                                    const MultiIndex& site) {
  GevreyParams gp{kp.nu, r};
  double om = fTilde.w();
  Mat2 aRot = rotation(xi);
  double aN = aRot.norm();

  // Coordinate multipliers of Ad_{R_xi^{-1}} in the su(1,1) frame and the
  // kept (coordinate, mode) pairs of the resonant twist.
  const cplx lamUp = std::polar(1.0, 2.0 * TWO_PI * xi);
  const cplx lam[3] = {cplx(1, 0), lamUp, std::conj(lamUp)};
  const int d = fTilde.dim();
  const MultiIndex keptMode[3] = {MultiIndex::zero(d), -(site + site), site + site};

  const cplx iu(0, 1);
  auto coordsOf = [](const Mat2& v) {
    Mat2 xt = mConjugate(v);
    return std::array<cplx, 3>{-cplx(0, 1) * xt.a11, xt.a12, xt.a21};
  };
  auto rebuild = [iu](const std::array<cplx, 3>& cc) {
    if (cc[0] == cplx(0) && cc[1] == cplx(0) && cc[2] == cplx(0)) return Mat2::zero();
    return mConjugateInv(Mat2(iu * cc[0], cc[1], cc[2], -iu * cc[0]));
  };
  auto divisor = [&](int coord, const MultiIndex& k) {
    cplx ek = std::polar(1.0, phaseOf(k, alpha, om));
    return std::abs(ek * lam[coord] - 1.0);
  };
  auto keptPair = [&](int coord, const MultiIndex& k) { return k == keptMode[coord]; };

  double etaTheory = std::min(2.0 * aN * aN * std::pow(epsTilde, 1.0 / 3.0), 0.25);
  double dmin = 1e300;
  fTilde.forEach([&](const MultiIndex& k, const Mat2& v) {
    auto cc = coordsOf(v);
    for (int c = 0; c < 3; ++c)
      if (cc[c] != cplx(0) && !keptPair(c, k)) dmin = std::min(dmin, divisor(c, k));
  });
  double eta = std::min(etaTheory, 0.9 * dmin);
  if (dmin == 1e300)
    eta = 1e30;  // every coordinate sits on its kept pair, nothing to eliminate
  else if (eta < 1e-13)
    throw Error("eliminateRotated: a non-resonant divisor collapsed to " + numStr(dmin));

  auto split = [&, eta](const MultiIndex& k, const Mat2& v, bool wantElim) {
    auto cc = coordsOf(v);
    for (int c = 0; c < 3; ++c) {
      bool elim = !keptPair(c, k) && divisor(c, k) >= eta;
      if (elim != wantElim) cc[c] = 0;
    }
    return rebuild(cc);
  };
  ModeCallbacks cb;
  cb.elim = [split](const MultiIndex& k, const Mat2& v) { return split(k, v, true); };
  cb.kept = [split](const MultiIndex& k, const Mat2& v) { return split(k, v, false); };
  cb.solve = [&, eta](const MultiIndex& k, const Mat2& v) {
    auto cc = coordsOf(v);
    cplx ek = std::polar(1.0, phaseOf(k, alpha, om));
    for (int c = 0; c < 3; ++c) {
      if (!keptPair(c, k) && divisor(c, k) >= eta)
        cc[c] = cc[c] / (ek * lam[c] - 1.0);
      else
        cc[c] = 0;
    }
    return rebuild(cc);
  };

  auto out = newtonRun(aRot, fTilde, gp, alpha, kp, epsTilde, cb);
  out.etaTheory = etaTheory;
  out.eta = eta;
  out.etaTilde = etaBarrier(eta, aN);
  return out;
}

KamStepOutcome kamStep(const KamState& s, double rNext, const KamParams& kp, int j) {
  if (!(rNext < s.r) || rNext <= 0) throw Error("kamStep: widths must decrease and stay positive");
  const int d = s.f.dim();
  const bool half = s.f.halfLattice();
  GevreyParams gpNow{kp.nu, s.r}, gpNext{kp.nu, rNext};

  KamStepOutcome o;
  KamStepRecord& rec = o.rec;
  rec.j = j;
  rec.r = s.r;
  rec.rNext = rNext;
  rec.eps = s.eps;
  rec.degStep = MultiIndex::zero(d);
  rec.site = MultiIndex::zero(d);

  Mat2 a = realMat(s.a, "kamStep");
  double aN = a.norm();
  rec.aNorm = aN;
  rec.nTrunc = truncationOrder(s.eps, s.r, rNext, kp.nu);
  rec.threshold = resonanceThreshold(s.eps, rec.nTrunc, kp);

  rec.gateLhs = s.eps;
  rec.gateRhs = kp.gateC * std::pow(aN, -4.0) * std::pow(s.r - rNext, 4.0 * kp.nu * kp.tau);
  rec.gatePass = rec.gateLhs <= rec.gateRhs;
  if (!rec.gatePass && kp.enforceGate)
    throw Error("kamStep " + std::to_string(j) + ": smallness gate failed, eps=" +
                numStr(rec.gateLhs) + " > " + numStr(rec.gateRhs));

  rec.elliptic = classifySl2(a) == Sl2Class::Elliptic;
  EllipticData en;
  if (rec.elliptic) {
    en = ellipticNormalForm(a);
    rec.xi = en.xi;
  }
  ResonanceInfo res;
  if (rec.elliptic)
    res = findResonance(rec.xi, s.alpha, 2 * rec.nTrunc, rec.threshold, kp.scanCap);
  rec.resonant = res.resonant;

  std::vector<BoundCheck> hardFails;
  auto check = [&](const std::string& name, double lhs, double rhs, bool hard) {
    BoundCheck b{name, lhs, rhs, lhs <= rhs};
    rec.checks.push_back(b);
    if (hard && !b.pass) hardFails.push_back(b);
  };

  if (!res.resonant) {
    auto el = eliminateSymmetric(a, s.f, s.r, s.alpha, kp, s.eps);
    Mat2 g0 = realMat(tracelessPart(el.g.mean()), "kamStep: constant block");
    Mat2 aNext = realMat(a * expMat(g0), "kamStep: new constant");
    MatrixSeries fPlus =
        slProject(seriesBch(constMatSeries(d, half, -g0), el.g, kp.bchOrder, gpNow).z.realPart());
    fPlus = pruneWeighted(fPlus, gpNext, 1e-6 * kp.newtonTol * s.eps * s.eps, rec.droppedMass);

    o.bFactors.push_back(seriesExp(el.y, gpNow, 1e-18));
    o.next = KamState{s.alpha, aNext, fPlus, rNext, fPlus.norm(gpNext)};

    rec.etaTheory = el.etaTheory;
    rec.eta = el.eta;
    rec.etaTilde = el.etaTilde;
    rec.newtonIters = el.newtonIters;
    rec.newtonResidual = el.residual;
    rec.droppedMass += el.droppedMass;
    rec.yNorm = el.y.norm(gpNow);
    rec.bNorm = o.bFactors[0].norm(gpNext);

    check("y_norm", rec.yNorm, 2.0 * std::sqrt(s.eps), true);
    check("fre_norm", el.fre.norm(gpNow), 2.0 * s.eps, true);
    check("a_step", (aNext - a).norm(), 4.0 * aN * s.eps, true);
    double tail = s.eps * std::exp(-(s.r - rNext) * std::pow(TWO_PI * double(rec.nTrunc + 1), kp.nu));
    check("f_next", o.next.eps, 8.0 * std::max(s.eps * s.eps, tail), false);
  } else {
    for (int i = 0; i < d; ++i)
      if (std::abs(2 * res.site[i]) >= (1 << 20))
        throw Error("kamStep: resonant site " + res.site.str() + " exceeds the mode range");
    rec.site = res.site;
    rec.resonanceDist = res.dist;

    Mat2 p0 = en.p;
    MatrixSeries fT = conjugateByConst(p0, s.f).realPart();
    double epsT = fT.norm(gpNow);
    auto el = eliminateRotated(rec.xi, fT, s.r, s.alpha, kp, epsT, res.site);

    // Twist by the rotor Z so the surviving off-diagonal mode becomes
    // constant; the rotation part shrinks to xi - <n_*, alpha>/2.
    MatrixSeries zPlus = rotorSeries(res.site, d);
    MatrixSeries zMinus = rotorSeries(-res.site, d);
    MatrixSeries zg = product(zMinus, product(el.g, zPlus));
    Mat2 pc = realMat(tracelessPart(zg.mean()), "kamStep: resonant block");
    double dotSA = dot(res.site, s.alpha);
    double xiP = rec.xi - 0.5 * dotSA;
    xiP -= std::round(xiP);
    Mat2 aNext = realMat(rotation(xiP) * expMat(pc), "kamStep: new constant");
    MatrixSeries fPlus =
        slProject(seriesBch(constMatSeries(d, half, -pc), zg, kp.bchOrder, gpNow).z.realPart());
    fPlus = pruneWeighted(fPlus, gpNext, 1e-6 * kp.newtonTol * epsT * epsT, rec.droppedMass);

    o.bFactors.push_back(constMatSeries(d, half, p0.inv()));
    o.bFactors.push_back(seriesExp(el.y, gpNow, 1e-18));
    o.bFactors.push_back(zPlus);
    o.next = KamState{s.alpha, aNext, fPlus, rNext, fPlus.norm(gpNext)};
    rec.degStep = res.site;

    rec.etaTheory = el.etaTheory;
    rec.eta = el.eta;
    rec.etaTilde = el.etaTilde;
    rec.newtonIters = el.newtonIters;
    rec.newtonResidual = el.residual;
    rec.droppedMass += el.droppedMass;
    rec.yNorm = el.y.norm(gpNow);
    rec.bNorm = productAll(o.bFactors).norm(gpNext);

    check("p_conj_norm", en.pNorm, en.normBound, false);
    check("y_norm", rec.yNorm, 2.0 * std::sqrt(epsT), true);
    // The new constant is small modulo the center +-Id.
    Mat2 aFold = aNext.tr().real() < 0 ? -aNext : aNext;
    Mat2 lg;
    try {
      lg = realMat(logMat(aFold), "kamStep: log of new constant");
    } catch (const Error&) {
      lg = realMat(aFold - Mat2::id(), "kamStep: log fallback");
    }
    check("a_plus_small", lg.norm(), 1.2 * TWO_PI * rec.threshold + 8.0 * epsT, true);
    Su11 cc = su11Coords(realMat(tracelessPart(lg), "kamStep: log coordinates"));
    double decay = std::exp(-s.r * std::pow(TWO_PI * double(res.site.l1()), kp.nu));
    check("t_plus", std::abs(cc.t), 1.2 * (0.5 * TWO_PI) * rec.threshold + 2.0 * epsT, false);
    check("mu_plus", std::abs(cc.mu), 4.0 * std::pow(epsT, 0.75) * decay, true);
    double bBound = 32.0 * std::pow(kp.gamma, -0.5) * std::sqrt(aN) *
                    std::pow(std::max<double>(1.0, double(res.site.l1())), kp.tau / 2.0) *
                    std::exp(rNext * std::pow((0.5 * TWO_PI) * double(res.site.l1()), kp.nu));
    check("b_norm", rec.bNorm, 4.0 * bBound, false);
    check("f_next", o.next.eps, std::pow(std::max(epsT, 1e-280), 1.2), false);
  }

  rec.aNormNext = o.next.a.norm();
  rec.epsNext = o.next.eps;
  rec.factorCount = int(o.bFactors.size());

  if (kp.assertContracts && !hardFails.empty()) {
    std::string msg = "kamStep " + std::to_string(j) + ": contract violation";
    for (const auto& b : hardFails)
      msg += " [" + b.name + ": " + numStr(b.lhs) + " > " + numStr(b.rhs) + "]";
    throw Error(msg);
  }
  return o;
}

KamResult almostReduce(const KamState& s0, double rTarget, int maxSteps, const KamParams& kp) {
  if (!(rTarget < s0.r) || rTarget <= 0)
    throw Error("almostReduce: target width must lie in (0, r0)");
  KamResult out;
  out.final = s0;
  out.degTotal = MultiIndex::zero(s0.f.dim());
  const double r0 = s0.r;
  const double rTilde = 0.5 * (r0 + rTarget);
  KamState cur = s0;
  for (int j = 0; j < maxSteps; ++j) {
    if (cur.eps < kp.underflowEps || cur.f.supportSize() == 0) {
      out.almostReduced = true;
      out.stopReason = "underflow";
      return out;
    }
    double rNext = cur.r - (r0 - rTilde) * std::pow(0.25, j + 1);
    auto st = kamStep(cur, rNext, kp, j);
    out.steps.push_back(st.rec);
    for (auto& b : st.bFactors) out.bFactors.push_back(std::move(b));
    out.degTotal = out.degTotal + st.rec.degStep;
    cur = std::move(st.next);
    out.final = cur;
    if (!st.rec.gatePass && out.stopReason.empty()) out.stopReason = "gate";
  }
  if (cur.eps < kp.underflowEps) {
    out.almostReduced = true;
    out.stopReason = "underflow";
  } else if (out.stopReason.empty()) {
    out.stopReason = "max_steps";
  }
  return out;
}

Mat2 evalFactors(const std::vector<MatrixSeries>& factors, const Freq& theta) {
  Mat2 b = Mat2::id();
  for (const auto& s : factors) b = b * s.evaluate(theta);
  return b;
}

MatrixSeries productAll(const std::vector<MatrixSeries>& factors, int64_t capN) {
  if (factors.empty()) throw Error("productAll: empty factor list");
  MatrixSeries acc = factors[0];
  for (size_t i = 1; i < factors.size(); ++i) acc = product(acc, factors[i], capN);
  return acc;
}

double conjugationResidual(const Freq& alpha, const Mat2& a, const MatrixSeries& f,
                           const std::vector<MatrixSeries>& bFactors, const Mat2& aNext,
                           const MatrixSeries& fNext, int samples) {
  static const double gvec[3][3] = {{0.6180339887498949, 0, 0},
                                    {0.7548776662466927, 0.5698402909980532, 0},
                                    {0.8191725133961644, 0.6710436067037893, 0.5497004779019703}};
  const int d = int(alpha.size());
  double worst = 0;
  for (int i = 0; i < samples; ++i) {
    Freq th(d), thA(d);
    for (int c = 0; c < d; ++c) {
      // functions on the half lattice have period 2 in each variable
      th[c] = 2.0 * mod1(0.1234567 + (i + 1) * gvec[d - 1][c]);
      thA[c] = th[c] + alpha[c];
    }
    Mat2 b0 = evalFactors(bFactors, th);
    Mat2 b1 = evalFactors(bFactors, thA);
    Mat2 lhs = b1.inv() * (a * expMat(f.evaluate(th))) * b0;
    Mat2 rhs = aNext * expMat(fNext.evaluate(th));
    worst = std::max(worst, (lhs - rhs).norm());
  }
  return worst;
}

RationalReduction reduceRational(const KamState& s0, double rTarget, int maxSteps,
                                 const MultiIndex& k, const KamParams& kp) {
  RationalReduction out;
  const int d = s0.f.dim();
  const bool half = s0.f.halfLattice();

  // When the initial constant is already resonant with the target degree
  // (2 xi ~ <k, alpha>, the generic situation at a gap edge), twist the
  // degree out first: left in, site k hands the elimination a vanishing
  // divisor, while after the twist the critical mode sits at zero frequency
  // where the constant absorbs it.
  KamState st = s0;
  std::vector<MatrixSeries> preFactors;
  MultiIndex degPre = MultiIndex::zero(d);
  Mat2 a0 = realMat(s0.a, "reduceRational");
  if (!k.isZero() && classifySl2(a0) == Sl2Class::Elliptic) {
    auto en0 = ellipticNormalForm(a0);
    if (torusDist(2.0 * en0.xi - dot(k, s0.alpha)) < 0.05) {
      double xiP = en0.xi - 0.5 * dot(k, s0.alpha);
      xiP -= std::round(xiP);
      preFactors.push_back(constMatSeries(d, half, en0.p.inv()));
      preFactors.push_back(rotorSeries(k, d));
      MatrixSeries f1 = slProject(
          product(rotorSeries(-k, d), product(conjugateByConst(en0.p, s0.f), rotorSeries(k, d)))
              .realPart());
      st = makeState(s0.alpha, rotation(xiP), f1, s0.r, kp.nu);
      degPre = k;
    }
  }

  out.kam = almostReduce(st, rTarget, maxSteps, kp);
  out.bFactors = preFactors;
  out.bFactors.insert(out.bFactors.end(), out.kam.bFactors.begin(), out.kam.bFactors.end());
  out.degB = degPre + out.kam.degTotal;
  Mat2 aF = out.kam.final.a;
  MatrixSeries fF = out.kam.final.f;

  MultiIndex m = k - out.degB;
  if (!m.isZero()) {
    if (classifySl2(aF) != Sl2Class::Elliptic)
      throw Error("reduceRational: degree alignment needs an elliptic constant");
    auto en = ellipticNormalForm(aF);
    double xiP = en.xi - 0.5 * dot(m, s0.alpha);
    xiP -= std::round(xiP);
    out.bFactors.push_back(constMatSeries(d, half, en.p.inv()));
    out.bFactors.push_back(rotorSeries(m, d));
    fF = slProject(product(rotorSeries(-m, d), product(conjugateByConst(en.p, fF), rotorSeries(m, d)))
                       .realPart());
    aF = realMat(rotation(xiP), "reduceRational");
    out.degB = out.degB + m;
  }
  out.aFinal = aF;
  out.fFinal = fF;

  out.negated = aF.tr().real() < 0;
  Mat2 base = out.negated ? -aF : aF;
  out.logA = realMat(logMat(base), "reduceRational: log of final constant");
  out.phi = (out.logA.a12 - out.logA.a21).real();
  // Kernel direction of the near-nilpotent log: smallest principal axis of
  // (log A)^T (log A).
  {
    const Mat2& g = out.logA;
    double p = std::norm(g.a11) + std::norm(g.a21);
    double s = std::norm(g.a12) + std::norm(g.a22);
    double q = (g.a11 * g.a12 + g.a21 * g.a22).real();
    if (g.norm() < 1e-250) {
      out.thetaHat = 0;
    } else {
      double phi0 = 0.5 * std::atan2(2.0 * q, p - s);  // largest axis
      double th = phi0 + 0.5 * (0.5 * TWO_PI);         // smallest axis
      while (th >= 0.5 * TWO_PI) th -= 0.5 * TWO_PI;
      while (th < 0) th += 0.5 * TWO_PI;
      out.thetaHat = th;
    }
  }
  out.residual = conjugationResidual(s0.alpha, s0.a, s0.f, out.bFactors, out.aFinal, out.fFinal);
  return out;
}

DiophantineReduction reduceDiophantine(const KamState& s0, double rTarget, int maxSteps,
                                       double kappa, double kappaTau, const KamParams& kp) {
  DiophantineReduction out;
  out.kam = almostReduce(s0, rTarget, maxSteps, kp);
  const auto& steps = out.kam.steps;

  int lastRes = -1;
  for (size_t i = 0; i < steps.size(); ++i)
    if (steps[i].resonant) lastRes = int(i);
  out.j0 = lastRes + 1;
  out.tailEps = out.j0 < int(steps.size()) ? steps[size_t(out.j0)].eps : out.kam.final.eps;

  // kappa_j gates: the rotation number stays Diophantine relative to alpha
  // along the scheme when each eps_j clears the degree-weighted gate.
  bool gatesPass = true;
  int64_t degAbs = 0;
  for (size_t i = 0; i < steps.size(); ++i) {
    double kappaJ = kappa * std::pow(1.0 + double(degAbs), -kappaTau);
    double rhs = kp.gateC * std::pow(kappaJ, 40.0 * kp.nu) * std::pow(steps[i].aNorm, -4.0) *
                 std::pow(steps[i].r - steps[i].rNext, 4.0 * kp.nu * kp.tau);
    BoundCheck b{"kappa_gate_" + std::to_string(i), steps[i].eps, rhs, steps[i].eps <= rhs};
    out.gateChecks.push_back(b);
    gatesPass = gatesPass && b.pass;
    degAbs += steps[i].degStep.l1();
  }

  // Tail conjugator past the last resonant step.
  size_t skip = 0;
  for (int i = 0; i < out.j0 && i < int(steps.size()); ++i)
    skip += size_t(steps[size_t(i)].factorCount);
  GevreyParams gp{kp.nu, out.kam.final.r};
  if (skip < out.kam.bFactors.size()) {
    std::vector<MatrixSeries> tail(out.kam.bFactors.begin() + long(skip),
                                   out.kam.bFactors.end());
    MatrixSeries zbar = productAll(tail);
    out.zbarDist = (zbar - constMatSeries(zbar.dim(), zbar.halfLattice(), Mat2::id())).norm(gp);
  } else {
    out.zbarDist = 0;
  }
  bool zbarPass = out.zbarDist <= 4.0 * std::sqrt(std::max(out.tailEps, 0.0));
  bool tailExists = out.j0 < int(steps.size()) || out.kam.almostReduced;
  out.reducible = gatesPass && zbarPass && tailExists;
  return out;
}

KamState makeState(const Freq& alpha, const Mat2& a, const MatrixSeries& f, double r,
                   double nu) {
  if (int(alpha.size()) != f.dim()) throw Error("makeState: frequency dimension mismatch");
  if (r <= 0) throw Error("makeState: width must be positive");
  Mat2 ar = realMat(a, "makeState");
  if (std::abs(ar.det().real() - 1.0) > 1e-9)
    throw Error("makeState: the constant part must have determinant 1");
  MatrixSeries g = f.halfLattice() ? f : f.toHalfLattice();
  double scale = std::max(1.0, g.normZero());
  if (g.realDefect() > 1e-10 * scale)
    throw Error("makeState: the perturbation must be a real series");
  double trDefect = 0;
  g.forEach([&](const MultiIndex&, const Mat2& v) {
    trDefect = std::max(trDefect, std::abs(v.tr()));
  });
  if (trDefect > 1e-10 * scale)
    throw Error("makeState: the perturbation must be traceless");
  GevreyParams gp{nu, r};
  MatrixSeries gr = g.realPart();
  return KamState{alpha, ar, gr, r, gr.norm(gp)};
}

}  // namespace qpkam
