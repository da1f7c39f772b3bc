#include "qpkam/spectral.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>

namespace qpkam {

namespace {

std::string numStr(double x) {
  std::ostringstream os;
  os.precision(6);
  os << x;
  return os.str();
}

MatrixSeries rightMulConst(const MatrixSeries& x, const Mat2& m) {
  MatrixSeries s(x.dim(), x.halfLattice());
  x.forEach([&](const MultiIndex& k, const Mat2& v) { s.set(k, v * m); });
  return s;
}

// Pointwise sup of max|entry| on a phase grid; the doubled period of the
// half lattice is respected. This is the norm the averaging lemma uses for
// its precondition (the Gevrey coefficient norm counts the identity as 2
// and would make the bound unreachable).
double supEntryGrid(const MatrixSeries& z) {
  const int d = z.dim();
  const double period = z.halfLattice() ? 2.0 : 1.0;
  int g = d == 1 ? 512 : (d == 2 ? 48 : 12);
  int64_t total = 1;
  for (int i = 0; i < d; ++i) total *= g;
  double best = 0;
  Freq th(static_cast<size_t>(d), 0.0);
  for (int64_t idx = 0; idx < total; ++idx) {
    int64_t rest = idx;
    for (int i = 0; i < d; ++i) {
      th[static_cast<size_t>(i)] = period * double(rest % g) / double(g);
      rest /= g;
    }
    Mat2 m = z.evaluate(th);
    best = std::max(best, 0.5 * m.norm());
  }
  return best;
}

}  // namespace

SchrodingerProblem makeProblem(const Freq& alpha, const ScalarSeries& v, const GevreyParams& p) {
  if (v.halfLattice()) throw Error("makeProblem: potential must use full-torus modes");
  if (static_cast<int>(alpha.size()) != v.dim())
    throw Error("makeProblem: frequency dimension mismatch");
  if (v.realDefect() > 1e-10 * (1.0 + v.normZero()))
    throw Error("makeProblem: potential must be real-valued");
  if (!(p.r > 0) || !(p.nu > 0) || !(p.nu < 1))
    throw Error("makeProblem: need width r > 0 and exponent nu in (0,1)");
  SchrodingerProblem prob;
  prob.alpha = alpha;
  prob.v = v.realPart();
  prob.p = p;
  prob.eps0 = prob.v.norm(p);
  return prob;
}

SchrodingerProblem cosineProblem(const Freq& alpha, double lambda, const GevreyParams& p, int d) {
  if (static_cast<int>(alpha.size()) != d)
    throw Error("cosineProblem: frequency dimension mismatch");
  ScalarSeries v(d, false);
  MultiIndex e1 = MultiIndex::zero(d);
  e1[0] = 1;
  v.set(e1, cplx(lambda, 0));
  v.set(-e1, cplx(lambda, 0));
  return makeProblem(alpha, v, p);
}

SchrodingerCocycle schrodingerCocycle(const SchrodingerProblem& prob, double E) {
  const int d = prob.v.dim();
  SchrodingerCocycle sc;
  sc.aE = Mat2(E, -1, 1, 0);
  sc.f = matFromScalar(prob.v, 2, 1).toHalfLattice();
  // f is strictly lower triangular, so e^f = Id + f exactly
  MatrixSeries ef = constMatSeries(d, true, Mat2::id()) + sc.f;
  sc.map = CocycleMap(prob.alpha, {constMatSeries(d, true, sc.aE), ef});
  return sc;
}

double rotationAt(const SchrodingerProblem& prob, double E, int64_t iters) {
  SchrodingerCocycle sc = schrodingerCocycle(prob, E);
  Freq th0(prob.alpha.size(), 0.0);
  double rho = rotationNumber(sc.map, th0, iters).rho;
  // transfer cocycles never wind past a half turn per step
  if (rho > 0.5) rho = 1.0 - rho;
  return rho;
}

double ids(const SchrodingerProblem& prob, double E, int64_t iters) {
  double n = 1.0 - 2.0 * rotationAt(prob, E, iters);
  return std::min(1.0, std::max(0.0, n));
}

double energyAtRotation(const SchrodingerProblem& prob, double target, double eLo, double eHi,
                        double eTol, int64_t rhoIters) {
  if (!(eLo < eHi)) throw Error("energyAtRotation: empty bracket");
  if (target < 0.0 || target > 0.5)
    throw Error("energyAtRotation: target rotation number outside [0, 1/2]");
  double rLo = rotationAt(prob, eLo, rhoIters);
  double rHi = rotationAt(prob, eHi, rhoIters);
  if (target > rLo + 1e-9 || target < rHi - 1e-9)
    throw Error("energyAtRotation: bracket does not straddle the target rotation number");
  double lo = eLo, hi = eHi;
  for (int it = 0; it < 64 && hi - lo > eTol; ++it) {
    double mid = 0.5 * (lo + hi);
    if (rotationAt(prob, mid, rhoIters) >= target)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

namespace {

// Probe windows for the hyperbolicity ramp; the growth threshold 6/window
// keeps the certified contraction factor fixed while narrow gaps get the
// longer windows they need.
constexpr int64_t kUhWindows[] = {200, 1600, 12800, 102400};

struct LabelTask {
  MultiIndex k;
  double target = 0;  // plateau value of rho for this label
};

}  // namespace

bool certifiedHyperbolic(const SchrodingerProblem& prob, double E, int grid) {
  SchrodingerCocycle sc = schrodingerCocycle(prob, E);
  for (int64_t w : kUhWindows) {
    UhResult u = uniformHyperbolicity(sc.map, w, grid, 6.0 / double(w), 0.1, 1);
    if (u.verdict == UhVerdict::UH) return true;
  }
  return false;
}

std::vector<GapRecord> findGaps(const SchrodingerProblem& prob, const GapScanControls& ctl) {
  const int d = static_cast<int>(prob.alpha.size());
  if (ctl.kMax < 1) throw Error("findGaps: kMax must be positive");
  if (!(ctl.eHi > ctl.eLo)) throw Error("findGaps: energy window is empty");

  std::vector<LabelTask> tasks;
  forLatticeBall(d, ctl.kMax, true, [&](const MultiIndex& k) {
    double t = 0.5 * mod1(dot(k, prob.alpha));
    // labels whose plateau hugs rho = 0 or 1/2 are indistinguishable from
    // the spectral edges at this tolerance
    if (t > 4 * ctl.labelTol && t < 0.5 - 4 * ctl.labelTol) tasks.push_back({k, t});
  });
  std::sort(tasks.begin(), tasks.end(), [](const LabelTask& a, const LabelTask& b) {
    if (a.target != b.target) return a.target > b.target;  // ascending in energy
    for (int i = 0; i < a.k.dim(); ++i)
      if (a.k[i] != b.k[i]) return a.k[i] < b.k[i];
    return false;
  });

  auto rhoAt = [&](double E) { return rotationAt(prob, E, ctl.rhoIters); };
  const double rhoLo = rhoAt(ctl.eLo);
  const double rhoHi = rhoAt(ctl.eHi);

  auto runLabel = [&](const LabelTask& task) -> GapRecord {
    GapRecord rec;
    rec.k = task.k;
    rec.rho = task.target;

    // certified membership in this label's gap: uniformly hyperbolic at some
    // probe window and the rotation number sits on the right plateau
    auto inGap = [&](double E) -> std::optional<double> {
      double rm = rhoAt(E);
      if (std::abs(rm - task.target) > 2 * ctl.labelTol) return std::nullopt;  // off the plateau
      if (certifiedHyperbolic(prob, E, ctl.uhGrid)) return rm;
      return std::nullopt;
    };

    double lo = ctl.eLo, hi = ctl.eHi;
    if (!(task.target < rhoLo && task.target > rhoHi)) {
      rec.eMinus = rec.ePlus = 0.5 * (lo + hi);
      return rec;  // plateau not bracketed by the energy window
    }

    // bisect the rotation number down to the plateau, then certify; a
    // bracket below the edge tolerance cannot hold a resolvable gap
    double eStar = 0, rStar = 0;
    bool found = false;
    for (int it = 0; it < 80 && hi - lo > 0.25 * ctl.edgeTol; ++it) {
      double m = 0.5 * (lo + hi);
      double rm = rhoAt(m);
      if (std::abs(rm - task.target) <= ctl.labelTol) {
        if (auto r = inGap(m)) {
          eStar = m;
          rStar = *r;
          found = true;
          break;
        }
      }
      if (rm > task.target)
        lo = m;
      else
        hi = m;
    }
    if (!found) {
      // plateau thinner than the probes certify: report the location only
      double m = 0.5 * (lo + hi);
      rec.eMinus = rec.ePlus = m;
      rec.labelResidual = torusDist(2.0 * rhoAt(m) - dot(task.k, prob.alpha));
      return rec;
    }
    rec.labelResidual = torusDist(2.0 * rStar - dot(task.k, prob.alpha));

    // push each edge outward: lo / hi still sit strictly off the plateau
    auto refine = [&](double inside, double outside) {
      int guard = 0;
      while (std::abs(outside - inside) > ctl.edgeTol && guard++ < 200) {
        double m = 0.5 * (inside + outside);
        if (inGap(m))
          inside = m;
        else
          outside = m;
      }
      return 0.5 * (inside + outside);
    };
    rec.ePlus = refine(eStar, hi);
    rec.eMinus = refine(eStar, lo);
    rec.length = rec.ePlus - rec.eMinus;
    rec.resolved = true;
    return rec;
  };

  std::vector<GapRecord> out(tasks.size());
  if (ctl.threads > 1) {
    parallelFor(static_cast<int64_t>(tasks.size()), ctl.threads,
                [&](int64_t i) { out[static_cast<size_t>(i)] = runLabel(tasks[static_cast<size_t>(i)]); });
  } else {
    for (size_t i = 0; i < tasks.size(); ++i) out[i] = runLabel(tasks[i]);
  }
  return out;
}

std::vector<DecayCheck> verifyGapDecay(const std::vector<GapRecord>& gaps, double eps0,
                                       const GevreyParams& p) {
  std::vector<DecayCheck> out;
  out.reserve(gaps.size());
  for (const GapRecord& g : gaps) {
    DecayCheck dc;
    dc.k = g.k;
    dc.measured = g.length;
    dc.bound = std::sqrt(eps0) * std::exp(-p.r * std::pow(TWO_PI * g.k.l1(), p.nu));
    dc.pass = dc.measured <= dc.bound;
    out.push_back(dc);
  }
  return out;
}

std::vector<double> finiteSectionSpectrum(const SchrodingerProblem& prob, const Freq& theta,
                                          int size) {
  if (theta.size() != prob.alpha.size())
    throw Error("finiteSectionSpectrum: phase dimension mismatch");
  if (size < 1 || size > 4096) throw Error("finiteSectionSpectrum: size must be in [1, 4096]");
  Eigen::VectorXd diag(size);
  Freq th(theta);
  for (int n = 0; n < size; ++n) {
    diag[n] = prob.v.evaluate(th).real();
    for (size_t i = 0; i < th.size(); ++i) th[i] += prob.alpha[i];
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
  if (size == 1) return {diag[0]};
  Eigen::VectorXd sub = Eigen::VectorXd::Ones(size - 1);
  es.computeFromTridiagonal(diag, sub, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw Error("finiteSectionSpectrum: eigensolver failed");
  return std::vector<double>(es.eigenvalues().data(), es.eigenvalues().data() + size);
}

double supDR(double R, double nu, double gamma, double tau) {
  if (!(R > 0) || !(nu > 0) || !(nu < 1) || !(gamma > 0) || !(tau > 0))
    throw Error("supDR: need R > 0, nu in (0,1), gamma > 0, tau > 0");
  auto h = [&](double t) {
    return 4.0 * std::pow(gamma, -3.0) * std::pow(t, 3.0 * tau) *
           std::exp(-0.5 * R * std::pow(TWO_PI * t, nu));
  };
  // h is unimodal on t > 0, so the integer sup sits next to the stationary point
  double tStar = std::pow(6.0 * tau / (R * nu * std::pow(TWO_PI, nu)), 1.0 / nu);
  double best = h(1.0);
  if (tStar > 1.0) {
    best = std::max(best, h(std::floor(tStar)));
    best = std::max(best, h(std::ceil(tStar)));
  }
  return best;
}

double dDeltaClosedForm(double delta, double c, double z11sq, double z11z12, double z12sq) {
  return -delta * z11sq * c + delta * delta * (z11sq * z12sq - z11z12 * z11z12) -
         0.25 * delta * delta * c * c * z11sq * z11sq;
}

MoserPoschelData moserPoschelStep(const Freq& alpha, const MatrixSeries& z, double c, double delta,
                                  double R, double nu, double gamma, double tau) {
  const int d = z.dim();
  if (static_cast<int>(alpha.size()) != d)
    throw Error("moserPoschelStep: frequency dimension mismatch");
  if (!z.halfLattice()) throw Error("moserPoschelStep: conjugacy must use half-lattice modes");
  if (!(delta > 0)) throw Error("moserPoschelStep: delta must be positive");

  const GevreyParams gR{nu, R};
  const GevreyParams gHalf{nu, R / 2};

  MoserPoschelData out;
  out.dR = supDR(R, nu, gamma, tau);
  out.zNorm = z.norm(gR);
  out.gateRhs = 0.25 / (out.dR * out.zNorm * out.zNorm);
  if (!(delta < out.gateRhs))
    throw Error("moserPoschelStep: delta " + numStr(delta) + " violates the averaging gate " +
                numStr(out.gateRhs));

  ScalarSeries z11 = entrySeries(z, 1, 1);
  ScalarSeries z12 = entrySeries(z, 1, 2);
  ScalarSeries s11 = product(z11, z11);
  ScalarSeries s12 = product(z11, z12);
  ScalarSeries s22 = product(z12, z12);
  out.z11sq = s11.mean().real();
  out.z11z12 = s12.mean().real();
  out.z12sq = s22.mean().real();

  out.b0 = Mat2(0, c, 0, 0);
  out.b1 = Mat2(out.z11z12 - 0.5 * c * out.z11sq, out.z12sq - c * out.z11z12, -out.z11sq,
                0.5 * c * out.z11sq - out.z11z12);
  out.dDelta = dDeltaClosedForm(delta, c, out.z11sq, out.z11z12, out.z12sq);

  // P = Z(.+alpha)^{-1} E11 Z(.) depends only on the first row of Z
  MatrixSeries p = matFromScalar(s12 - s11 * c, 1, 1) + matFromScalar(s22 - s12 * c, 1, 2) +
                   matFromScalar(s11 * (-1.0), 2, 1) + matFromScalar(s12 * (-1.0), 2, 2);
  out.pNorm = p.norm(gR);

  // Y = delta Y1 with Y1 solved from B^{-1} Y1(.+alpha) B - Y1 = G1 - [G1],
  // G1 = -B^{-1} P. Ad_{B^{-1}} is triangular in the order (21, 11, 12):
  //   x21 -> x21,  x11 -> x11 - c x21,  x12 -> x12 + 2c x11 - c^2 x21,
  // so each mode back-substitutes against the divisor e^{i pi <n,alpha>} - 1.
  const Mat2 bInv(1, -c, 0, 1);
  MatrixSeries y1(d, true);
  p.forEach([&](const MultiIndex& n, const Mat2& pv) {
    if (n.isZero()) return;
    Mat2 gv = (bInv * pv) * (-1.0);
    double ph = 0.5 * TWO_PI * dot(n, alpha);
    cplx e(std::cos(ph), std::sin(ph));
    cplx div = e - 1.0;
    if (std::abs(div) < 1e-13)
      throw Error("moserPoschelStep: divisor below floor at mode " + n.str());
    cplx g11 = 0.5 * (gv.a11 - gv.a22);
    cplx y21 = gv.a21 / div;
    cplx y11 = (g11 + e * c * y21) / div;
    cplx y12 = (gv.a12 - e * (2.0 * c * y11 - c * c * y21)) / div;
    y1.set(n, Mat2(y11, y12, y21, -y11));
  });
  y1 = y1.realPart();

  MatrixSeries yS = y1 * delta;
  out.yNorm = yS.norm(gHalf);
  out.zTilde = seriesExp(yS, gHalf, 1e-18);
  MatrixSeries idS = constMatSeries(d, true, Mat2::id());
  out.zTildeDist = (out.zTilde - idS).norm(gHalf);
  if (!(out.zTildeDist < 1.0))
    throw Error("moserPoschelStep: |zTilde - Id| = " + numStr(out.zTildeDist) +
                " fails the contraction bound");

  // P1 = delta^{-2} (zTilde(.+alpha)^{-1} (B - delta P) zTilde - e^{b0 - delta b1}).
  // Assembling it order by order with delta factored out of Y keeps the
  // measurement meaningful when delta^2 sits far below the roundoff of the
  // O(1) conjugation products:
  //   P1 = sum_{m+n>=2} (-1)^m delta^{m+n-2}/(m! n!) Y1s^m B Y1^n
  //      - sum_{m+n>=1} (-1)^m delta^{m+n-1}/(m! n!) Y1s^m P Y1^n
  //      - delta^{-2} sum_{k>=3} L^k/k!  -  b1^2/2,       L = b0 - delta b1,
  // using e^L = (B - delta [P]) + sum_{k>=3} L^k/k! + (delta^2/2) b1^2 and the
  // first-order cancellation built into Y.
  const Mat2 bMat(1, c, 0, 1);
  const int M = 12;
  std::vector<MatrixSeries> powL(M + 1, idS), powR(M + 1, idS);
  MatrixSeries y1s = y1.shifted(alpha).realPart();
  for (int m = 1; m <= M; ++m) powL[static_cast<size_t>(m)] = product(powL[static_cast<size_t>(m - 1)], y1s);
  for (int n = 1; n <= M; ++n) powR[static_cast<size_t>(n)] = product(powR[static_cast<size_t>(n - 1)], y1);

  std::vector<double> fact(M + 1, 1.0);
  for (int i = 1; i <= M; ++i) fact[static_cast<size_t>(i)] = fact[static_cast<size_t>(i - 1)] * i;
  std::vector<double> pLn(M + 1), pRn(M + 1);
  for (int i = 0; i <= M; ++i) {
    pLn[static_cast<size_t>(i)] = powL[static_cast<size_t>(i)].norm(gHalf);
    pRn[static_cast<size_t>(i)] = powR[static_cast<size_t>(i)].norm(gHalf);
  }
  const double pNormR = p.norm(gHalf);
  const double bNorm = bMat.norm();

  MatrixSeries acc(d, true);
  double tail = 0;
  const double skipTol = 1e-24;
  for (int m = 0; m <= M; ++m) {
    for (int n = 0; n + m <= M; ++n) {
      int K = m + n;
      double sgn = (m % 2 == 0) ? 1.0 : -1.0;
      double w = 1.0 / (fact[static_cast<size_t>(m)] * fact[static_cast<size_t>(n)]);
      if (K >= 2) {
        double coef = sgn * w * std::pow(delta, K - 2);
        double est = std::abs(coef) * pLn[static_cast<size_t>(m)] * bNorm * pRn[static_cast<size_t>(n)];
        if (est > skipTol)
          acc = acc + product(rightMulConst(powL[static_cast<size_t>(m)], bMat),
                              powR[static_cast<size_t>(n)]) * coef;
        else
          tail += est;
      }
      if (K >= 1) {
        double coef = -sgn * w * std::pow(delta, K - 1);
        double est = std::abs(coef) * pLn[static_cast<size_t>(m)] * pNormR * pRn[static_cast<size_t>(n)];
        if (est > skipTol)
          acc = acc + product(product(powL[static_cast<size_t>(m)], p),
                              powR[static_cast<size_t>(n)]) * coef;
        else
          tail += est;
      }
    }
  }
  // remainder beyond total order M, bounded by the exp tail
  {
    double q = 2.0 * delta * std::max(pLn[1], pRn[1]);
    double expTail = std::exp(q);
    double term = 1.0;
    for (int i = 0; i <= M; ++i) {
      expTail -= term;
      term *= q / double(i + 1);
    }
    expTail = std::max(0.0, expTail);
    tail += (bNorm / (delta * delta) + pNormR / delta) * expTail;
  }

  Mat2 lMat = out.b0 - out.b1 * delta;
  Mat2 lSum = Mat2::zero();
  Mat2 lTerm = lMat * lMat * lMat * (1.0 / 6.0);
  for (int k = 3; k <= 60 && lTerm.norm() > 1e-320; ++k) {
    lSum = lSum + lTerm;
    lTerm = lTerm * lMat * (1.0 / double(k + 1));
  }
  Mat2 constPart = lSum * (1.0 / (delta * delta)) + (out.b1 * out.b1) * 0.5;
  out.p1 = acc - constMatSeries(d, true, constPart);

  out.p1Norm = out.p1.norm(gHalf) + tail;
  out.p1Bound = 8.0 * (2.0 + out.dR) * (2.0 + out.dR) * std::pow(out.zNorm, 4.0) +
                c * c * out.zNorm * out.zNorm / delta;
  if (!(out.p1Norm <= out.p1Bound))
    throw Error("moserPoschelStep: |P1| = " + numStr(out.p1Norm) + " breaks its bound " +
                numStr(out.p1Bound));
  return out;
}

double chiFromWidths(double r0, double r) {
  if (!(r0 > r) || !(r > 0)) throw Error("chiFromWidths: need r0 > r > 0");
  double rTilde = 0.5 * (r0 + r);
  return (rTilde - r) / (6.0 * rTilde);
}

OpennessReport gapEdgeOpenness(const Freq& alpha, const MatrixSeries& z, double c, double r0,
                               double r, double nu, double gamma, double tau, double chiOverride,
                               double widthOverride) {
  OpennessReport rep;
  rep.c = c;
  // the inequality chain certifies openness only in the deep asymptotic
  // regime, so anything short of an exact zero is left to the chain
  if (std::abs(c) <= 1e-300) {
    rep.verdict = "collapsed";
    return rep;
  }
  if (c < 0) {
    rep.verdict = "inconclusive";
    rep.failing = "c_positive";
    return rep;
  }
  rep.chi = chiOverride > 0 ? chiOverride : chiFromWidths(r0, r);
  rep.R = widthOverride > 0 ? widthOverride : r;
  rep.delta1 = std::pow(c, 1.0 - rep.chi);

  auto push = [&](const std::string& name, double lhs, double rhs, bool pass) {
    rep.chain.push_back({name, lhs, rhs, pass});
    if (!pass && rep.failing.empty()) rep.failing = name;
  };

  push("kappa_range", rep.chi, 0.25, rep.chi > 0 && rep.chi < 0.25);
  double supE = supEntryGrid(z);
  double pre = std::pow(c, 0.5 * rep.chi) * supE;
  push("averaging_small", pre, 0.25, pre <= 0.25);

  double dR = supDR(rep.R, nu, gamma, tau);
  GevreyParams gR{nu, rep.R};
  double zN = z.norm(gR);
  double gate = 0.25 / (dR * zN * zN);
  push("lemma_gate", rep.delta1, gate, rep.delta1 < gate);
  if (!rep.failing.empty() && rep.failing == "lemma_gate") {
    rep.verdict = "inconclusive";
    return rep;
  }

  MoserPoschelData mp;
  try {
    mp = moserPoschelStep(alpha, z, c, rep.delta1, rep.R, nu, gamma, tau);
  } catch (const Error&) {
    push("averaging_step", 0, 0, false);
    rep.verdict = "inconclusive";
    if (rep.failing.empty()) rep.failing = "averaging_step";
    return rep;
  }

  double denom = mp.z11sq * mp.z12sq - mp.z11z12 * mp.z11z12;
  push("averages_denominator", 8.0 * std::pow(c, 2.0 * rep.chi), denom,
       denom >= 8.0 * std::pow(c, 2.0 * rep.chi));
  double ratio = denom > 0 ? mp.z11sq / denom : std::numeric_limits<double>::infinity();
  push("averages_ratio", ratio, 0.5 * std::pow(c, -rep.chi), ratio <= 0.5 * std::pow(c, -rep.chi));

  rep.dDelta1 = mp.dDelta;
  push("d_lower", 2.25 * c * c, mp.dDelta, mp.dDelta >= 2.25 * c * c);
  double bN = (mp.b0 - mp.b1 * rep.delta1).norm();
  double bCap = 1.5 * std::pow(c, 1.0 - rep.chi) * zN * zN;
  push("b_small", bN, bCap, bN <= bCap);

  double rhoErr = 32.0 * (2.0 + dR) * (2.0 + dR) * std::pow(c, 1.0 - 3.0 * rep.chi) *
                      std::pow(zN, 6.0) +
                  4.0 * std::pow(c, 2.0 - 2.0 * rep.chi) * zN * zN;
  push("rho_error_half", rhoErr, 0.5, rhoErr < 0.5);

  if (mp.dDelta > 0) {
    double sq = std::sqrt(mp.dDelta);
    double pSq = 4.0 * bN / sq;  // |conjugating matrix|^2 for e^{b0 - delta1 b1}
    double err = rep.delta1 * rep.delta1 * pSq * mp.p1Norm;
    rep.rhoLower = (sq - err) / TWO_PI;
    push("rho_positive", err, sq, sq > err);
  } else {
    push("rho_positive", 0, 0, false);
  }

  rep.verdict = rep.failing.empty() ? "open" : "inconclusive";
  return rep;
}

EdgeReduction reduceAtEdge(const SchrodingerProblem& prob, double E, const MultiIndex& k,
                           double rTarget, int maxSteps, const KamParams& kp) {
  SchrodingerCocycle sc = schrodingerCocycle(prob, E);
  KamState s0 = makeState(prob.alpha, sc.aE, sc.f, prob.p.r, prob.p.nu);

  EdgeReduction out;
  out.red = reduceRational(s0, rTarget, maxSteps, k, kp);
  out.negated = out.red.negated;

  // rotate the kernel axis of the near-nilpotent log onto the horizontal
  Mat2 v = rotation(out.red.thetaHat / TWO_PI);
  Mat2 nf = v.inv() * out.red.logA * v;
  out.c = nf.a12.real();
  out.nilpotentDefect = std::max({std::abs(nf.a11), std::abs(nf.a21), std::abs(nf.a22),
                                  std::abs(nf.a12.imag())});
  out.z = rightMulConst(productAll(out.red.bFactors), v).realPart();
  return out;
}

}  // namespace qpkam
