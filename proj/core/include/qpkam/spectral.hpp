#pragma once

/*
 * Discrete Schrodinger operators (H u)_n = u_{n+1} + u_{n-1} + v(theta + n alpha) u_n
 * seen through their transfer cocycles: rotation number / integrated density
 * of states, labelled spectral gaps with gap-labelling evidence, the
 * gap-length decay predicate, and the one-step averaging analysis at a gap
 * edge (parabolic normal form B = (1 c; 0 1), perturbation B - delta P).
 */

#include <string>
#include <vector>

#include "qpkam/cocycle.hpp"
#include "qpkam/kam.hpp"

namespace qpkam {

struct SchrodingerProblem {
  Freq alpha;
  ScalarSeries v;   // real-valued potential, full-lattice modes
  GevreyParams p;   // ambient width r0 and exponent nu
  double eps0 = 0;  // |v|_{r0}
};

// Validates realness and records eps0.
SchrodingerProblem makeProblem(const Freq& alpha, const ScalarSeries& v, const GevreyParams& p);
// v = 2 lambda cos(2 pi theta_1) on the d-torus.
SchrodingerProblem cosineProblem(const Freq& alpha, double lambda, const GevreyParams& p, int d = 1);

// Transfer matrix S_E(theta) = (E - v, -1; 1, 0) = A_E e^{f} with the exact
// nilpotent logarithm f = (0 0; v 0).
struct SchrodingerCocycle {
  Mat2 aE;
  MatrixSeries f;  // half-lattice
  CocycleMap map;  // factored [A_E] [e^f]
};
SchrodingerCocycle schrodingerCocycle(const SchrodingerProblem& prob, double E);

// Fibered rotation number rho(E) in [0, 1/2]; nonincreasing in E.
double rotationAt(const SchrodingerProblem& prob, double E, int64_t iters = 200000);
// Integrated density of states N(E) = 1 - 2 rho(E).
double ids(const SchrodingerProblem& prob, double E, int64_t iters = 200000);

// Bisection solve of rotationAt(E) = target on [eLo, eHi]; the rotation
// number is nonincreasing in E. Throws when the bracket misses the target.
double energyAtRotation(const SchrodingerProblem& prob, double target, double eLo, double eHi,
                        double eTol = 1e-11, int64_t rhoIters = 200000);

struct GapRecord {
  MultiIndex k;
  double eMinus = 0, ePlus = 0;
  double length = 0;
  double rho = 0;            // plateau value of the rotation number
  double labelResidual = 0;  // |2 rho - <k, alpha>|_T at the plateau
  bool resolved = false;     // edges certified by the hyperbolicity probe
};

struct GapScanControls {
  double eLo = -3.0, eHi = 3.0;
  int kMax = 4;
  double labelTol = 1e-5;
  double edgeTol = 1e-8;
  int64_t rhoIters = 200000;
  int uhGrid = 64;
  int threads = 1;
};

// Locates the rotation-number plateau of every label 0 < |k|_1 <= kMax inside
// [eLo, eHi], then pushes the edges outward by bisection on the uniform
// hyperbolicity verdict (probe window ramped 200 -> 1e5 as gaps narrow).
// Labels whose plateau is thinner than the probe can certify come back with
// length 0 and resolved = false.
std::vector<GapRecord> findGaps(const SchrodingerProblem& prob, const GapScanControls& ctl);

struct DecayCheck {
  MultiIndex k;
  double measured = 0;  // gap length
  double bound = 0;     // eps0^{1/2} e^{-r (2 pi |k|)^nu}
  bool pass = false;
};
std::vector<DecayCheck> verifyGapDecay(const std::vector<GapRecord>& gaps, double eps0,
                                       const GevreyParams& p);

// Uniform hyperbolicity probe with the same ramped window schedule the gap
// scan uses; true means certified, i.e. E lies outside the spectrum.
bool certifiedHyperbolic(const SchrodingerProblem& prob, double E, int grid = 64);

// Eigenvalues of the size x size Dirichlet truncation, sorted ascending.
// Cross-check oracle only; size capped at 4096.
std::vector<double> finiteSectionSpectrum(const SchrodingerProblem& prob, const Freq& theta,
                                          int size);

// sup_n 4 gamma^{-3} |n|^{3 tau} e^{-(R/2)(2 pi |n|)^nu} over n in Z^d.
double supDR(double R, double nu, double gamma, double tau);

// d(delta) = -delta [z11^2] c + delta^2 ([z11^2][z12^2] - [z11 z12]^2)
//            - (delta^2/4) c^2 [z11^2]^2
double dDeltaClosedForm(double delta, double c, double z11sq, double z11z12, double z12sq);

struct MoserPoschelData {
  Mat2 b0, b1;
  double z11sq = 0, z11z12 = 0, z12sq = 0;  // averages of the first-row entries of Z
  double dR = 0;                            // D_R
  double gateRhs = 0;                       // 4^{-1} D_R^{-1} |Z|_R^{-2}
  double zNorm = 0;                         // |Z|_R
  double pNorm = 0;                         // |P|_R
  MatrixSeries zTilde;                      // e^Y at width R/2
  double yNorm = 0;                         // |Y|_{R/2}
  double zTildeDist = 0;                    // |zTilde - Id|_{R/2}, < 1 asserted
  MatrixSeries p1;                          // residual series of the conjugation
  double p1Norm = 0;                        // measured |P1|_{R/2}
  double p1Bound = 0;                       // 8 (2+D_R)^2 |Z|_R^4 + delta^{-1} c^2 |Z|_R^2
  double dDelta = 0;                        // d(delta)
};

// One averaging step at the parabolic normal form: conjugates
// (alpha, B - delta P), P = Z(.+alpha)^{-1} E11 Z(.), to
// (alpha, e^{b0 - delta b1} + delta^2 P1) by zTilde = e^Y, where Y solves
// B^{-1} Y(.+alpha) B - Y = G - [G], G = -delta B^{-1} P, mode by mode
// (triangular 3x3 systems, divisors (e^{i pi <n,alpha>} - 1)).
// Throws when delta violates the gate or a divisor falls below 1e-13.
MoserPoschelData moserPoschelStep(const Freq& alpha, const MatrixSeries& z, double c, double delta,
                                  double R, double nu, double gamma, double tau);

struct OpennessReport {
  std::string verdict;  // "open" | "collapsed" | "inconclusive"
  std::string failing;  // first failed link of the chain when inconclusive
  double c = 0, chi = 0, delta1 = 0, R = 0;
  double dDelta1 = 0;
  double rhoLower = 0;  // certified lower bound on the rotation-number motion
  std::vector<BoundCheck> chain;
};

// chi = (rTilde - r) / (6 rTilde) with rTilde = (r0 + r)/2.
double chiFromWidths(double r0, double r);

// Certifies |G_k| <= delta_1 = c^{1-chi} at a gap edge whose reduction
// produced the conjugacy z and off-diagonal c > 0: evaluates the averaging
// step at delta_1 and the inequality chain
//   [z11^2][z12^2] - [z11 z12]^2 >= 8 c^{2 chi},
//   [z11^2] / (that) <= (1/2) c^{-chi},
//   d(delta_1) >= (9/4) c^2,  |b0 - delta_1 b1| <= (3/2) c^{1-chi} |Z|_R^2,
//   32 (2+D_R)^2 c^{1-3chi} |Z|_R^6 + 4 c^{2-2chi} |Z|_R^2 < 1/2,
// concluding rho(alpha, e^{b0-delta_1 b1} + delta_1^2 P1) > 0, i.e. the gap
// is shorter than delta_1. chi defaults to chiFromWidths(r0, r); the
// averaging width defaults to the largest admissible value R = r (the
// narrow-width bookkeeping choice makes D_R overflow doubles at any
// reachable c, so it is exposed as an override instead).
OpennessReport gapEdgeOpenness(const Freq& alpha, const MatrixSeries& z, double c, double r0,
                               double r, double nu, double gamma, double tau, double chiOverride = 0,
                               double widthOverride = 0);

struct EdgeReduction {
  RationalReduction red;
  MatrixSeries z;              // full conjugacy including the axis alignment
  double c = 0;                // signed off-diagonal of the parabolic form
  double nilpotentDefect = 0;  // size of the normal form off the (1 c; 0 1) shape
  bool negated = false;        // constant part folded from -B
};

// Runs the rational endgame at energy E with target degree k and rotates the
// final parabolic constant onto (1 c; 0 1).
EdgeReduction reduceAtEdge(const SchrodingerProblem& prob, double E, const MultiIndex& k,
                           double rTarget, int maxSteps, const KamParams& kp);

}  // namespace qpkam
