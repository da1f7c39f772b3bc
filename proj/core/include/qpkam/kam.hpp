#pragma once

/*
 * Quantitative almost-reducibility for quasi-periodic SL(2,R) cocycles
 * A e^{f(theta)} close to a constant, in the sub-exponential (Gevrey-type)
 * regime 0 < nu < 1.
 *
 * One step: truncate in spirit at N (the truncation order only enters the
 * resonance threshold and the a priori bounds; the series are carried in
 * full), decide between
 *   - the nonresonant branch: remove all Fourier modes whose small divisors
 *     clear eta by a Newton iteration on the conjugation generator Y,
 *     absorb the remaining constant into A;
 *   - the resonant branch (elliptic A with 2 xi ~ <n_*, alpha>): rotate A to
 *     R_xi, eliminate with diagonal su(1,1) divisors keeping the three
 *     resonant coordinates, then twist by the rotor Z_{n_*} so the kept
 *     off-diagonal mode becomes constant; the new constant is
 *     R_{xi - <n_*,alpha>/2} e^{p} with a much smaller angle.
 * All compositions of small exponentials go through truncated BCH in the
 * Lie algebra; entrywise exp/log of near-identity matrices would floor
 * every measured norm at the 1e-16 cancellation level.
 */

#include <optional>
#include <string>

#include "qpkam/cocycle.hpp"

namespace qpkam {

struct KamParams {
  double nu = 0.5;
  double gamma = 0.1;   // Diophantine constants of alpha on the scan ball
  double tau = 1.5;
  double sigma = 0.05;  // resonance threshold exponent eps^sigma
  // Smallness gate eps <= gateC ||A||^{-4} (r - r')^{4 nu tau}; experiments
  // may relax gateC, the active value is recorded in the trace.
  double gateC = 1e-4;
  bool enforceGate = true;
  bool assertContracts = true;  // throw when a step violates its bounds
  int bchOrder = 4;
  int64_t scanCap = int64_t(1) << 31;  // resonance scan radius cap
  int maxNewton = 25;
  double newtonTol = 1e-3;   // stop at |P_Phi g| <= newtonTol * eps^2
  double underflowEps = 1e-140;
  int threads = 1;
};

struct KamState {
  Freq alpha;
  Mat2 a;          // constant part
  MatrixSeries f;  // perturbation on the half lattice, real, traceless
  double r = 0;    // current width
  double eps = 0;  // measured |f|_r
};

// min(eps^sigma, gamma (4N)^{-tau} / 4); the second term guarantees that at
// most one resonant site exists in |n|_1 <= 2N by Diophantine spacing.
double resonanceThreshold(double eps, int64_t nTrunc, const KamParams& kp);

// Truncation order (1/2pi) (2 |ln eps| / (r - rNext))^{1/nu}.
int64_t truncationOrder(double eps, double r, double rNext, double nu);

struct ResonanceInfo {
  bool resonant = false;
  MultiIndex site;        // full-lattice n_*
  double dist = 1e300;    // |2 xi - <n_*, alpha>|_T
  double threshold = 0;
  int64_t ballRadius = 0;  // scan radius actually used
};

// Minimizer of |2 xi - <n, alpha>|_T over 0 < |n|_1 <= min(nBall, scanCap);
// resonant iff the minimum is below the threshold.
ResonanceInfo findResonance(double xi, const Freq& alpha, int64_t nBall, double threshold,
                            int64_t scanCap = int64_t(1) << 31);

// Small divisors of the linearized conjugation equation at constant A:
// |e^{i pi <k,alpha>} lambda - 1| over the eigenvalues lambda = 1, mu^2,
// mu^{-2} of Ad_{A^{-1}} (mu an eigenvalue of A); k on the half lattice.
double minDivisorSymmetric(const Mat2& a, const MultiIndex& k, const Freq& alpha);

struct EliminationOutcome {
  MatrixSeries y;    // conjugation generator, real sl(2,R) series
  MatrixSeries g;    // log of the conjugated perturbation after the Newton loop
  MatrixSeries fre;  // part of g on the non-eliminated modes
  double etaTheory = 0;
  double eta = 0;       // effective gate actually used
  double etaTilde = 0;  // eta^3 / (eta^2 + 3||A||^2 eta + 2||A||^4)
  int newtonIters = 0;
  double residual = 0;     // |P_Phi g|_r at exit
  double droppedMass = 0;  // total weighted mass pruned during the iteration
};

// Symmetric regime: every mode clearing the gate is eliminated through the
// full 3x3 mode operator (I - e_k Ad_{A^{-1}}).
EliminationOutcome eliminateSymmetric(const Mat2& a, const MatrixSeries& f, double r,
                                      const Freq& alpha, const KamParams& kp, double eps);

// Rotated regime at A = R_xi: scalar su(1,1) divisors e^{i pi <k,alpha>}
// lambda_c - 1, lambda in {1, e^{+-i 4 pi xi}}; the coordinates
// (t at 0, upper at -2 n_*, lower at +2 n_*) are kept for the resonant twist.
// Pass a zero site to keep only the mean of the diagonal coordinate.
EliminationOutcome eliminateRotated(double xi, const MatrixSeries& fTilde, double r,
                                    const Freq& alpha, const KamParams& kp, double epsTilde,
                                    const MultiIndex& site);

struct BoundCheck {
  std::string name;
  double lhs = 0, rhs = 0;
  bool pass = false;
};

struct KamStepRecord {
  int j = 0;
  double r = 0, rNext = 0;
  double eps = 0;
  int64_t nTrunc = 0;
  double threshold = 0;
  bool elliptic = false;
  double xi = 0;  // signed elliptic angle of A_j (0 when not elliptic)
  bool resonant = false;
  MultiIndex site;
  double resonanceDist = 0;
  double etaTheory = 0, eta = 0, etaTilde = 0;
  int newtonIters = 0;
  double newtonResidual = 0, droppedMass = 0;
  double yNorm = 0, bNorm = 0;
  double aNorm = 0, aNormNext = 0;
  double epsNext = 0;
  MultiIndex degStep;
  int factorCount = 0;  // conjugator factors contributed by this step
  double gateLhs = 0, gateRhs = 0;
  bool gatePass = true;
  std::vector<BoundCheck> checks;
};

struct KamStepOutcome {
  KamState next;
  std::vector<MatrixSeries> bFactors;  // conjugator of this step, left-to-right product
  KamStepRecord rec;
};

// One almost-reducibility step from width r to rNext.
KamStepOutcome kamStep(const KamState& s, double rNext, const KamParams& kp, int j = 0);

struct KamResult {
  KamState final;
  std::vector<MatrixSeries> bFactors;  // full conjugator, left-to-right product
  MultiIndex degTotal;
  std::vector<KamStepRecord> steps;
  bool almostReduced = false;  // perturbation vanished to working precision
  std::string stopReason;
};

// Iterate kamStep along the strong width schedule
//   rTilde = (r0 + rTarget)/2,  r_{j+1} = r_j - (r0 - rTilde) 4^{-(j+1)},
// whose limit stays above rTarget. Stops at maxSteps, at underflow of eps,
// or on a gate failure (reported in stopReason when not thrown).
KamResult almostReduce(const KamState& s0, double rTarget, int maxSteps, const KamParams& kp);

// Reduction at a gap edge (2 rho = <k, alpha> mod 1): almost-reduce, align
// the conjugator degree to k with an exact rotor twist, and express the
// final constant as a near-parabolic normal form R_thetaHat-conjugate of
// (0 phi; 0 0) plus the angle data.
struct RationalReduction {
  KamResult kam;
  std::vector<MatrixSeries> bFactors;  // degree-aligned conjugator
  MultiIndex degB;
  Mat2 aFinal;          // constant after the degree alignment
  MatrixSeries fFinal;  // perturbation in the aligned frame
  bool negated = false; // true when the normal form sits at -Id (trace < 0)
  Mat2 logA;            // principal log of (+-)aFinal, near-nilpotent at a true edge
  double phi = 0;       // invariant off-diagonal datum a12 - a21 of logA
  double thetaHat = 0;  // kernel direction of the near-nilpotent part
  double residual = 0;  // grid check of the full conjugation identity
};
RationalReduction reduceRational(const KamState& s0, double rTarget, int maxSteps,
                                 const MultiIndex& k, const KamParams& kp);

// Full reducibility for Diophantine rotation number: after the last resonant
// step j0 the scheme must stay nonresonant and the tail conjugator stays
// within 4 eps_{j0}^{1/2} of the identity.
struct DiophantineReduction {
  KamResult kam;
  int j0 = 0;                  // first step of the purely nonresonant tail
  double tailEps = 0;          // eps_{j0}
  double zbarDist = 0;         // |Z_tail - Id|_{r_final}
  bool reducible = false;
  std::vector<BoundCheck> gateChecks;  // kappa_j gates per step
};
// kappa, kappaTau: Diophantine data of the rotation number; the per-step
// gate eps_j <= gateC kappa_j^{40 nu} ||A||^{-4} (r_j - r_{j+1})^{4 nu tau}
// with kappa_j = kappa (1 + |deg B_j|)^{-kappaTau} is recorded (and enforced
// when KamParams.enforceGate is set).
DiophantineReduction reduceDiophantine(const KamState& s0, double rTarget, int maxSteps,
                                       double kappa, double kappaTau, const KamParams& kp);

// Measured |f|_r plus the input state invariants (realness, tracelessness).
// Full-lattice input is moved to the half lattice.
KamState makeState(const Freq& alpha, const Mat2& a, const MatrixSeries& f, double r,
                   double nu);

// Pointwise value of a left-to-right factored conjugator.
Mat2 evalFactors(const std::vector<MatrixSeries>& factors, const Freq& theta);

// Single-series form of the same product.
MatrixSeries productAll(const std::vector<MatrixSeries>& factors, int64_t capN = -1);

// Worst value over a low-discrepancy sample of
// |B(theta+alpha)^{-1} A e^{f(theta)} B(theta) - A' e^{f'(theta)}|.
double conjugationResidual(const Freq& alpha, const Mat2& a, const MatrixSeries& f,
                           const std::vector<MatrixSeries>& bFactors, const Mat2& aNext,
                           const MatrixSeries& fNext, int samples = 64);

}  // namespace qpkam
