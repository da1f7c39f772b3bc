#pragma once

/*
 * Long-range lattice operators dual to quasi-periodic Schrodinger cocycles,
 * and the eigenfunctions a full reduction of the cocycle hands to them.
 *
 * The operator acts on finitely supported u : Z^d -> C by
 *
 *   (L u)(n) = sum_k w_k u(n - k) + 2 lambda cos 2 pi (phi + <n, alpha>) u(n)
 *
 * with a finitely supported real symbol w. When the transfer cocycle of the
 * Schrodinger operator with potential lambda^{-1} w at energy E conjugates to
 * the constant rotation of angle xi, the (1,1) entry of the triangularized
 * conjugacy, shifted by the degree bookkeeping m', has Fourier coefficients
 * solving L u = lambda E u with a sub-exponential tail e^{-r (2 pi |n-m'|)^nu}.
 */

#include <string>
#include <vector>

#include "qpkam/kam.hpp"
#include "qpkam/spectral.hpp"

namespace qpkam {

struct LongRangeOperator {
  ScalarSeries w;      // hopping symbol, full-lattice modes, real function
  double lambda = 0;   // coupling of the cosine diagonal
  Freq alpha;
  double phi = 0;      // diagonal phase, folded into [0, 1)
};

// Validates that w is a real function on the full lattice of matching
// dimension; folds phi.
LongRangeOperator makeLongRange(const ScalarSeries& w, double lambda, const Freq& alpha,
                                double phi);

// The operator the Schrodinger problem with potential lambda^{-1} w is dual
// to: symbol w = lambda * prob.v, same frequency, diagonal coupling lambda.
LongRangeOperator dualOperator(const SchrodingerProblem& prob, double lambda, double phi);

// Finitely supported vector on Z^d. Entries live on the full-lattice modes of
// a scalar series; sites outside |n|_1 <= window are identically zero.
struct LatticeVector {
  ScalarSeries c;
  int64_t window = 0;

  LatticeVector() : c(1, false) {}
  LatticeVector(int d, int64_t win) : c(d, false), window(win) {}
};

// Wraps coefficients after checking they fit inside the window.
LatticeVector makeLatticeVector(const ScalarSeries& c, int64_t window);

double l2Norm(const LatticeVector& u);
// Conjugate-linear in x.
cplx latticeDot(const LatticeVector& x, const LatticeVector& y);
// (shift_s u)(n) = u(n - s).
LatticeVector shiftedVector(const LatticeVector& u, const MultiIndex& s);

// L u. The window grows by the symbol radius; exceeding the representable
// index range is an error.
LatticeVector longRangeApply(const LongRangeOperator& op, const LatticeVector& u);

// ||L u - mu u||_2, accumulated over the union of supports.
double eigenResidual(const LongRangeOperator& op, const LatticeVector& u, cplx mu);

/*
 * Eigenfunction from a reduction of the dual cocycle.
 *
 * Input: the Schrodinger problem (potential lambda^{-1} w), the energy E it
 * was reduced at, the site label m, and the finished Diophantine reduction.
 * The reduced constant must be elliptic with angle xi; the conjugacy is
 * triangularized by a constant SL(2,C) unitary, and the phase the
 * eigenfunction belongs to is read back from the bookkeeping:
 *
 *   m' = m - deg(B)/2,   phi = xi - <m', alpha>  (mod 1),
 *
 * so that L_{phi} u = lambda E u holds for u(n) = z(n) / ||z||,
 * z(n) = b11(n - m'). deg(B) must be even in every coordinate, otherwise the
 * shift m' leaves the lattice and the construction fails.
 *
 * The window W is cut where the certified envelope
 * |B|_r e^{-r (2 pi (W - |m'|))^nu} / ||z|| drops below tailTol; both the
 * window and the envelope value at the cut are recorded.
 */
struct DualityReport {
  LatticeVector u;       // normalized eigenfunction
  LongRangeOperator op;  // the dual operator u belongs to
  double energy = 0;     // Schrodinger energy E
  cplx eigenvalue{0};    // lambda E
  double phi = 0;        // derived phase
  double xi = 0;         // signed rotation angle of the reduced constant
  MultiIndex mPrime;     // localization center, m - deg(B)/2
  int64_t window = 0;    // support box radius of u, |n|_1 <= window
  double tailCut = 0;    // envelope value just outside the window
  double rFinal = 0;     // Gevrey width the envelope is certified at
  double residual = 0;   // ||L u - lambda E u||_2
  double bGevrey = 0;    // |B_m|_{rFinal}
  double bSup = 0;       // sup_theta ||B_m(theta)|| over a grid
  double zNorm = 0;      // ||z||_2 before normalization
  double zNormFloor = 0; // guaranteed lower bound (2 sup ||B_m||)^{-1}
  bool secondColumn = false;  // fell back to the second column of B_m
};

DualityReport dualEigenfunction(const SchrodingerProblem& prob, double lambda, double E,
                                const MultiIndex& m, const DiophantineReduction& red,
                                double tailTol = 1e-14);

// Decay predicate: |u(n)| <= e^{-C eps |n|^nu} for every window site with
// |n|_1 >= (1 - eps) N, checked exhaustively. Sites beyond the window are
// zero and pass vacuously.
struct GoodnessReport {
  bool pass = false;
  double c = 0;
  double epsilon = 0;
  double nCut = 0;        // (1 - eps) N
  double worstRatio = 0;  // max |u(n)| / bound over tested sites
  MultiIndex worstSite;
  int64_t tested = 0;
};

GoodnessReport goodEigenfunctionTest(const LatticeVector& u, double nu, double N, double C,
                                     double eps);

}  // namespace qpkam
