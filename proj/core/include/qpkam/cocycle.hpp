#pragma once

/*
 * Dynamics of quasi-periodic SL(2,R) cocycles (alpha, A) with
 *   A(theta) = F_1(theta) F_2(theta) ... F_m(theta),
 * kept in factored form (constant part, exponentials, rotors) so that
 * conjugated and composed cocycles can be iterated without multiplying
 * the factors into one long series.
 *
 * Orientation convention: rotations R_phi = (cos -sin; sin cos)(2 pi phi),
 * rotation numbers measured so that rho(alpha, R_phi) = phi; the degree of
 * the rotor Z_n(theta) = R_{<n,theta>/2} is n.
 */

#include <cstdint>
#include <vector>

#include "qpkam/fourier.hpp"

namespace qpkam {

struct CocycleMap {
  Freq alpha;
  std::vector<MatrixSeries> factors;

  CocycleMap() = default;
  CocycleMap(const Freq& al, MatrixSeries f) : alpha(al) { factors.push_back(std::move(f)); }
  CocycleMap(const Freq& al, std::vector<MatrixSeries> fs) : alpha(al), factors(std::move(fs)) {}

  int dim() const { return factors.empty() ? (int)alpha.size() : factors[0].dim(); }
  // A(theta), with the imaginary dust of the complex arithmetic removed.
  Mat2 evaluate(const Freq& theta) const;
};

// Streams A(theta0 + n alpha) for n = 0, 1, 2, ... at O(total support) per
// step, using one rotor per Fourier mode with periodic phase refresh.
class FactorOrbit {
 public:
  FactorOrbit(const CocycleMap& map, const Freq& theta0);
  Mat2 next();
  int64_t step() const { return n_; }

 private:
  struct Mode {
    Mat2 coef;
    cplx phase, rotor;
    double w, kTheta0, kAlpha;  // for refresh: phase = e^{i w (kTheta0 + n kAlpha)}
  };
  void refresh();
  std::vector<std::vector<Mode>> factors_;
  int64_t n_ = 0;
  static constexpr int64_t kRefreshEvery = 1024;
};

// n-step product A(theta + (n-1) alpha) ... A(theta).
Mat2 cocycleProduct(const CocycleMap& map, const Freq& theta0, int64_t n);

struct RotationResult {
  double rho = 0;       // in [0, 1)
  double errEstimate = 0;
};

// Fibered rotation number by a weighted Birkhoff average of projective angle
// increments, branch-tracked for continuity. Superconvergent on reducible
// cocycles; the error estimate stays the conservative O(1/n) bound.
RotationResult rotationNumber(const CocycleMap& map, const Freq& theta0, int64_t n);

struct LyapunovResult {
  double value = 0;
  double stderrValue = 0;
};

// Top Lyapunov exponent by the doubling slope (ln||A_n|| - ln||A_{n/2}||) /
// (n/2), averaged over nTheta random phases.
LyapunovResult lyapunovExponent(const CocycleMap& map, int64_t n, int nTheta, uint64_t seed,
                                int threads = 1);

// Topological degree of B: winding of the first column along each coordinate
// loop (period 2 on the half lattice). Throws if the winding integral stays
// far from an integer after refinement.
MultiIndex degree(const MatrixSeries& b, int gridMin = 256);

enum class UhVerdict { UH, NotUH, Undecided };

struct UhResult {
  UhVerdict verdict = UhVerdict::Undecided;
  double minGrowth = 0;   // min over the phase grid of ln||A_window(theta)|| / window
  double maxGrowth = 0;
  double coneAngle = 0;   // worst over the grid of the closest pair among three tracked directions
  int window = 0;
};

// Finite-window uniform hyperbolicity probe: exponential growth at every
// grid phase plus merging of tracked directions certifies UH at this window;
// growth nowhere above the threshold reports NotUH; otherwise Undecided.
UhResult uniformHyperbolicity(const CocycleMap& map, int window = 200, int grid = 64,
                              double growthThresh = 0.005, double coneTol = 0.1, int threads = 1);

struct DcResult {
  bool ok = false;
  double margin = 0;      // min over the ball of |<n,alpha>|_T |n|_1^tau / gamma
  MultiIndex worst;
};

// Checks |<n, alpha>|_T >= gamma |n|_1^{-tau} for all 0 < |n|_1 <= N.
DcResult dcAlphaCheck(const Freq& alpha, double gamma, double tau, int64_t N);

}  // namespace qpkam
