#pragma once

/*
 * Finite unions of closed intervals and the set algebra applied to spectra:
 * canonical form, bounded gaps, bridges, thickness, largest gap, Minkowski
 * sums, the sufficient condition for a sum of Cantor sets to be an interval,
 * and the pipeline that certifies an interval sum of Schrodinger spectra.
 */

#include <cstddef>
#include <string>
#include <vector>

#include "qpkam/spectral.hpp"

namespace qpkam {

struct Interval {
  double a = 0, b = 0;
  double len() const { return b - a; }
};

// Sorted disjoint closed intervals a_i <= b_i < a_{i+1}; degenerate points
// a_i == b_i are allowed.
struct IntervalUnion {
  std::vector<Interval> parts;
  int size() const { return static_cast<int>(parts.size()); }
  double lo() const { return parts.front().a; }
  double hi() const { return parts.back().b; }
  double diam() const { return hi() - lo(); }
  bool isInterval() const { return parts.size() == 1; }
};

// Sorts, merges overlapping or touching intervals. Throws on an empty list
// or an interval with b < a.
IntervalUnion canonicalize(std::vector<Interval> raw);

// x -> s*x + t applied to the set; s < 0 reverses the order, s == 0 throws.
IntervalUnion affineImage(const IntervalUnion& k, double s, double t);

// The n-1 open intervals between consecutive components.
std::vector<Interval> boundedGaps(const IntervalUnion& k);

// Largest bounded gap length, 0 when the set is a single interval.
double largestGap(const IntervalUnion& k);

// The bridge at a boundary point u of a bounded gap U: the maximal interval
// with u on its boundary, reaching away from U until the first gap at least
// as long as U blocks it (or the extreme of the set). Throws when u is not
// a bounded-gap endpoint.
Interval bridgeAt(const IntervalUnion& k, double u);

struct ThicknessReport {
  bool infinite = false;  // single component, including a lone point
  double tau = 0;         // meaningful when finite
  double u = 0;           // witness endpoint achieving the infimum
  Interval bridge, gap;   // the witness pair, tau = bridge.len()/gap.len()
};

// Infimum of bridge-length / gap-length over all bounded-gap endpoints.
// A degenerate component flanked by gaps yields 0 through the infimum.
ThicknessReport thickness(const IntervalUnion& k);

struct SumIntervalCheck {
  bool pass = false;
  std::string violated;            // first failed inequality when !pass
  std::vector<BoundCheck> checks;  // every inequality with its numbers
  double thicknessSum = 0;         // sum of tau_i/(tau_i + 1), inf terms count 1
};

// Sufficient condition for the Minkowski sum of m >= 2 compact sets to be an
// interval: largestGap(K_j) <= diam(K_i) for j < i, largestGap(K_i) <=
// diam(K_1) + ... + diam(K_{i-1}), and sum tau_i/(tau_i+1) >= 1.
SumIntervalCheck sumIntervalCheck(const std::vector<IntervalUnion>& ks);

// Merges away bounded gaps shorter than eps.
IntervalUnion coarsen(const IntervalUnion& k, double eps);

// Minkowski sum via pairwise interval sums. Throws when an intermediate
// product would exceed cap components (coarsen the inputs first).
IntervalUnion sumset(const IntervalUnion& x, const IntervalUnion& y, std::size_t cap = 1000000);
IntervalUnion sumset(const std::vector<IntervalUnion>& ks, std::size_t cap = 1000000);

struct SpectrumApproximation {
  IntervalUnion sigma;  // [eMin, eMax] minus the resolved gaps
  double eMin = 0, eMax = 0;
  std::vector<GapRecord> gaps;
  double eps0 = 0;
  ThicknessReport thick;
  double gapSup = 0;              // largestGap(sigma)
  double diameter = 0;            // diam(sigma)
  double holderC0 = 0;            // measured 1/2-Holder modulus of the IDS
  std::vector<double> tauFloors;  // per-gap lower-bound diagnostic, gaps order
};

struct IntervalPipelineControls {
  GapScanControls scan;
  double gamma = 0.2764, tau = 1.01;  // frequency arithmetic, diagnostics only
  int idsSamples = 33;                // modulus-of-continuity sampling density
};

// Band edges by bisection on the hyperbolicity probe, gap scan, thickness
// and gap statistics, plus the per-gap thickness floor
//   gamma^2 / (C0^2 eps0^{1/2}) * 1 / (e^{-r (2 pi |k|)^nu} |k|^{2 tau})
// with the measured IDS modulus standing in for the unknown constant C0.
SpectrumApproximation approximateSpectrum(const SchrodingerProblem& prob,
                                          const IntervalPipelineControls& ctl);

struct IntervalPipelineReport {
  std::vector<SpectrumApproximation> spectra;
  SumIntervalCheck condition;
  IntervalUnion sum;  // populated when the condition passes
  bool sumComputed = false;
  bool sumIsInterval = false;
  bool pass = false;  // condition passed and the sum came out one interval
  std::string note;   // records the measured-modulus substitution
};

// Combines precomputed spectrum approximations: runs the interval-sum
// condition and, when it passes, the sumset (a non-interval sum at that
// point signals a defect in the approximations, reported with pass = false).
IntervalPipelineReport combineSpectra(const std::vector<SpectrumApproximation>& spectra);

// approximateSpectrum on each problem, then combineSpectra.
IntervalPipelineReport intervalSpectrumPipeline(const std::vector<SchrodingerProblem>& problems,
                                                const IntervalPipelineControls& ctl);

}  // namespace qpkam
