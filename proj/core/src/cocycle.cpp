#include "qpkam/cocycle.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace qpkam {

Mat2 CocycleMap::evaluate(const Freq& theta) const {
  if (factors.empty()) throw Error("CocycleMap: no factors");
  Mat2 p = factors[0].evaluate(theta);
  for (size_t i = 1; i < factors.size(); ++i) p = p * factors[i].evaluate(theta);
  // discard the O(eps_machine) imaginary dust of a real-valued product
  return {p.a11.real(), p.a12.real(), p.a21.real(), p.a22.real()};
}

FactorOrbit::FactorOrbit(const CocycleMap& map, const Freq& theta0) {
  if (map.factors.empty()) throw Error("FactorOrbit: no factors");
  int d = map.dim();
  if ((int)map.alpha.size() != d || (int)theta0.size() != d)
    throw Error("FactorOrbit: dimension mismatch");
  factors_.reserve(map.factors.size());
  for (const auto& f : map.factors) {
    std::vector<Mode> modes;
    double w = f.w();
    f.forEach([&](const MultiIndex& k, const Mat2& v) {
      Mode m;
      m.coef = v;
      m.w = w;
      m.kTheta0 = 0;
      m.kAlpha = 0;
      for (int i = 0; i < d; ++i) {
        m.kTheta0 += k[i] * theta0[(size_t)i];
        m.kAlpha += k[i] * map.alpha[(size_t)i];
      }
      // keep the per-step angles small so refresh stays exact in double
      double period = TWO_PI / w;
      m.kTheta0 = std::fmod(m.kTheta0, period);
      m.kAlpha = std::fmod(m.kAlpha, period);
      m.phase = cplx(std::cos(w * m.kTheta0), std::sin(w * m.kTheta0));
      m.rotor = cplx(std::cos(w * m.kAlpha), std::sin(w * m.kAlpha));
      modes.push_back(m);
    });
    factors_.push_back(std::move(modes));
  }
}

void FactorOrbit::refresh() {
  for (auto& modes : factors_)
    for (auto& m : modes) {
      double period = TWO_PI / m.w;
      double x = std::fmod(m.kTheta0 + std::fmod((double)n_ * m.kAlpha, period), period);
      m.phase = cplx(std::cos(m.w * x), std::sin(m.w * x));
    }
}

Mat2 FactorOrbit::next() {
  if (n_ > 0 && n_ % kRefreshEvery == 0) refresh();
  Mat2 p = Mat2::id();
  bool first = true;
  for (auto& modes : factors_) {
    Mat2 f = Mat2::zero();
    for (auto& m : modes) f = f + m.coef * m.phase;
    p = first ? f : p * f;
    first = false;
  }
  for (auto& modes : factors_)
    for (auto& m : modes) m.phase *= m.rotor;
  ++n_;
  return {p.a11.real(), p.a12.real(), p.a21.real(), p.a22.real()};
}

Mat2 cocycleProduct(const CocycleMap& map, const Freq& theta0, int64_t n) {
  FactorOrbit orbit(map, theta0);
  Mat2 p = Mat2::id();
  for (int64_t i = 0; i < n; ++i) p = orbit.next() * p;
  return p;
}

// Das-Yorke bump, vanishing to all orders at t = 0, 1.
static double bumpWeight(double t) {
  if (t <= 0 || t >= 1) return 0;
  return std::exp(-1.0 / (t * (1.0 - t)));
}

RotationResult rotationNumber(const CocycleMap& map, const Freq& theta0, int64_t n) {
  if (n < 16) throw Error("rotationNumber: need at least 16 iterates");
  FactorOrbit orbit(map, theta0);
  double vx = 1.0, vy = 0.0;
  double prevDelta = 0.0;
  double acc = 0.0, accC = 0.0, wsum = 0.0;
  for (int64_t k = 0; k < n; ++k) {
    Mat2 a = orbit.next();
    double ux = a.a11.real() * vx + a.a12.real() * vy;
    double uy = a.a21.real() * vx + a.a22.real() * vy;
    double raw = std::atan2(uy, ux) - std::atan2(vy, vx);
    // branch nearest the previous increment: the increments of a continuous
    // cocycle vary continuously along the orbit, so this avoids the +-pi
    // flip-flop near half-turns
    double delta = raw - TWO_PI * std::round((raw - prevDelta) / TWO_PI);
    prevDelta = delta;
    double weight = bumpWeight((k + 0.5) / (double)n);
    double term = weight * delta - accC;
    double tmp = acc + term;
    accC = (tmp - acc) - term;
    acc = tmp;
    wsum += weight;
    double nrm = std::sqrt(ux * ux + uy * uy);
    if (nrm < 1e-300) throw Error("rotationNumber: orbit vector collapsed");
    vx = ux / nrm;
    vy = uy / nrm;
  }
  RotationResult r;
  r.rho = mod1(acc / (TWO_PI * wsum));
  r.errEstimate = 10.0 / (double)n;
  return r;
}

LyapunovResult lyapunovExponent(const CocycleMap& map, int64_t n, int nTheta, uint64_t seed,
                                int threads) {
  if (n < 64) throw Error("lyapunovExponent: need at least 64 iterates");
  if (nTheta < 1) throw Error("lyapunovExponent: need at least one phase");
  int d = map.dim();
  // draw all phases up front so the sample set is independent of threading
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<Freq> thetas((size_t)nTheta, Freq((size_t)d, 0.0));
  for (auto& th : thetas)
    for (int i = 0; i < d; ++i) th[(size_t)i] = 2.0 * unif(rng);
  std::vector<double> slope((size_t)nTheta, 0.0);
  parallelFor(nTheta, threads, [&](int64_t j) {
    FactorOrbit orbit(map, thetas[(size_t)j]);
    Mat2 p = Mat2::id();
    double lnAcc = 0.0, lnHalf = 0.0;
    int64_t half = n / 2;
    for (int64_t k = 1; k <= n; ++k) {
      p = orbit.next() * p;
      if (k % 32 == 0 || k == n || k == half) {
        double nm = p.norm();
        if (nm < 1e-300) throw Error("lyapunovExponent: product underflow");
        lnAcc += std::log(nm);
        p = p * (1.0 / nm);
      }
      if (k == half) lnHalf = lnAcc + std::log(p.norm());
      if (k == n) lnAcc += std::log(p.norm());
    }
    slope[(size_t)j] = (lnAcc - lnHalf) / (double)(n - half);
  });
  double mean = 0;
  for (double s : slope) mean += s;
  mean /= nTheta;
  double var = 0;
  for (double s : slope) var += (s - mean) * (s - mean);
  LyapunovResult r;
  r.value = mean;
  r.stderrValue = nTheta > 1 ? std::sqrt(var / (nTheta - 1) / nTheta) : 0.0;
  return r;
}

MultiIndex degree(const MatrixSeries& b, int gridMin) {
  int d = b.dim();
  double period = TWO_PI / (MatrixSeries(d, b.halfLattice()).w());
  // base point away from symmetry axes
  Freq base = {0.3173, 0.7711, 0.1933};
  base.resize((size_t)d);
  MultiIndex deg = MultiIndex::zero(d);
  for (int i = 0; i < d; ++i) {
    int grid = std::max<int>(gridMin, 8 * (int)b.supportRadius());
    for (int attempt = 0;; ++attempt) {
      double total = 0, prev = 0;
      bool started = false;
      double px = 0, py = 0;
      for (int m = 0; m <= grid; ++m) {
        Freq th = base;
        th[(size_t)i] = base[(size_t)i] + period * m / grid;
        Mat2 v = b.evaluate(th);
        double x = v.a11.real(), y = v.a21.real();
        if (std::abs(x) + std::abs(y) < 1e-13)
          throw Error("degree: first column vanished on the sample loop");
        if (started) {
          double raw = std::atan2(y, x) - std::atan2(py, px);
          double delta = raw - TWO_PI * std::round((raw - prev) / TWO_PI);
          prev = delta;
          total += delta;
        }
        started = true;
        px = x;
        py = y;
      }
      double wind = total / TWO_PI;
      if (std::abs(wind - std::round(wind)) < 0.2) {
        deg[i] = (int32_t)std::llround(wind);
        break;
      }
      grid *= 4;
      if (attempt >= 4) throw Error("degree: winding did not settle to an integer");
    }
  }
  return deg;
}

UhResult uniformHyperbolicity(const CocycleMap& map, int window, int grid, double growthThresh,
                              double coneTol, int threads) {
  if (window < 8 || grid < 4) throw Error("uniformHyperbolicity: window/grid too small");
  int d = map.dim();
  std::vector<double> growth((size_t)grid, 0.0), cone((size_t)grid, 0.0);
  parallelFor(grid, threads, [&](int64_t j) {
    Freq th(static_cast<size_t>(d), 0.0);
    th[0] = 2.0 * (double)j / grid;
    if (d > 1) th[1] = mod1(0.37 + 1.41 * (double)j / grid) * 2.0;
    if (d > 2) th[2] = mod1(0.81 + 0.77 * (double)j / grid) * 2.0;
    FactorOrbit orbit(map, th);
    // Track three directions with shared renormalization. At least two of
    // them must merge under a hyperbolic window: only an exactly invariant
    // stable direction can stay apart, and that can hit at most one of the
    // three starting vectors.
    double ux[3] = {1, 0, 0.7071067811865476};
    double uy[3] = {0, 1, 0.7071067811865476};
    double lnAcc = 0;
    for (int k = 0; k < window; ++k) {
      Mat2 a = orbit.next();
      double a11 = a.a11.real(), a12 = a.a12.real(), a21 = a.a21.real(), a22 = a.a22.real();
      double wx[3], wy[3], nm = 0;
      for (int i = 0; i < 3; ++i) {
        wx[i] = a11 * ux[i] + a12 * uy[i];
        wy[i] = a21 * ux[i] + a22 * uy[i];
        nm = std::max(nm, std::max(std::abs(wx[i]), std::abs(wy[i])));
      }
      if (nm < 1e-300) throw Error("uniformHyperbolicity: vector underflow");
      lnAcc += std::log(nm);
      for (int i = 0; i < 3; ++i) {
        ux[i] = wx[i] / nm;
        uy[i] = wy[i] / nm;
      }
    }
    double best = 0;
    for (int i = 0; i < 3; ++i) best = std::max(best, std::sqrt(ux[i] * ux[i] + uy[i] * uy[i]));
    lnAcc += std::log(best);
    growth[(size_t)j] = lnAcc / window;
    double minPair = 1e300;
    for (int i = 0; i < 3; ++i)
      for (int l = i + 1; l < 3; ++l) {
        double ang = std::abs(std::atan2(uy[i], ux[i]) - std::atan2(uy[l], ux[l]));
        while (ang > 1.5707963267948966) ang = std::abs(ang - 3.141592653589793);
        minPair = std::min(minPair, ang);
      }
    cone[(size_t)j] = minPair;
  });
  UhResult r;
  r.window = window;
  r.minGrowth = growth[0];
  r.maxGrowth = growth[0];
  r.coneAngle = cone[0];
  for (int j = 1; j < grid; ++j) {
    r.minGrowth = std::min(r.minGrowth, growth[(size_t)j]);
    r.maxGrowth = std::max(r.maxGrowth, growth[(size_t)j]);
    r.coneAngle = std::max(r.coneAngle, cone[(size_t)j]);
  }
  if (r.minGrowth >= growthThresh && r.coneAngle <= coneTol)
    r.verdict = UhVerdict::UH;
  else if (r.maxGrowth <= growthThresh)
    r.verdict = UhVerdict::NotUH;
  else
    r.verdict = UhVerdict::Undecided;
  return r;
}

DcResult dcAlphaCheck(const Freq& alpha, double gamma, double tau, int64_t N) {
  int d = (int)alpha.size();
  DcResult r;
  r.margin = 1e300;
  if (d == 1) {
    // incremental orbit of n alpha mod 1, symmetric in n -> -n
    double a = mod1(alpha[0]);
    double x = 0;
    for (int64_t n = 1; n <= N; ++n) {
      x += a;
      if (x >= 1.0) x -= 1.0;
      double dist = std::min(x, 1.0 - x);
      double m = dist * std::pow((double)n, tau) / gamma;
      if (m < r.margin) {
        r.margin = m;
        r.worst = MultiIndex::zero(1);
        r.worst[0] = (int32_t)n;
      }
    }
  } else {
    forLatticeBall(d, N, true, [&](const MultiIndex& n) {
      double dist = torusDist(dot(n, alpha));
      double m = dist * std::pow((double)n.l1(), tau) / gamma;
      if (m < r.margin) {
        r.margin = m;
        r.worst = n;
      }
    });
  }
  r.ok = r.margin >= 1.0;
  return r;
}

}  // namespace qpkam
