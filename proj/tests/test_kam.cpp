#include <doctest.h>

#include <cmath>
#include <random>

#include "qpkam/kam.hpp"

using namespace qpkam;

namespace {

const double kGolden = 0.61803398874989484820;

MultiIndex evenIndex(std::mt19937_64& rng, int d, int radius) {
  std::uniform_int_distribution<int> u(-radius, radius);
  MultiIndex k = MultiIndex::zero(d);
  for (int i = 0; i < d; ++i) k[i] = 2 * u(rng);
  return k;
}

// Random real traceless perturbation on even half-lattice modes.
MatrixSeries randomPerturbation(std::mt19937_64& rng, int d, int nModes, int radius, double amp) {
  MatrixSeries f(d, true);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < nModes; ++i) {
    MultiIndex k = evenIndex(rng, d, radius);
    cplx c11(amp * u(rng), amp * u(rng));
    cplx c12(amp * u(rng), amp * u(rng));
    cplx c21(amp * u(rng), amp * u(rng));
    f.add(k, Mat2(c11, c12, c21, -c11));
  }
  return f.realPart();
}

Mat2 randomConstant(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Mat2 x(0.4 * u(rng), 0.4 * u(rng), 0.4 * u(rng), 0);
  x.a22 = -x.a11;
  return expMat(x) * rotation(0.5 * u(rng));
}

const BoundCheck& findCheck(const KamStepRecord& rec, const std::string& name) {
  for (const auto& c : rec.checks)
    if (c.name == name) return c;
  static BoundCheck none;
  REQUIRE_MESSAGE(false, "missing check ", name);
  return none;
}

}  // namespace

TEST_CASE("threshold and truncation order formulas") {
  KamParams kp;
  kp.sigma = 0.05;
  kp.gamma = 0.1;
  kp.tau = 1.5;
  double eps = 1e-8;
  double a = std::pow(eps, 0.05);
  double b = 0.25 * 0.1 * std::pow(4.0 * 500, -1.5);
  CHECK(resonanceThreshold(eps, 500, kp) == doctest::Approx(std::min(a, b)).epsilon(1e-14));

  // (1/2pi) (2 |ln eps| / dr)^{1/nu}, rounded up
  double expect = std::pow(2.0 * std::abs(std::log(1e-6)) / 0.1, 2.0) / TWO_PI;
  CHECK(truncationOrder(1e-6, 0.6, 0.5, 0.5) == (int64_t)std::ceil(expect));
  CHECK(truncationOrder(0.999, 1.0, 0.5, 0.5) >= 1);
  CHECK_THROWS(truncationOrder(1e-6, 0.5, 0.5, 0.5));
}

TEST_CASE("resonance scan finds a planted site") {
  Freq alpha{kGolden};
  double target = mod1(3 * kGolden);  // <3, alpha> mod 1

  SUBCASE("planted offset below threshold") {
    double xi = 0.5 * (target + 1e-9);
    auto res = findResonance(xi, alpha, 50, 1e-7);
    CHECK(res.resonant);
    CHECK(res.site == MultiIndex{3});
    CHECK(res.dist == doctest::Approx(1e-9).epsilon(1e-3));
  }
  SUBCASE("threshold below the offset leaves it nonresonant") {
    double xi = 0.5 * (target + 1e-9);
    auto res = findResonance(xi, alpha, 50, 1e-10);
    CHECK_FALSE(res.resonant);
    CHECK(res.site == MultiIndex{3});  // still the minimizer
  }
  SUBCASE("negative site") {
    double xi = 0.5 * mod1(-7 * kGolden) + 2e-10;
    auto res = findResonance(xi, alpha, 50, 1e-8);
    CHECK(res.resonant);
    CHECK(res.site == MultiIndex{-7});
  }
  SUBCASE("two dimensional lattice ball") {
    Freq a2{kGolden, std::sqrt(2.0) - 1.0};
    MultiIndex n{2, -1};
    double xi = 0.5 * mod1(dot(n, a2)) + 5e-10;
    auto res = findResonance(xi, a2, 12, 1e-8);
    CHECK(res.resonant);
    CHECK(res.site == n);
  }
  SUBCASE("long incremental scan keeps full precision") {
    // frac(n alpha) accumulated over 2e5 steps must not drift
    int64_t n = 200000;
    long double acc = std::fmod((long double)n * (long double)kGolden, 1.0L);
    double xi = 0.5 * ((double)acc + 3e-12);
    auto res = findResonance(xi, alpha, n, 1e-9);
    CHECK(res.resonant);
    CHECK(res.site == MultiIndex{200000});
    CHECK(std::abs(res.dist - 3e-12) < 1e-14);
  }
}

TEST_CASE("symmetric elimination contracts and leaves exact support") {
  std::mt19937_64 rng(20260815);
  Freq alpha{kGolden};
  KamParams kp;
  double r = 0.7, eps0 = 1e-7;

  int done = 0;
  while (done < 12) {
    Mat2 a = randomConstant(rng);
    MatrixSeries f = randomPerturbation(rng, 1, 4, 4, eps0 / 40.0);
    double eps = f.norm(GevreyParams{kp.nu, r});
    if (eps < 1e-12) continue;
    // keep clearly nonresonant constants so the regime applies
    double dmin = 1e300;
    f.forEach([&](const MultiIndex& k, const Mat2&) {
      if (!k.isZero()) dmin = std::min(dmin, minDivisorSymmetric(a, k, alpha));
    });
    if (dmin < 0.1) continue;
    ++done;
    CAPTURE(done);

    auto el = eliminateSymmetric(a, f, r, alpha, kp, eps);
    GevreyParams gp{kp.nu, r};
    CHECK(el.y.norm(gp) <= std::sqrt(eps));
    CHECK(el.fre.norm(gp) <= 2.0 * eps);
    CHECK(el.residual <= std::max(kp.newtonTol * eps * eps, 1e-14 * eps));
    // nothing kept clears the gate
    el.fre.forEach([&](const MultiIndex& k, const Mat2&) {
      bool belongs = k.isZero() || minDivisorSymmetric(a, k, alpha) < el.eta;
      CHECK(belongs);
    });
    // B = e^Y conjugates the cocycle onto A e^{g} pointwise
    std::vector<MatrixSeries> b{seriesExp(el.y, gp, 1e-18)};
    CHECK(conjugationResidual(alpha, a, f, b, a, el.g) <= 1e-10);
    CHECK(el.droppedMass <= 1e-12 * eps);
  }
}

TEST_CASE("rotated elimination keeps exactly the resonant coordinates") {
  std::mt19937_64 rng(77);
  Freq alpha{kGolden};
  KamParams kp;
  double r = 0.6;
  MultiIndex site{3};
  double xi = 0.5 * (mod1(3 * kGolden) + 1e-9);

  MatrixSeries f = randomPerturbation(rng, 1, 3, 2, 2e-9);
  // content at the resonant mode pair +-2 n_*
  MultiIndex kLo = site + site;
  f.add(-kLo, Mat2(cplx(1e-9, 2e-10), cplx(-3e-10, 1e-9), cplx(2e-10, -1e-10), cplx(-1e-9, -2e-10)));
  f = f.realPart();
  double eps = f.norm(GevreyParams{kp.nu, r});

  auto el = eliminateRotated(xi, f, r, alpha, kp, eps, site);
  GevreyParams gp{kp.nu, r};
  CHECK(el.y.norm(gp) <= std::sqrt(eps));
  CHECK(el.fre.norm(gp) <= 2.0 * eps);

  // surviving coordinates: t at 0, upper at -2 n_*, lower at +2 n_*
  el.fre.forEach([&](const MultiIndex& k, const Mat2& v) {
    Mat2 xt = mConjugate(v);
    cplx tC = -cplx(0, 1) * xt.a11, up = xt.a12, lo = xt.a21;
    if (k.isZero()) {
      CHECK(std::abs(up) == 0.0);
      CHECK(std::abs(lo) == 0.0);
      CHECK(std::abs(tC) > 0.0);
    } else if (k == -kLo) {
      CHECK(std::abs(tC) == 0.0);
      CHECK(std::abs(lo) == 0.0);
    } else if (k == kLo) {
      CHECK(std::abs(tC) == 0.0);
      CHECK(std::abs(up) == 0.0);
    } else {
      REQUIRE_MESSAGE(false, "unexpected survivor at ", k.str());
    }
  });
  std::vector<MatrixSeries> b{seriesExp(el.y, gp, 1e-18)};
  CHECK(conjugationResidual(alpha, rotation(xi), f, b, rotation(xi), el.g) <= 1e-10);
}

TEST_CASE("nonresonant step absorbs the constant block") {
  std::mt19937_64 rng(5150);
  Freq alpha{kGolden};
  KamParams kp;
  kp.gateC = 1e12;  // step mechanics only; the strict gate is exercised elsewhere
  Mat2 a = rotation(0.31);
  MatrixSeries f = randomPerturbation(rng, 1, 4, 3, 3e-7);
  KamState s = makeState(alpha, a, f, 0.7, kp.nu);

  auto st = kamStep(s, 0.55, kp, 0);
  CHECK_FALSE(st.rec.resonant);
  CHECK(st.rec.degStep.isZero());
  CHECK(findCheck(st.rec, "y_norm").pass);
  CHECK(findCheck(st.rec, "fre_norm").pass);
  CHECK(findCheck(st.rec, "a_step").pass);
  CHECK(findCheck(st.rec, "f_next").pass);
  CHECK(st.next.eps <= std::pow(s.eps, 1.5));
  CHECK(conjugationResidual(alpha, s.a, s.f, st.bFactors, st.next.a, st.next.f) <= 1e-10);
}

TEST_CASE("resonant step twists out the planted site") {
  std::mt19937_64 rng(99);
  Freq alpha{kGolden};
  KamParams kp;
  kp.gateC = 1e12;
  MultiIndex site{3};
  double dist = 1e-9;
  double xi = 0.5 * (mod1(3 * kGolden) + dist);
  Mat2 a = rotation(xi);

  MatrixSeries f = randomPerturbation(rng, 1, 3, 2, 2e-9);
  MultiIndex kLo = site + site;
  f.add(-kLo, Mat2(cplx(8e-10, 2e-10), cplx(-3e-10, 9e-10), cplx(2e-10, -1e-10), cplx(-8e-10, -2e-10)));
  f = f.realPart();
  KamState s = makeState(alpha, a, f, 0.6, kp.nu);

  // dr = 0.15 keeps the truncation order small enough that the Diophantine
  // cap of the threshold sits above the planted offset
  auto st = kamStep(s, 0.45, kp, 0);
  REQUIRE(st.rec.resonant);
  CHECK(st.rec.site == site);
  CHECK(st.rec.resonanceDist == doctest::Approx(dist).epsilon(1e-3));
  CHECK(st.rec.degStep == site);
  CHECK(st.bFactors.size() == 3);

  CHECK(findCheck(st.rec, "y_norm").pass);
  CHECK(findCheck(st.rec, "a_plus_small").pass);
  CHECK(findCheck(st.rec, "mu_plus").pass);
  CHECK(findCheck(st.rec, "t_plus").pass);

  // new rotation angle is the planted offset over two, modulo the center
  Mat2 aFold = st.next.a.tr().real() < 0 ? -st.next.a : st.next.a;
  CHECK(logMat(aFold).norm() <= 1e-7);
  CHECK(st.next.eps <= 1e-12);
  CHECK(conjugationResidual(alpha, s.a, s.f, st.bFactors, st.next.a, st.next.f) <= 1e-10);

  // the full conjugator has topological degree n_*
  CHECK(degree(productAll(st.bFactors)) == site);
}

TEST_CASE("three step reduction of a cosine potential contracts at rate 3/2") {
  // Schrodinger cocycle at the band center with v = 2 lambda cos(2 pi theta):
  // A_E = (E -1; 1 0), f = (0 0; v 0) is exactly nilpotent.
  double lambda = 1e-4;
  Freq alpha{kGolden};
  MatrixSeries f(1, true);
  Mat2 low(0, 0, lambda, 0);
  f.set(MultiIndex{2}, low);
  f.set(MultiIndex{-2}, low);
  Mat2 aE(0, -1, 1, 0);

  KamParams kp;
  kp.gateC = 1e12;  // wide-open smallness gate for a coarse-width run
  KamState s0 = makeState(alpha, aE, f, 1.0, kp.nu);
  CHECK(s0.eps == doctest::Approx(2 * 2 * lambda * std::exp(std::sqrt(TWO_PI))).epsilon(1e-12));

  auto res = almostReduce(s0, 0.5, 3, kp);
  REQUIRE(res.steps.size() == 3);
  CHECK(res.stopReason == "max_steps");
  double eps = s0.eps;
  for (const auto& rec : res.steps) {
    CHECK(rec.eps == doctest::Approx(eps).epsilon(1e-12));
    CHECK(rec.epsNext <= std::pow(rec.eps, 1.5));
    CHECK(rec.gatePass);
    eps = rec.epsNext;
  }
  CHECK(res.final.eps < 1e-12);
  CHECK(res.degTotal.isZero());
  CHECK(conjugationResidual(alpha, s0.a, s0.f, res.bFactors, res.final.a, res.final.f) <= 1e-8);
}

TEST_CASE("diophantine reduction certifies a resonance-free tail") {
  double lambda = 1e-4;
  Freq alpha{kGolden};
  MatrixSeries f(1, true);
  Mat2 low(0, 0, lambda, 0);
  f.set(MultiIndex{2}, low);
  f.set(MultiIndex{-2}, low);
  KamParams kp;
  kp.gateC = 1e12;
  KamState s0 = makeState(alpha, Mat2(0, -1, 1, 0), f, 1.0, kp.nu);

  auto red = reduceDiophantine(s0, 0.5, 3, 0.6, 1.1, kp);
  CHECK(red.j0 == 0);
  CHECK(red.tailEps == doctest::Approx(s0.eps).epsilon(1e-12));
  CHECK(red.zbarDist <= 4.0 * std::sqrt(red.tailEps));
  for (const auto& g : red.gateChecks) CHECK(g.pass);
  CHECK(red.reducible);
}

TEST_CASE("rational endgame extracts the parabolic datum") {
  std::mt19937_64 rng(4242);
  Freq alpha{kGolden};
  KamParams kp;
  kp.gateC = 1e12;

  SUBCASE("upper triangular normal form") {
    double phi0 = 1e-3;
    Mat2 a = expMat(Mat2(0, phi0, 0, 0));
    MatrixSeries f = randomPerturbation(rng, 1, 3, 2, 3e-10);
    KamState s0 = makeState(alpha, a, f, 0.8, kp.nu);
    auto red = reduceRational(s0, 0.6, 2, MultiIndex{0}, kp);
    CHECK(red.degB.isZero());
    CHECK_FALSE(red.negated);
    CHECK(std::abs(red.phi - phi0) <= 1e-6);
    // axis is a projective datum: distance to the horizontal axis mod pi
    double axisDist = std::min(red.thetaHat, 0.5 * TWO_PI - red.thetaHat);
    CHECK(axisDist <= 1e-3);
    CHECK(red.residual <= 1e-8);
  }
  SUBCASE("normal form at minus the identity") {
    double phi0 = 2e-3;
    Mat2 a = expMat(Mat2(0, phi0, 0, 0)) * (-1.0);
    MatrixSeries f = randomPerturbation(rng, 1, 3, 2, 3e-10);
    KamState s0 = makeState(alpha, a, f, 0.8, kp.nu);
    auto red = reduceRational(s0, 0.6, 2, MultiIndex{0}, kp);
    CHECK(red.negated);
    CHECK(std::abs(red.phi - phi0) <= 1e-6);
    CHECK(red.residual <= 1e-8);
  }
  SUBCASE("degree alignment through an exact rotor twist") {
    Mat2 a = rotation(0.3);
    MatrixSeries f = randomPerturbation(rng, 1, 3, 2, 1e-9);
    KamState s0 = makeState(alpha, a, f, 0.8, kp.nu);
    auto red = reduceRational(s0, 0.6, 2, MultiIndex{2}, kp);
    CHECK(red.degB == MultiIndex{2});
    CHECK(degree(productAll(red.bFactors)) == MultiIndex{2});
    CHECK(red.residual <= 1e-8);
    // constant rotated by <m, alpha>/2
    cplx ang = eigenAngle(red.aFinal);
    CHECK(std::abs(ang.imag()) <= 1e-9);
    double expect = std::abs(0.3 - kGolden - std::round(0.3 - kGolden));
    CHECK(std::abs(std::abs(ang.real()) - expect) <= 1e-6);
  }
}

TEST_CASE("state validation rejects malformed input") {
  Freq alpha{kGolden};
  MatrixSeries f(1, true);
  f.set(MultiIndex{2}, Mat2(cplx(0, 1e-3), 0, 0, cplx(0, -1e-3)));  // not a real series

  CHECK_THROWS_WITH_AS(makeState(alpha, Mat2::id(), f, 0.5, 0.5), doctest::Contains("real"),
                       Error);

  MatrixSeries g(1, true);
  g.set(MultiIndex{2}, Mat2(1e-3, 0, 0, 1e-3));
  g.set(MultiIndex{-2}, Mat2(1e-3, 0, 0, 1e-3));
  CHECK_THROWS_WITH_AS(makeState(alpha, Mat2::id(), g, 0.5, 0.5), doctest::Contains("traceless"),
                       Error);

  MatrixSeries h(1, true);
  CHECK_THROWS_WITH_AS(makeState(alpha, Mat2::id() * 2.0, h, 0.5, 0.5),
                       doctest::Contains("determinant"), Error);
}

TEST_CASE("factored conjugator helpers") {
  Freq alpha{kGolden};
  MatrixSeries idS = constMatSeries(1, true, Mat2::id());
  std::vector<MatrixSeries> b{idS, rotorSeries(MultiIndex{1}, 1)};
  Freq th{0.37};
  Mat2 direct = rotorSeries(MultiIndex{1}, 1).evaluate(th);
  CHECK((evalFactors(b, th) - direct).norm() <= 1e-15);
  CHECK((productAll(b).evaluate(th) - direct).norm() <= 1e-15);

  MatrixSeries f(1, true);
  f.set(MultiIndex{2}, Mat2(0, 0, 1e-3, 0));
  f.set(MultiIndex{-2}, Mat2(0, 0, 1e-3, 0));
  std::vector<MatrixSeries> trivial{idS};
  CHECK(conjugationResidual(alpha, rotation(0.2), f, trivial, rotation(0.2), f) <= 1e-15);
}
