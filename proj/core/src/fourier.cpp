#include "qpkam/fourier.hpp"

#include <cstdio>
#include <sstream>

namespace qpkam {

MatrixSeries seriesExp(const MatrixSeries& x, const GevreyParams& g, double tol, int64_t capN) {
  double nr = x.norm(g);
  if (!(nr == nr) || nr > 30.0) throw Error("seriesExp: |X|_r too large for the power series");
  MatrixSeries acc = constMatSeries(x.dim(), x.halfLattice(), Mat2::id());
  MatrixSeries term = acc;
  int mmax = 80 + 4 * (int)nr;
  for (int m = 1; m <= mmax; ++m) {
    term = product(term, x, capN) * (1.0 / m);
    acc = acc + term;
    double tb = term.norm(g);
    // After m > 2 |X|_r the tail is dominated by a geometric series with
    // ratio <= 1/2, so the remainder is at most twice the last term.
    if (m >= 2.0 * nr && tb <= 0.5 * tol) return acc;
  }
  throw Error("seriesExp: power series did not settle");
}

static MatrixSeries com(const MatrixSeries& a, const MatrixSeries& b, int64_t capN) {
  return product(a, b, capN) - product(b, a, capN);
}

SeriesBch seriesBch(const MatrixSeries& x, const MatrixSeries& y, int order, const GevreyParams& g,
                    int64_t capN) {
  if (order < 2 || order > 4) throw Error("seriesBch: order must be 2, 3 or 4");
  double xn = x.norm(g), yn = y.norm(g);
  double s = xn + yn;
  if (s > 0.25)
    throw Error("seriesBch: |X|_r + |Y|_r = " + std::to_string(xn) + " + " + std::to_string(yn) +
                " > 1/4, outside the validity region");
  MatrixSeries xy = com(x, y, capN);
  MatrixSeries z = x + y + xy * 0.5;
  if (order >= 3) z = z + (com(x, xy, capN) - com(y, xy, capN)) * (1.0 / 12.0);
  if (order >= 4) z = z - com(y, com(x, xy, capN), capN) * (1.0 / 24.0);
  SeriesBch r;
  r.z = z;
  double tail = std::pow(s, order + 1);
  r.remainderBound = 2.0 * tail / (1.0 - 2.0 * s + 1e-15);
  return r;
}

MatrixSeries rotorSeries(const MultiIndex& n, int d) {
  if (n.dim() != d) throw Error("rotorSeries: index dimension mismatch");
  MatrixSeries z(d, true);
  if (n.isZero()) {
    z.set(MultiIndex::zero(d), Mat2::id());
    return z;
  }
  cplx half(0.5, 0), ih(0, 0.5);
  // R_{<n,theta>/2} = (cos pi<n,theta>, -sin; sin, cos): two modes at +-n.
  z.set(n, Mat2(half, ih, -ih, half));
  z.set(-n, Mat2(half, -ih, ih, half));
  return z;
}

ScalarSeries parseSeriesLiteral(const std::string& text, int d) {
  std::string clean = text;
  for (auto& ch : clean)
    if (ch == '[' || ch == ']' || ch == ',' || ch == ';') ch = ' ';
  std::istringstream in(clean);
  std::vector<double> vals;
  double v;
  while (in >> v) vals.push_back(v);
  if (!in.eof()) throw Error("series literal: unparsable token in \"" + text + "\"");
  size_t group = (size_t)d + 2;
  if (vals.empty() || vals.size() % group != 0)
    throw Error("series literal: expected groups [k1..k" + std::to_string(d) + " re im]");
  ScalarSeries s(d, false);
  for (size_t i = 0; i < vals.size(); i += group) {
    MultiIndex k = MultiIndex::zero(d);
    for (int j = 0; j < d; ++j) {
      double kj = vals[i + (size_t)j];
      if (kj != std::floor(kj) || std::abs(kj) > (1 << 20))
        throw Error("series literal: index out of range or not an integer");
      k[j] = (int32_t)kj;
    }
    s.add(k, cplx(vals[i + group - 2], vals[i + group - 1]));
  }
  return s;
}

std::string formatSeriesLiteral(const ScalarSeries& s) {
  std::string out;
  char buf[96];
  s.forEach([&](const MultiIndex& k, cplx v) {
    if (!out.empty()) out += ' ';
    out += '[';
    for (int i = 0; i < s.dim(); ++i) {
      std::snprintf(buf, sizeof buf, "%d ", (int)k[i]);
      out += buf;
    }
    std::snprintf(buf, sizeof buf, "%.17g %.17g]", v.real(), v.imag());
    out += buf;
  });
  return out;
}

}  // namespace qpkam
