#include <algorithm>
#include <cmath>
#include <numeric>

#include "sddr/basis.hpp"

namespace sddr {
namespace {

int find_span(const KnotVector& kv, double x) {
  const int m = kv.n_basis();
  const auto& t = kv.knots;
  if (x >= t[static_cast<std::size_t>(m)]) {
    int i = m - 1;
    while (i > kv.degree && t[static_cast<std::size_t>(i)] == t[static_cast<std::size_t>(i + 1)]) --i;
    return i;
  }
  // Last i with t[i] <= x, restricted to [degree, m-1].
  const auto it = std::upper_bound(t.begin() + kv.degree, t.begin() + m, x);
  return std::max(kv.degree, static_cast<int>(it - t.begin()) - 1);
}

// Nonzero basis functions and their derivatives at x in span i (NURBS book
// A2.3). Row r of the result holds the r-th derivative of B_{i-p..i}.
Eigen::MatrixXd basis_ders(const KnotVector& kv, int i, double x, int n_ders) {
  const int p = kv.degree;
  const auto& t = kv.knots;
  auto T = [&](int idx) { return t[static_cast<std::size_t>(idx)]; };

  Eigen::MatrixXd ndu(p + 1, p + 1);
  Eigen::VectorXd left(p + 1), right(p + 1);
  ndu(0, 0) = 1.0;
  for (int j = 1; j <= p; ++j) {
    left(j) = x - T(i + 1 - j);
    right(j) = T(i + j) - x;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      ndu(j, r) = right(r + 1) + left(j - r);
      const double temp = ndu(r, j - 1) / ndu(j, r);
      ndu(r, j) = saved + right(r + 1) * temp;
      saved = left(j - r) * temp;
    }
    ndu(j, j) = saved;
  }

  Eigen::MatrixXd ders = Eigen::MatrixXd::Zero(n_ders + 1, p + 1);
  for (int j = 0; j <= p; ++j) ders(0, j) = ndu(j, p);
  const int top = std::min(n_ders, p);
  Eigen::MatrixXd a(2, p + 1);
  for (int r = 0; r <= p; ++r) {
    int s1 = 0, s2 = 1;
    a.setZero();
    a(0, 0) = 1.0;
    for (int k = 1; k <= top; ++k) {
      double d = 0.0;
      const int rk = r - k, pk = p - k;
      if (r >= k) {
        a(s2, 0) = a(s1, 0) / ndu(pk + 1, rk);
        d = a(s2, 0) * ndu(rk, pk);
      }
      const int j1 = rk >= -1 ? 1 : -rk;
      const int j2 = (r - 1 <= pk) ? k - 1 : p - r;
      for (int j = j1; j <= j2; ++j) {
        a(s2, j) = (a(s1, j) - a(s1, j - 1)) / ndu(pk + 1, rk + j);
        d += a(s2, j) * ndu(rk + j, pk);
      }
      if (r <= pk) {
        a(s2, k) = -a(s1, k - 1) / ndu(pk + 1, r);
        d += a(s2, k) * ndu(r, pk);
      }
      ders(k, r) = d;
      std::swap(s1, s2);
    }
  }
  double scale = p;
  for (int k = 1; k <= top; ++k) {
    ders.row(k) *= scale;
    scale *= (p - k);
  }
  return ders;
}

double quantile7(const std::vector<double>& sorted, double prob) {
  const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

bool strictly_increasing(const std::vector<double>& v) {
  return std::adjacent_find(v.begin(), v.end(), std::greater_equal<>()) == v.end();
}

}  // namespace

void KnotVector::validate() const {
  if (degree < 0) throw BasisError("spline degree must be >= 0");
  if (static_cast<int>(knots.size()) < degree + 2) throw BasisError("fewer than degree+2 knots");
  if (!std::is_sorted(knots.begin(), knots.end())) throw BasisError("knots must be non-decreasing");
  if (!(lower() < upper())) throw BasisError("too few distinct knots: empty boundary interval");
}

KnotVector quantile_knots(std::span<const double> x, int n_basis, int degree) {
  const int n_interior = n_basis - degree - 1;
  if (n_interior < 0) throw BasisError("basis dimension too small for the spline degree");
  std::vector<double> sorted(x.begin(), x.end());
  std::sort(sorted.begin(), sorted.end());
  const double lo = sorted.front(), hi = sorted.back();
  if (!(lo < hi)) throw BasisError("constant input column");

  auto place = [&](const std::vector<double>& values) {
    std::vector<double> distinct{lo};
    for (int j = 1; j <= n_interior; ++j)
      distinct.push_back(quantile7(values, static_cast<double>(j) / (n_interior + 1)));
    distinct.push_back(hi);
    return distinct;
  };
  std::vector<double> distinct = place(sorted);
  if (!strictly_increasing(distinct)) {
    std::vector<double> unique = sorted;
    unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
    distinct = place(unique);
    if (!strictly_increasing(distinct)) throw BasisError("too few distinct values for the basis dimension");
  }

  KnotVector kv;
  kv.degree = degree;
  kv.knots.insert(kv.knots.end(), static_cast<std::size_t>(degree), lo);
  kv.knots.insert(kv.knots.end(), distinct.begin(), distinct.end());
  kv.knots.insert(kv.knots.end(), static_cast<std::size_t>(degree), hi);
  return kv;
}

Eigen::MatrixXd bspline_basis(std::span<const double> x, const KnotVector& knots) {
  knots.validate();
  const int p = knots.degree;
  const double lo = knots.lower(), hi = knots.upper();
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(x.size()), knots.n_basis());
  for (std::size_t r = 0; r < x.size(); ++r) {
    const double xr = x[r];
    if (!std::isfinite(xr)) throw BasisError("non-finite feature value");
    const double at = std::clamp(xr, lo, hi);
    const int span = find_span(knots, at);
    const bool outside = xr < lo || xr > hi;
    const Eigen::MatrixXd d = basis_ders(knots, span, at, outside ? 1 : 0);
    for (int j = 0; j <= p; ++j) {
      double v = d(0, j);
      if (outside) v += (xr - at) * d(1, j);
      B(static_cast<Eigen::Index>(r), span - p + j) = v;
    }
  }
  return B;
}

Eigen::MatrixXd bspline_derivative(std::span<const double> x, const KnotVector& knots, int order) {
  knots.validate();
  if (order < 0) throw BasisError("derivative order must be >= 0");
  const int p = knots.degree;
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(x.size()), knots.n_basis());
  if (order > p) return B;
  for (std::size_t r = 0; r < x.size(); ++r) {
    const double at = std::clamp(x[r], knots.lower(), knots.upper());
    const int span = find_span(knots, at);
    const Eigen::MatrixXd d = basis_ders(knots, span, at, order);
    for (int j = 0; j <= p; ++j) B(static_cast<Eigen::Index>(r), span - p + j) = d(order, j);
  }
  return B;
}

Eigen::MatrixXd difference_penalty(int order, int m) {
  if (order < 1) throw BasisError("difference order must be >= 1");
  if (m <= order) throw BasisError("basis dimension must exceed the difference order");
  Eigen::MatrixXd D = Eigen::MatrixXd::Identity(m, m);
  for (int o = 0; o < order; ++o) {
    const Eigen::Index rows = D.rows() - 1;
    D = (D.bottomRows(rows) - D.topRows(rows)).eval();
  }
  return D.transpose() * D;
}

Eigen::MatrixXd curvature_penalty(const KnotVector& knots) {
  knots.validate();
  // 3-point Gauss-Legendre on [-1, 1].
  static constexpr double nodes[3] = {-0.7745966692414834, 0.0, 0.7745966692414834};
  static constexpr double weights[3] = {5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0};
  const int m = knots.n_basis();
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(m, m);
  std::vector<double> breaks(knots.knots.begin() + knots.degree, knots.knots.begin() + m + 1);
  breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());
  for (std::size_t s = 0; s + 1 < breaks.size(); ++s) {
    const double a = breaks[s], b = breaks[s + 1];
    const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
    std::vector<double> pts;
    for (double node : nodes) pts.push_back(mid + half * node);
    const Eigen::MatrixXd D2 = bspline_derivative(pts, knots, 2);
    for (int q = 0; q < 3; ++q) P.noalias() += (weights[q] * half) * D2.row(q).transpose() * D2.row(q);
  }
  return 0.5 * (P + P.transpose());
}

}  // namespace sddr
