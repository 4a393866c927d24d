#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "asched/error.hpp"

namespace asched {

// 15-point Kronrod extension of the 7-point Gauss-Legendre rule on [-1, 1],
// nodes in ascending order.
struct GaussKronrod15 {
  static constexpr int size = 15;
  static const std::array<double, 15>& nodes();
  static const std::array<double, 15>& kronrod_weights();
  // Gauss weights aligned with nodes(); zero at the Kronrod-only nodes.
  static const std::array<double, 15>& gauss_weights();
  // A(i, j) with  integral_{-1}^{x_i} f  ~=  sum_j A(i, j) f(x_j), from the
  // degree-14 interpolant through the nodes.
  static const Eigen::Matrix<double, 15, 15>& cumulative_matrix();
  // Row r with  integral_{-1}^{x} f  ~=  r . f(nodes)  for any x in [-1, 1].
  static Eigen::Matrix<double, 1, 15> cumulative_row(double x);
};

struct QuadratureResult {
  double value = 0.0;
  double error = 0.0;
};

template <typename F>
QuadratureResult gauss_kronrod15(F&& f, double a, double b) {
  const auto& x = GaussKronrod15::nodes();
  const auto& wk = GaussKronrod15::kronrod_weights();
  const auto& wg = GaussKronrod15::gauss_weights();
  const double half = 0.5 * (b - a);
  const double mid = 0.5 * (a + b);
  double k = 0.0, g = 0.0;
  for (int i = 0; i < 15; ++i) {
    const double fx = f(mid + half * x[i]);
    k += wk[i] * fx;
    g += wg[i] * fx;
  }
  return {k * half, std::abs((k - g) * half)};
}

namespace detail {

template <typename F>
double adaptive_panel(F& f, double a, double b, double tol, double rel_tol, int depth) {
  const QuadratureResult r = gauss_kronrod15(f, a, b);
  if (!std::isfinite(r.value)) throw NumericError("quadrature produced a non-finite value", "quadrature");
  if (r.error <= std::max(tol, rel_tol * std::abs(r.value)) || depth <= 0) return r.value;
  const double m = 0.5 * (a + b);
  return adaptive_panel(f, a, m, 0.5 * tol, rel_tol, depth - 1) +
         adaptive_panel(f, m, b, 0.5 * tol, rel_tol, depth - 1);
}

}  // namespace detail

/// Adaptive composite Gauss-Kronrod integral of f over [a, b]. The interval is
/// first split at every breakpoint strictly inside it; each panel is bisected
/// until its Kronrod-Gauss difference meets the tolerance.
template <typename F>
double integrate(F&& f, double a, double b, std::span<const double> breakpoints = {},
                 double abs_tol = 1e-13, double rel_tol = 1e-12, int max_depth = 60) {
  if (b < a) throw DomainError("integrate: upper limit below lower limit");
  if (b == a) return 0.0;
  std::vector<double> edges{a};
  for (double p : breakpoints)
    if (p > a && p < b) edges.push_back(p);
  edges.push_back(b);
  std::sort(edges.begin(), edges.end());
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < edges.size(); ++i) {
    const double w = edges[i + 1] - edges[i];
    if (w <= 0) continue;
    total += detail::adaptive_panel(f, edges[i], edges[i + 1], abs_tol * w / (b - a), rel_tol, max_depth);
  }
  return total;
}

// Fixed composite GK15 rule over [a, b]: panels split at breakpoints, capped
// at max_width, and geometrically graded towards a when a == 0 (resolves the
// t^(k-1) behaviour of Weibull hazards at the origin).
struct QuadratureMesh {
  std::vector<double> edges;
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;

  static QuadratureMesh build(double a, double b, std::span<const double> breakpoints,
                              double max_width = 0.5, int grading_levels = 4);

  Eigen::Index panels() const { return static_cast<Eigen::Index>(edges.size()) - 1; }
  Eigen::Index size() const { return nodes.size(); }
};

}  // namespace asched
