#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstddef>
#include <vector>

#include "asched/error.hpp"

namespace asched {

// Clamped B-spline basis: boundary knots repeated degree+1 times.
struct SplineBasis {
  int degree = 3;
  std::vector<double> internal_knots;
  double low = 0.0;
  double high = 1.0;

  void validate() const;
  Eigen::Index dimension() const {
    return static_cast<Eigen::Index>(internal_knots.size()) + degree + 1;
  }
  std::vector<double> knot_vector() const;
  bool contains(double t) const { return t >= low && t <= high; }

  friend bool operator==(const SplineBasis&, const SplineBasis&) = default;
};

namespace detail {

// Index i with knots[i] <= t < knots[i+1], restricted to non-empty spans;
// t equal to the last knot maps onto the last non-empty span.
inline std::size_t find_span(const std::vector<double>& knots, int degree, double t) {
  const std::size_t n = knots.size() - degree - 1;
  if (t >= knots[n]) {
    std::size_t i = n - 1;
    while (i > static_cast<std::size_t>(degree) && knots[i] == knots[i + 1]) --i;
    return i;
  }
  auto it = std::upper_bound(knots.begin() + degree, knots.begin() + n + 1, t);
  return static_cast<std::size_t>(it - knots.begin()) - 1;
}

// All knots.size()-degree-1 basis functions of the given degree at t,
// evaluated with the de Boor triangular scheme.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> basis_values(const std::vector<double>& knots, int degree,
                                                      Scalar t) {
  const Eigen::Index n = static_cast<Eigen::Index>(knots.size()) - degree - 1;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(n);
  const std::size_t span = find_span(knots, degree, static_cast<double>(t));

  std::vector<Scalar> local(degree + 1, Scalar(0));
  std::vector<Scalar> left(degree + 1, Scalar(0));
  std::vector<Scalar> right(degree + 1, Scalar(0));
  local[0] = Scalar(1);
  for (int j = 1; j <= degree; ++j) {
    left[j] = t - knots[span + 1 - j];
    right[j] = knots[span + j] - t;
    Scalar saved(0);
    for (int r = 0; r < j; ++r) {
      const Scalar denom = right[r + 1] + left[j - r];
      const Scalar temp = local[r] / denom;
      local[r] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    local[j] = saved;
  }
  for (int j = 0; j <= degree; ++j) out[static_cast<Eigen::Index>(span) - degree + j] = local[j];
  return out;
}

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> basis_derivatives(const std::vector<double>& knots,
                                                           int degree, int order, Scalar t) {
  const Eigen::Index n = static_cast<Eigen::Index>(knots.size()) - degree - 1;
  if (order == 0) return basis_values<Scalar>(knots, degree, t);
  if (order > degree) return Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(n);
  const auto lower = basis_derivatives<Scalar>(knots, degree - 1, order - 1, t);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double d1 = knots[j + degree] - knots[j];
    const double d2 = knots[j + degree + 1] - knots[j + 1];
    Scalar v(0);
    if (d1 > 0) v += lower[j] / d1;
    if (d2 > 0) v -= lower[j + 1] / d2;
    out[j] = Scalar(degree) * v;
  }
  return out;
}

}  // namespace detail

/// Values of every basis function at t. Throws DomainError outside the
/// boundary; extrapolation is the caller's decision.
template <typename Scalar = double>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> bspline_basis(Scalar t, const SplineBasis& basis) {
  if (!basis.contains(static_cast<double>(t)))
    throw DomainError("bspline_basis: t outside spline boundary");
  return detail::basis_values<Scalar>(basis.knot_vector(), basis.degree, t);
}

/// d^order/dt^order of every basis function at t.
template <typename Scalar = double>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> bspline_basis_derivative(Scalar t, const SplineBasis& basis,
                                                                  int order = 1) {
  if (!basis.contains(static_cast<double>(t)))
    throw DomainError("bspline_basis_derivative: t outside spline boundary");
  return detail::basis_derivatives<Scalar>(basis.knot_vector(), basis.degree, order, t);
}

// Natural cubic spline basis without intercept: the cubic B-spline basis
// minus its first function, projected onto the subspace with zero second
// derivative at both boundary knots. Same construction as R's splines::ns.
class NaturalSplineBasis {
 public:
  NaturalSplineBasis() = default;
  NaturalSplineBasis(std::vector<double> internal_knots, double low, double high);

  Eigen::Index size() const { return projection_.rows(); }
  const SplineBasis& cubic() const { return cubic_; }

  Eigen::VectorXd values(double t) const;
  Eigen::VectorXd derivatives(double t) const;

 private:
  SplineBasis cubic_;
  Eigen::MatrixXd projection_;
};

// Time-dependent block of a design vector. Spline kinds hold their boundary
// value constant outside the boundary (slope zero there).
class TimeBasis {
 public:
  enum class Kind { Linear, BSpline, Natural };

  static TimeBasis linear();
  // Clamped B-spline with the first function dropped (absorbed by an intercept).
  static TimeBasis bspline(SplineBasis basis);
  static TimeBasis natural(std::vector<double> internal_knots, double low, double high);

  Kind kind() const { return kind_; }
  Eigen::Index size() const;
  const SplineBasis& spline() const { return spline_; }

  void evaluate(double t, Eigen::Ref<Eigen::VectorXd> value, Eigen::Ref<Eigen::VectorXd> slope) const;

  friend bool operator==(const TimeBasis& a, const TimeBasis& b) {
    return a.kind_ == b.kind_ && a.spline_ == b.spline_;
  }

 private:
  Kind kind_ = Kind::Linear;
  SplineBasis spline_;
  NaturalSplineBasis natural_;
};

}  // namespace asched
