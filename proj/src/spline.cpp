#include "asched/spline.hpp"

#include <cmath>

namespace asched {

void SplineBasis::validate() const {
  if (degree < 0) throw DomainError("spline degree must be nonnegative");
  if (!(low < high)) throw DomainError("spline boundary must satisfy low < high");
  double prev = low;
  for (double k : internal_knots) {
    if (!(k > prev)) throw DomainError("spline internal knots must be strictly increasing inside the boundary");
    prev = k;
  }
  if (!internal_knots.empty() && !(internal_knots.back() < high))
    throw DomainError("spline internal knots must lie strictly inside the boundary");
}

std::vector<double> SplineBasis::knot_vector() const {
  std::vector<double> knots;
  knots.reserve(internal_knots.size() + 2 * (degree + 1));
  knots.insert(knots.end(), degree + 1, low);
  knots.insert(knots.end(), internal_knots.begin(), internal_knots.end());
  knots.insert(knots.end(), degree + 1, high);
  return knots;
}

NaturalSplineBasis::NaturalSplineBasis(std::vector<double> internal_knots, double low, double high)
    : cubic_{3, std::move(internal_knots), low, high} {
  cubic_.validate();
  const Eigen::Index n = cubic_.dimension() - 1;
  Eigen::MatrixXd constraints(n, 2);
  constraints.col(0) = bspline_basis_derivative(low, cubic_, 2).tail(n);
  constraints.col(1) = bspline_basis_derivative(high, cubic_, 2).tail(n);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(constraints);
  const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, n);
  projection_ = q.rightCols(n - 2).transpose();
}

Eigen::VectorXd NaturalSplineBasis::values(double t) const {
  const Eigen::VectorXd b = bspline_basis(t, cubic_);
  return projection_ * b.tail(b.size() - 1);
}

Eigen::VectorXd NaturalSplineBasis::derivatives(double t) const {
  const Eigen::VectorXd b = bspline_basis_derivative(t, cubic_, 1);
  return projection_ * b.tail(b.size() - 1);
}

TimeBasis TimeBasis::linear() { return TimeBasis{}; }

TimeBasis TimeBasis::bspline(SplineBasis basis) {
  basis.validate();
  if (basis.dimension() < 2) throw DomainError("intercept-excluded B-spline needs at least two functions");
  TimeBasis out;
  out.kind_ = Kind::BSpline;
  out.spline_ = std::move(basis);
  return out;
}

TimeBasis TimeBasis::natural(std::vector<double> internal_knots, double low, double high) {
  TimeBasis out;
  out.kind_ = Kind::Natural;
  out.natural_ = NaturalSplineBasis(std::move(internal_knots), low, high);
  out.spline_ = out.natural_.cubic();
  return out;
}

Eigen::Index TimeBasis::size() const {
  switch (kind_) {
    case Kind::Linear: return 1;
    case Kind::BSpline: return spline_.dimension() - 1;
    case Kind::Natural: return natural_.size();
  }
  return 0;
}

void TimeBasis::evaluate(double t, Eigen::Ref<Eigen::VectorXd> value,
                         Eigen::Ref<Eigen::VectorXd> slope) const {
  if (kind_ == Kind::Linear) {
    value[0] = t;
    slope[0] = 1.0;
    return;
  }
  const bool outside = t < spline_.low || t > spline_.high;
  const double tc = std::clamp(t, spline_.low, spline_.high);
  if (kind_ == Kind::BSpline) {
    const Eigen::Index n = spline_.dimension() - 1;
    value = bspline_basis(tc, spline_).tail(n);
    if (outside)
      slope.setZero();
    else
      slope = bspline_basis_derivative(tc, spline_, 1).tail(n);
  } else {
    value = natural_.values(tc);
    if (outside)
      slope.setZero();
    else
      slope = natural_.derivatives(tc);
  }
}

}  // namespace asched
