#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>

#include "asched/model.hpp"

namespace asched::detail {

// Design rows at a fixed set of time points, for evaluating the linear
// predictor of the hazard over many (theta, b) pairs.
struct NodeDesign {
  Eigen::VectorXd t, log_t;
  Eigen::MatrixXd X, dX, Z, dZ;
  double age = 70.0;
  Eigen::VectorXd w;

  NodeDesign() = default;
  NodeDesign(const Eigen::VectorXd& nodes, double age_, const ModelSpec& spec) : t(nodes), age(age_) {
    const Eigen::Index m = nodes.size();
    log_t = nodes.array().log().matrix();
    X.resize(m, spec.fixed_dim());
    dX.resize(m, spec.fixed_dim());
    Z.resize(m, spec.random_dim());
    dZ.resize(m, spec.random_dim());
    for (Eigen::Index i = 0; i < m; ++i) {
      const DesignPoint d = design_at(nodes[i], age, spec);
      X.row(i) = d.x.transpose();
      dX.row(i) = d.dx.transpose();
      Z.row(i) = d.z.transpose();
      dZ.row(i) = d.dz.transpose();
    }
    w = baseline_covariates(age, spec);
  }

  Eigen::Index size() const { return t.size(); }

  Eigen::VectorXd log_baseline(const BaselineHazard& baseline) const {
    if (const auto* wb = std::get_if<WeibullBaseline>(&baseline)) {
      const double lk = std::log(wb->shape), ll = std::log(wb->scale);
      return ((lk - ll) + (wb->shape - 1.0) * (log_t.array() - ll)).matrix();
    }
    const auto& p = std::get<PSplineBaseline>(baseline);
    if (!basis_rows || !(basis_rows->first == p.basis)) {
      Eigen::MatrixXd b(size(), p.basis.dimension());
      for (Eigen::Index i = 0; i < size(); ++i)
        b.row(i) = bspline_basis(std::clamp(t[i], p.basis.low, p.basis.high), p.basis).transpose();
      basis_rows.emplace(p.basis, std::move(b));
    }
    return (p.intercept + (basis_rows->second * p.coefficients).array()).matrix();
  }

  // Linear predictor without the random-effects part.
  Eigen::VectorXd fixed_eta(const Theta& theta, const ModelSpec& spec) const {
    Eigen::VectorXd eta = log_baseline(theta.baseline);
    if (w.size() > 0) eta.array() += w.dot(theta.gamma);
    eta += theta.alpha[0] * (X * theta.beta);
    if (spec.functional_form == FunctionalForm::ValueAndSlope) eta += theta.alpha[1] * (dX * theta.beta);
    return eta;
  }

  // Random-effects part of the linear predictor.
  Eigen::VectorXd random_eta(const Theta& theta, const RandomEffects& b, const ModelSpec& spec) const {
    Eigen::VectorXd eta = theta.alpha[0] * (Z * b);
    if (spec.functional_form == FunctionalForm::ValueAndSlope) eta += theta.alpha[1] * (dZ * b);
    return eta;
  }

  mutable std::optional<std::pair<SplineBasis, Eigen::MatrixXd>> basis_rows;
};

}  // namespace asched::detail
