#include "asched/model.hpp"

#include <algorithm>
#include <cmath>

namespace asched {

void CensoringInterval::validate() const {
  if (!(l >= 0.0) || !(r >= l) || std::isnan(r))
    throw DataError("censoring interval must satisfy 0 <= l <= r");
}

void PatientHistory::validate() const {
  if (!std::isfinite(age_at_entry) || age_at_entry <= 0.0) throw DataError("age must be positive", -1, "age");
  for (std::size_t i = 0; i < psa.size(); ++i) {
    const auto& m = psa[i];
    if (!std::isfinite(m.time) || m.time < 0.0)
      throw DataError("PSA time must be nonnegative", static_cast<long>(i), "time_years");
    if (!std::isfinite(m.psa) || m.psa <= 0.0)
      throw DataError("PSA value must be positive", static_cast<long>(i), "psa_ng_ml");
    if (i > 0 && !(m.time > psa[i - 1].time))
      throw DataError("PSA times must be strictly increasing", static_cast<long>(i), "time_years");
  }
  for (std::size_t i = 0; i < biopsies.size(); ++i) {
    const auto& b = biopsies[i];
    if (!std::isfinite(b.time) || b.time <= 0.0)
      throw DataError("biopsy time must be positive", static_cast<long>(i), "biopsy_time_years");
    if (i > 0 && !(b.time > biopsies[i - 1].time))
      throw DataError("biopsy times must be strictly increasing", static_cast<long>(i), "biopsy_time_years");
    if (b.upgraded && i + 1 != biopsies.size())
      throw DataError("an upgraded biopsy must be the last biopsy", static_cast<long>(i), "upgraded");
  }
}

PatientHistory PatientHistory::truncated(double s) const {
  PatientHistory out{id, age_at_entry, {}, {}};
  for (const auto& m : psa)
    if (m.time <= s) out.psa.push_back(m);
  for (const auto& b : biopsies)
    if (b.time <= s) out.biopsies.push_back(b);
  return out;
}

CensoringInterval derive_interval(const PatientHistory& history) {
  const auto& bx = history.biopsies;
  if (bx.empty()) return {0.0, kInfinity};
  if (bx.back().upgraded) {
    const double l = bx.size() >= 2 ? bx[bx.size() - 2].time : 0.0;
    return {l, bx.back().time};
  }
  return {bx.back().time, kInfinity};
}

void validate(const BaselineHazard& baseline) {
  if (const auto* w = std::get_if<WeibullBaseline>(&baseline)) {
    if (!(w->shape > 0.0) || !(w->scale > 0.0)) throw DomainError("Weibull shape and scale must be positive");
    return;
  }
  const auto& p = std::get<PSplineBaseline>(baseline);
  p.basis.validate();
  if (p.coefficients.size() != p.basis.dimension())
    throw DomainError("P-spline coefficient count does not match the basis dimension");
  if (p.penalty_order < 1) throw DomainError("P-spline penalty order must be positive");
}

ModelSpec ModelSpec::prias() {
  ModelSpec spec;
  spec.fixed_time = TimeBasis::natural({0.1, 0.5, 4.0}, 0.0, 7.0);
  spec.random_time = TimeBasis::natural({0.1}, 0.0, 7.0);
  spec.functional_form = FunctionalForm::ValueAndSlope;
  spec.age_center = 70.0;
  spec.include_age_terms = true;
  return spec;
}

ModelSpec ModelSpec::linear_trend(FunctionalForm form) {
  ModelSpec spec;
  spec.fixed_time = TimeBasis::linear();
  spec.random_time = TimeBasis::linear();
  spec.functional_form = form;
  spec.include_age_terms = false;
  return spec;
}

std::vector<double> ModelSpec::breakpoints() const {
  std::vector<double> out;
  for (const TimeBasis* tb : {&fixed_time, &random_time}) {
    if (tb->kind() == TimeBasis::Kind::Linear) continue;
    const auto& s = tb->spline();
    out.push_back(s.low);
    out.insert(out.end(), s.internal_knots.begin(), s.internal_knots.end());
    out.push_back(s.high);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

void ModelSpec::validate() const {
  if (!(age_center > 0.0)) throw DomainError("age center must be positive");
}

void validate(const Theta& theta, const ModelSpec& spec) {
  if (theta.beta.size() != spec.fixed_dim()) throw DomainError("beta length does not match the fixed design");
  if (theta.gamma.size() != spec.gamma_dim()) throw DomainError("gamma length does not match the baseline covariates");
  if (theta.alpha.size() != spec.alpha_dim()) throw DomainError("alpha length does not match the functional form");
  if (!(theta.sigma2 > 0.0)) throw DomainError("sigma2 must be positive");
  const Eigen::Index q = spec.random_dim();
  if (theta.D.rows() != q || theta.D.cols() != q) throw DomainError("D has the wrong dimension");
  if (!theta.D.isApprox(theta.D.transpose(), 1e-10)) throw DomainError("D must be symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(theta.D, Eigen::EigenvaluesOnly);
  if (!(eig.eigenvalues().minCoeff() > 0.0)) throw DomainError("D must be positive definite");
  validate(theta.baseline);
}

Eigen::VectorXd baseline_covariates(double age, const ModelSpec& spec) {
  if (!spec.include_age_terms) return Eigen::VectorXd(0);
  const double a = age - spec.age_center;
  return Eigen::Vector2d(a, a * a);
}

DesignPoint design_at(double t, double age, const ModelSpec& spec) {
  DesignPoint d;
  const Eigen::Index pf = spec.fixed_dim();
  const Eigen::Index nt = spec.fixed_time.size();
  d.x.resize(pf);
  d.dx = Eigen::VectorXd::Zero(pf);
  d.x[0] = 1.0;
  if (spec.include_age_terms) {
    const double a = age - spec.age_center;
    d.x[1] = a;
    d.x[2] = a * a;
  }
  spec.fixed_time.evaluate(t, d.x.tail(nt), d.dx.tail(nt));

  const Eigen::Index q = spec.random_dim();
  d.z.resize(q);
  d.dz = Eigen::VectorXd::Zero(q);
  d.z[0] = 1.0;
  spec.random_time.evaluate(t, d.z.tail(q - 1), d.dz.tail(q - 1));
  return d;
}

Eigen::VectorXd psa_fixed_design(double t, double age, const ModelSpec& spec) {
  return design_at(t, age, spec).x;
}

Eigen::VectorXd psa_random_design(double t, const ModelSpec& spec) {
  return design_at(t, spec.age_center, spec).z;
}

namespace {

void check_dims(const Theta& theta, const RandomEffects& b, const ModelSpec& spec) {
  if (theta.beta.size() != spec.fixed_dim() || b.size() != spec.random_dim())
    throw DomainError("parameter dimensions do not match the model spec");
}

}  // namespace

double lmm_mean(double t, double age, const Theta& theta, const RandomEffects& b, const ModelSpec& spec) {
  check_dims(theta, b, spec);
  const DesignPoint d = design_at(t, age, spec);
  return d.x.dot(theta.beta) + d.z.dot(b);
}

double lmm_slope(double t, double age, const Theta& theta, const RandomEffects& b, const ModelSpec& spec) {
  check_dims(theta, b, spec);
  const DesignPoint d = design_at(t, age, spec);
  return d.dx.dot(theta.beta) + d.dz.dot(b);
}

double log_baseline_hazard(double t, const BaselineHazard& baseline) {
  if (!(t > 0.0)) throw DomainError("baseline hazard needs t > 0");
  if (const auto* w = std::get_if<WeibullBaseline>(&baseline))
    return std::log(w->shape / w->scale) + (w->shape - 1.0) * std::log(t / w->scale);
  const auto& p = std::get<PSplineBaseline>(baseline);
  const double tc = std::clamp(t, p.basis.low, p.basis.high);
  return p.intercept + bspline_basis(tc, p.basis).dot(p.coefficients);
}

double log_hazard(double t, double age, const Theta& theta, const RandomEffects& b, const ModelSpec& spec) {
  check_dims(theta, b, spec);
  const DesignPoint d = design_at(t, age, spec);
  double eta = log_baseline_hazard(t, theta.baseline);
  if (spec.include_age_terms) eta += theta.gamma.dot(baseline_covariates(age, spec));
  eta += theta.alpha[0] * (d.x.dot(theta.beta) + d.z.dot(b));
  if (spec.functional_form == FunctionalForm::ValueAndSlope)
    eta += theta.alpha[1] * (d.dx.dot(theta.beta) + d.dz.dot(b));
  return eta;
}

double hazard(double t, double age, const Theta& theta, const RandomEffects& b, const ModelSpec& spec) {
  return std::exp(log_hazard(t, age, theta, b, spec));
}

}  // namespace asched
