#include <algorithm>
#include <cmath>

#include "asched/inference.hpp"
#include "asched/quadrature.hpp"

namespace asched {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

double normal_logpdf(double x, double var) { return -0.5 * (kLog2Pi + std::log(var) + x * x / var); }

// Gamma(shape, rate) log-density.
double gamma_logpdf(double x, double shape, double rate) {
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) - rate * x;
}

double log_multigamma(double a, Eigen::Index q) {
  double out = 0.25 * static_cast<double>(q * (q - 1)) * std::log(M_PI);
  for (Eigen::Index j = 0; j < q; ++j) out += std::lgamma(a - 0.5 * static_cast<double>(j));
  return out;
}

// Inverse-Wishart IW(df, I) log-density.
double inverse_wishart_logpdf(const Eigen::MatrixXd& d, double df) {
  const Eigen::Index q = d.rows();
  Eigen::LLT<Eigen::MatrixXd> llt(d);
  if (llt.info() != Eigen::Success) throw DomainError("D must be positive definite");
  const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  const double trace_inv = llt.solve(Eigen::MatrixXd::Identity(q, q)).trace();
  return -0.5 * df * static_cast<double>(q) * std::log(2.0) - log_multigamma(0.5 * df, q) -
         0.5 * (df + static_cast<double>(q) + 1.0) * logdet - 0.5 * trace_inv;
}

// Ridge terms: x_s ~ N(0, tau psi_s), 1/tau ~ Gamma, 1/psi_s ~ Gamma.
double ridge_logprior(const Eigen::VectorXd& x, double tau, const Eigen::VectorXd& psi, const PriorConfig& p) {
  if (x.size() == 0) return 0.0;
  double out = gamma_logpdf(1.0 / tau, p.ridge_tau_shape, p.ridge_tau_rate);
  for (Eigen::Index s = 0; s < x.size(); ++s) {
    const double ps = psi.size() == x.size() ? psi[s] : 1.0;
    out += normal_logpdf(x[s], tau * ps) + gamma_logpdf(1.0 / ps, p.ridge_psi_shape, p.ridge_psi_rate);
  }
  return out;
}

}  // namespace

void PriorConfig::validate() const {
  for (double v : {beta_var, sigma2_shape, sigma2_rate, ridge_tau_shape, ridge_tau_rate, ridge_psi_shape,
                   ridge_psi_rate, pspline_tau_shape, pspline_tau_rate, pspline_ridge_eps, weibull_log_var})
    if (!(v > 0.0) || !std::isfinite(v)) throw DomainError("prior hyperparameters must be positive");
  if (wishart_df < 0) throw DomainError("Wishart degrees of freedom must be positive");
}

Dataset Dataset::from_histories(const std::vector<PatientHistory>& histories) {
  Dataset out;
  for (const auto& h : histories) out.patients.push_back({h, derive_interval(h)});
  return out;
}

void Dataset::validate() const {
  for (std::size_t i = 0; i < patients.size(); ++i) {
    const auto& p = patients[i];
    p.history.validate();
    if (p.history.psa.empty()) throw DataError("patient " + p.history.id + " has no PSA measurements", static_cast<long>(i));
    p.interval.validate();
    if (!p.history.biopsies.empty() && !(derive_interval(p.history) == p.interval))
      throw DataError("patient " + p.history.id + " interval does not match its biopsies", static_cast<long>(i));
  }
}

void McmcConfig::validate() const {
  if (chains < 1) throw UsageError("at least one chain is required");
  if (!(burn_in >= 0 && burn_in < iterations)) throw UsageError("burn-in must be below the iteration count");
  if (thin < 1) throw UsageError("thin must be at least 1");
  if (pspline_knots < 1) throw UsageError("P-spline knot count must be positive");
}

PenaltyMatrix PenaltyMatrix::build(Eigen::Index q, int order, double eps) {
  if (order < 1 || order >= q) throw DomainError("penalty order must be in [1, Q)");
  Eigen::MatrixXd delta = Eigen::MatrixXd::Identity(q, q);
  for (int k = 0; k < order; ++k) {
    const Eigen::Index r = delta.rows();
    delta = (delta.bottomRows(r - 1) - delta.topRows(r - 1)).eval();
  }
  PenaltyMatrix out;
  out.K = delta.transpose() * delta + eps * Eigen::MatrixXd::Identity(q, q);
  out.rank = static_cast<int>(q) - order;
  return out;
}

double long_loglik(const PatientHistory& patient, const Theta& theta, const RandomEffects& b, const ModelSpec& spec) {
  if (patient.psa.empty()) throw DataError("longitudinal likelihood needs at least one PSA value");
  double out = 0.0;
  for (const auto& m : patient.psa) {
    const double y = m.log2_psa();
    if (!std::isfinite(y)) throw DataError("non-finite log2 PSA", -1, "psa_ng_ml");
    const double r = y - lmm_mean(m.time, patient.age_at_entry, theta, b, spec);
    out += -0.5 * (kLog2Pi + std::log(theta.sigma2)) - 0.5 * r * r / theta.sigma2;
  }
  return out;
}

std::vector<double> hazard_breakpoints(const Theta& theta, const ModelSpec& spec) {
  std::vector<double> out = spec.breakpoints();
  if (const auto* p = std::get_if<PSplineBaseline>(&theta.baseline)) {
    out.push_back(p->basis.low);
    out.insert(out.end(), p->basis.internal_knots.begin(), p->basis.internal_knots.end());
    out.push_back(p->basis.high);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

double cumulative_hazard(double age, const Theta& theta, const RandomEffects& b, const ModelSpec& spec, double t0,
                         double t1) {
  if (!(t0 >= 0.0)) throw DomainError("cumulative hazard needs t0 >= 0");
  if (t1 < t0) throw DomainError("cumulative hazard needs t1 >= t0");
  if (std::isinf(t1)) throw DomainError("cumulative hazard needs a finite upper limit");
  const std::vector<double> cuts = hazard_breakpoints(theta, spec);
  return integrate([&](double t) { return hazard(t, age, theta, b, spec); }, t0, t1, cuts);
}

double surv_loglik_interval(const CensoringInterval& interval, double age, const Theta& theta,
                            const RandomEffects& b, const ModelSpec& spec) {
  interval.validate();
  const double hl = cumulative_hazard(age, theta, b, spec, 0.0, interval.l);
  if (interval.right_censored()) return -hl;
  if (interval.exact()) return log_hazard(interval.l, age, theta, b, spec) - hl;
  const double hlr = cumulative_hazard(age, theta, b, spec, interval.l, interval.r);
  if (!(hlr > 0.0)) throw NumericError("interval probability is not positive", "quadrature");
  return -hl + std::log(-std::expm1(-hlr));
}

double ranef_logprior(const RandomEffects& b, const Eigen::MatrixXd& D) {
  if (D.rows() != b.size() || D.cols() != b.size()) throw DomainError("D does not match the random effects");
  Eigen::LLT<Eigen::MatrixXd> llt(D);
  if (llt.info() != Eigen::Success) throw DomainError("D must be positive definite");
  const Eigen::VectorXd u = llt.matrixL().solve(b);
  const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  return -0.5 * u.squaredNorm() - 0.5 * (static_cast<double>(b.size()) * kLog2Pi + logdet);
}

double theta_logprior(const Theta& theta, const PriorConfig& priors, const PenaltyMatrix* penalty) {
  double out = 0.0;
  for (Eigen::Index j = 0; j < theta.beta.size(); ++j) out += normal_logpdf(theta.beta[j], priors.beta_var);
  // sigma2 ~ IG(a, b)
  out += priors.sigma2_shape * std::log(priors.sigma2_rate) - std::lgamma(priors.sigma2_shape) -
         (priors.sigma2_shape + 1.0) * std::log(theta.sigma2) - priors.sigma2_rate / theta.sigma2;
  out += inverse_wishart_logpdf(theta.D, priors.wishart_dof(theta.D.rows()));
  const auto& h = theta.hyper;
  out += ridge_logprior(theta.gamma, h.tau_gamma, h.psi_gamma, priors);
  out += ridge_logprior(theta.alpha, h.tau_alpha, h.psi_alpha, priors);

  if (const auto* w = std::get_if<WeibullBaseline>(&theta.baseline)) {
    out += normal_logpdf(std::log(w->shape), priors.weibull_log_var) +
           normal_logpdf(std::log(w->scale), priors.weibull_log_var);
  } else {
    const auto& p = std::get<PSplineBaseline>(theta.baseline);
    PenaltyMatrix local;
    if (penalty == nullptr) {
      local = PenaltyMatrix::build(p.coefficients.size(), p.penalty_order, priors.pspline_ridge_eps);
      penalty = &local;
    }
    if (penalty->K.rows() != p.coefficients.size()) throw DomainError("penalty does not match the P-spline basis");
    // tau_h^{rho/2} exp(-tau_h/2 g'Kg), normalizing constant in K omitted.
    out += 0.5 * penalty->rank * std::log(h.tau_h) -
           0.5 * h.tau_h * p.coefficients.dot(penalty->K * p.coefficients);
    out += gamma_logpdf(h.tau_h, priors.pspline_tau_shape, priors.pspline_tau_rate);
  }
  return out;
}

double log_posterior(const Theta& theta, const std::vector<RandomEffects>& b, const Dataset& data,
                     const ModelSpec& spec, const PriorConfig& priors) {
  if (b.size() != data.size()) throw DomainError("one random-effects vector per patient is required");
  double out = theta_logprior(theta, priors);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& p = data.patients[i];
    out += long_loglik(p.history, theta, b[i], spec) +
           surv_loglik_interval(p.interval, p.history.age_at_entry, theta, b[i], spec) +
           ranef_logprior(b[i], theta.D);
  }
  return out;
}

}  // namespace asched
