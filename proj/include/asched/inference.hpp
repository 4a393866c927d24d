#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "asched/model.hpp"

namespace asched {

struct PriorConfig {
  double beta_var = 100.0;
  double sigma2_shape = 0.01;
  double sigma2_rate = 0.01;
  int wishart_df = 0;  // 0 selects q
  double ridge_tau_shape = 0.1;
  double ridge_tau_rate = 0.1;
  double ridge_psi_shape = 1.0;
  double ridge_psi_rate = 0.01;
  double pspline_tau_shape = 1.0;
  double pspline_tau_rate = 0.005;
  double pspline_ridge_eps = 1e-6;
  // Variance of the normal priors on log k and log lambda of a Weibull baseline.
  double weibull_log_var = 100.0;

  void validate() const;
  double wishart_dof(Eigen::Index q) const { return wishart_df > 0 ? wishart_df : static_cast<double>(q); }
  friend bool operator==(const PriorConfig&, const PriorConfig&) = default;
};

struct PatientRecord {
  PatientHistory history;
  CensoringInterval interval;
  friend bool operator==(const PatientRecord&, const PatientRecord&) = default;
};

struct Dataset {
  std::vector<PatientRecord> patients;

  // Interval derived from each biopsy stream.
  static Dataset from_histories(const std::vector<PatientHistory>& histories);
  // Histories valid, at least one PSA value each, intervals valid.
  void validate() const;
  std::size_t size() const { return patients.size(); }
};

enum class BaselineKind { Weibull, PSpline };

struct McmcConfig {
  int chains = 2;
  int iterations = 3000;
  int burn_in = 1000;
  int thin = 2;
  int adapt_start = 100;  // iteration at which proposal covariances start adapting
  std::uint64_t seed = 1;

  BaselineKind baseline = BaselineKind::PSpline;
  int pspline_knots = 15;
  double pspline_horizon = 0.0;  // 0: largest finite interval endpoint

  // Switches for checks against closed-form sub-cases.
  bool survival = true;                // false: alpha fixed at 0, no event likelihood
  std::optional<double> fixed_sigma2;  // hold sigma2 at this value
  std::optional<Eigen::MatrixXd> fixed_D;
  bool store_random_effects = true;

  void validate() const;
  int draws_per_chain() const { return (iterations - burn_in) / thin; }
};

struct PenaltyMatrix {
  Eigen::MatrixXd K;
  int rank = 0;  // rank of the difference penalty, Q - order

  static PenaltyMatrix build(Eigen::Index q, int order, double eps);
};

struct Diagnostics {
  std::vector<std::string> names;
  Eigen::VectorXd rhat;  // empty with a single chain
  Eigen::VectorXd ess;
  // Acceptance rate per sampler block, in block order.
  std::vector<std::pair<std::string, double>> acceptance;
};

struct Draw {
  Theta theta;
  std::vector<RandomEffects> b;  // empty unless random effects are stored
};

struct PosteriorSamples {
  std::vector<Draw> draws;  // chain-major
  int chains = 1;
  ModelSpec spec;
  PriorConfig priors;
  Diagnostics diagnostics;
  std::uint64_t seed = 0;

  std::size_t size() const { return draws.size(); }
  std::size_t draws_per_chain() const { return chains > 0 ? draws.size() / static_cast<std::size_t>(chains) : 0; }
};

// Gaussian log-density of the log2 PSA residuals.
double long_loglik(const PatientHistory& patient, const Theta& theta, const RandomEffects& b, const ModelSpec& spec);

// Times where the hazard may not be smooth: spline boundaries and knots of
// the design and of a P-spline baseline.
std::vector<double> hazard_breakpoints(const Theta& theta, const ModelSpec& spec);

// H over [t0, t1] by adaptive composite Gauss-Kronrod.
double cumulative_hazard(double age, const Theta& theta, const RandomEffects& b, const ModelSpec& spec, double t0,
                         double t1);

double surv_loglik_interval(const CensoringInterval& interval, double age, const Theta& theta,
                            const RandomEffects& b, const ModelSpec& spec);

double ranef_logprior(const RandomEffects& b, const Eigen::MatrixXd& D);

// All prior terms including the shrinkage and smoothing hyperparameters. A
// P-spline penalty is built from the baseline when none is given.
double theta_logprior(const Theta& theta, const PriorConfig& priors, const PenaltyMatrix* penalty = nullptr);

double log_posterior(const Theta& theta, const std::vector<RandomEffects>& b, const Dataset& data,
                     const ModelSpec& spec, const PriorConfig& priors);

PosteriorSamples run_mcmc(const Dataset& data, const ModelSpec& spec, const PriorConfig& priors,
                          const McmcConfig& config);

// Scalar view of a draw used for diagnostics and summaries.
Eigen::VectorXd flatten(const Theta& theta);
std::vector<std::string> parameter_names(const Theta& theta);

// chains: one column per chain, one row per draw.
double rhat(const Eigen::MatrixXd& chains);
double effective_sample_size(const Eigen::MatrixXd& chains);
Diagnostics diagnostics(const PosteriorSamples& samples);

// Posterior mean of every scalar parameter.
Eigen::VectorXd posterior_mean(const PosteriorSamples& samples);

}  // namespace asched
