#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <string>
#include <variant>
#include <vector>

#include "asched/error.hpp"
#include "asched/spline.hpp"

namespace asched {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

struct PsaMeasurement {
  double time = 0.0;  // years since AS induction
  double psa = 1.0;   // ng/mL

  double log2_psa() const { return std::log2(psa); }
  friend bool operator==(const PsaMeasurement&, const PsaMeasurement&) = default;
};

struct BiopsyRecord {
  double time = 0.0;
  bool upgraded = false;  // Gleason > 6 found
  friend bool operator==(const BiopsyRecord&, const BiopsyRecord&) = default;
};

// (l, r]; r may be +inf (right-censored). l == r encodes an exactly observed
// event time, which simulated training data uses.
struct CensoringInterval {
  double l = 0.0;
  double r = kInfinity;

  bool right_censored() const { return std::isinf(r); }
  bool exact() const { return l == r; }
  void validate() const;
  friend bool operator==(const CensoringInterval&, const CensoringInterval&) = default;
};

struct PatientHistory {
  std::string id;
  double age_at_entry = 70.0;
  std::vector<PsaMeasurement> psa;
  std::vector<BiopsyRecord> biopsies;

  // Throws DataError naming the violated invariant.
  void validate() const;
  bool upgraded() const { return !biopsies.empty() && biopsies.back().upgraded; }
  double last_biopsy_time() const { return biopsies.empty() ? 0.0 : biopsies.back().time; }
  double last_psa_time() const { return psa.empty() ? 0.0 : psa.back().time; }
  // Measurements with time <= s.
  PatientHistory truncated(double s) const;

  friend bool operator==(const PatientHistory&, const PatientHistory&) = default;
};

// Interval implied by the biopsy stream; induction (t = 0) counts as the first
// negative biopsy.
CensoringInterval derive_interval(const PatientHistory& history);

enum class FunctionalForm { ValueOnly, ValueAndSlope };

struct WeibullBaseline {
  double shape = 1.0;  // k
  double scale = 1.0;  // lambda
  friend bool operator==(const WeibullBaseline&, const WeibullBaseline&) = default;
};

struct PSplineBaseline {
  SplineBasis basis;
  double intercept = 0.0;
  Eigen::VectorXd coefficients;
  int penalty_order = 2;

  friend bool operator==(const PSplineBaseline& a, const PSplineBaseline& b) {
    return a.basis == b.basis && a.intercept == b.intercept && a.penalty_order == b.penalty_order &&
           a.coefficients.size() == b.coefficients.size() && a.coefficients == b.coefficients;
  }
};

using BaselineHazard = std::variant<WeibullBaseline, PSplineBaseline>;

void validate(const BaselineHazard& baseline);

// Shrinkage hyperparameters sampled alongside the model parameters.
struct ShrinkageHyper {
  double tau_gamma = 1.0;
  Eigen::VectorXd psi_gamma;
  double tau_alpha = 1.0;
  Eigen::VectorXd psi_alpha;
  double tau_h = 1.0;
};

struct Theta {
  Eigen::VectorXd beta;
  Eigen::VectorXd gamma;  // baseline covariates: (age - c), (age - c)^2
  Eigen::VectorXd alpha;  // value [, slope]
  double sigma2 = 1.0;
  Eigen::MatrixXd D;
  BaselineHazard baseline = WeibullBaseline{};
  ShrinkageHyper hyper;
};

using RandomEffects = Eigen::VectorXd;

struct ModelSpec {
  TimeBasis fixed_time;
  TimeBasis random_time;
  FunctionalForm functional_form = FunctionalForm::ValueAndSlope;
  double age_center = 70.0;
  bool include_age_terms = true;

  // Natural cubic splines with knots {0.1, 0.5, 4} (fixed) and {0.1}
  // (random), boundary (0, 7); value and slope association.
  static ModelSpec prias();
  // Linear time trend, random intercept and slope, no age terms.
  static ModelSpec linear_trend(FunctionalForm form = FunctionalForm::ValueAndSlope);

  Eigen::Index fixed_dim() const { return (include_age_terms ? 3 : 1) + fixed_time.size(); }
  Eigen::Index random_dim() const { return 1 + random_time.size(); }
  Eigen::Index alpha_dim() const { return functional_form == FunctionalForm::ValueOnly ? 1 : 2; }
  Eigen::Index gamma_dim() const { return include_age_terms ? 2 : 0; }
  // Times where design derivatives may be discontinuous.
  std::vector<double> breakpoints() const;
  void validate() const;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

void validate(const Theta& theta, const ModelSpec& spec);

// Design rows and their time derivatives at one time point.
struct DesignPoint {
  Eigen::VectorXd x, dx, z, dz;
};

Eigen::VectorXd psa_fixed_design(double t, double age, const ModelSpec& spec);
Eigen::VectorXd psa_random_design(double t, const ModelSpec& spec);
DesignPoint design_at(double t, double age, const ModelSpec& spec);
// Baseline-covariate vector w (empty without age terms).
Eigen::VectorXd baseline_covariates(double age, const ModelSpec& spec);

double lmm_mean(double t, double age, const Theta& theta, const RandomEffects& b, const ModelSpec& spec);
double lmm_slope(double t, double age, const Theta& theta, const RandomEffects& b, const ModelSpec& spec);

double log_baseline_hazard(double t, const BaselineHazard& baseline);
double hazard(double t, double age, const Theta& theta, const RandomEffects& b, const ModelSpec& spec);
double log_hazard(double t, double age, const Theta& theta, const RandomEffects& b, const ModelSpec& spec);

}  // namespace asched
