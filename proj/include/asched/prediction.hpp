#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <vector>

#include "asched/inference.hpp"
#include "asched/quadrature.hpp"

namespace asched {

// A patient still in surveillance: no reclassification at the last biopsy
// (time t) and PSA known up to time s.
struct NewPatientState {
  PatientHistory history;
  double t = 0.0;
  double s = 0.0;

  // t = last (negative) biopsy time or 0, s = last PSA time.
  static NewPatientState from_history(const PatientHistory& history);
  void validate() const;
};

struct PredictionConfig {
  int theta_draws = 200;
  int b_per_theta = 5;
  int burn_in = 50;  // Metropolis steps before the first kept b-draw
  int thin = 10;     // steps between kept b-draws
  double horizon = 20.0;
  double tail_cap = 0.05;
  double root_tol = 1e-4;
  double panel_width = 0.5;
  std::uint64_t seed = 1;

  void validate() const;
};

struct PredictivePair {
  std::size_t theta;  // index into PredictivePosterior::thetas()
  RandomEffects b;
};

// Paired (theta, b) draws for one patient together with hazard tables on a
// fixed Gauss-Kronrod mesh over [t, horizon]. Immutable after construction.
class PredictivePosterior {
 public:
  PredictivePosterior(NewPatientState state, ModelSpec spec, std::vector<Theta> thetas,
                      std::vector<PredictivePair> pairs, double horizon = 20.0, double tail_cap = 0.05,
                      double root_tol = 1e-4, double panel_width = 0.5);

  const NewPatientState& state() const { return state_; }
  const ModelSpec& spec() const { return spec_; }
  const std::vector<Theta>& thetas() const { return thetas_; }
  const std::vector<PredictivePair>& pairs() const { return pairs_; }
  std::size_t size() const { return pairs_.size(); }
  double horizon() const { return horizon_; }
  double tail_cap() const { return tail_cap_; }
  double root_tol() const { return root_tol_; }

  // H_j(u) - H_j(t) for every pair.
  Eigen::VectorXd conditional_cumulative_hazard(double u) const;
  // pi(u | t, s) at the mesh nodes, and the mesh itself.
  const Eigen::VectorXd& node_survival() const { return node_survival_; }
  const QuadratureMesh& mesh() const { return mesh_; }

 private:
  NewPatientState state_;
  ModelSpec spec_;
  std::vector<Theta> thetas_;
  std::vector<PredictivePair> pairs_;
  double horizon_, tail_cap_, root_tol_;

  QuadratureMesh mesh_;
  Eigen::MatrixXd node_hazard_;  // mesh nodes x pairs
  Eigen::MatrixXd edge_cumulative_;  // panel edges x pairs, from t
  Eigen::VectorXd node_survival_;
};

// Draws b for each retained theta from p(b | T* > t, PSA up to s, theta).
PredictivePosterior sample_subject_effects(const NewPatientState& state, const PosteriorSamples& posterior,
                                           const PredictionConfig& config = {});

double dynamic_survival(double u, const PredictivePosterior& pp);

struct SurvivalInverse {
  double u = 0.0;
  bool censored_at_horizon = false;
};
SurvivalInverse survival_inverse(double p, const PredictivePosterior& pp);

struct TimeMoment {
  double value = 0.0;
  bool tail_dominated = false;
  double tail_bound = 0.0;  // horizon * pi(horizon)
};
TimeMoment expected_gr_time(const PredictivePosterior& pp);
TimeMoment variance_gr_time(const PredictivePosterior& pp);
SurvivalInverse quantile_gr_time(double q, const PredictivePosterior& pp);

struct SurvivalCurve {
  std::vector<double> u;
  std::vector<double> prob;
};
SurvivalCurve survival_curve(const PredictivePosterior& pp, double from, double to, int points);

struct PsaBand {
  double time = 0.0;
  double mean = 0.0, lower = 0.0, upper = 0.0;  // log2 PSA; 2.5% and 97.5% over pairs
};
std::vector<PsaBand> fitted_psa_curve(const PredictivePosterior& pp, const std::vector<double>& grid);

}  // namespace asched
