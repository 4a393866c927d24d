#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "asched/defaults.hpp"
#include "asched/inference.hpp"
#include "asched/random.hpp"
#include "asched/scheduling.hpp"

namespace asched {

struct SubgroupSpec {
  double shape = 1.0;
  double scale = 1.0;
};

// PSA every 3 months for the first two years, every 6 months afterwards.
std::vector<double> psa_visit_times(double until);
// First visit time strictly after s.
double next_visit_after(double s);

struct SimConfig {
  int n_datasets = 20;
  int n_patients = 250;
  double train_fraction = 0.75;
  double horizon = 20.0;
  double censoring_max = 20.0;  // C ~ U(0, censoring_max]
  double age_mean = 70.0;
  double age_sd = 7.0;
  std::uint64_t seed = 1;
  std::vector<SubgroupSpec> subgroups{{1.5, 4.0}, {3.0, 5.0}, {4.5, 6.0}};
  ModelSpec spec = ModelSpec::prias();
  Theta theta_true = prias_posterior_means();  // baseline replaced per subgroup

  int n_train() const { return static_cast<int>(n_patients * train_fraction); }
  int n_test() const { return n_patients - n_train(); }
  void validate() const;
};

struct TruePatient {
  int subgroup = 0;
  double age = 70.0;
  RandomEffects b;
  double t_star = 0.0;                                     // +inf if beyond ten horizons
  double censoring = std::numeric_limits<double>::infinity();  // training patients only
  std::vector<PsaMeasurement> psa;                         // full stream over the horizon

  // Measurements up to and including time s.
  PatientHistory history_until(const std::string& id, double s) const;
};

struct SimulatedDataset {
  Dataset train;
  std::vector<TruePatient> train_truth;
  std::vector<TruePatient> test;
};

// Solves H(0, T) = -log(u). Returns +inf when H(0, 10 * horizon) < -log(u).
double gr_time_from_uniform(double u, double age, const Theta& theta, const RandomEffects& b, const ModelSpec& spec,
                            double horizon = 20.0);
double draw_true_gr_time(double age, const Theta& theta, const RandomEffects& b, const ModelSpec& spec, Rng& rng,
                         double horizon = 20.0);

// Theta of the simulated population for one subgroup.
Theta subgroup_theta(const SimConfig& config, int subgroup);

// Dataset k of the study, from its own substreams of the master seed.
SimulatedDataset simulate_dataset(const SimConfig& config, int dataset_index);

struct ScheduleOutcome {
  int n_biopsies = 0;
  double offset = 0.0;     // years
  double detection = 0.0;  // time of the detecting biopsy
  bool detected = false;
  std::vector<double> biopsy_times;
};

// Supplies personalized proposals during the visit loop.
class ProposalSource {
 public:
  virtual ~ProposalSource() = default;
  // Proposal at a visit for the patient with the given history, last biopsy
  // t and last PSA s.
  virtual ScheduleProposal propose(const PolicyKind& policy, const PatientHistory& history, double t, double s) = 0;
};

// Proposals from a fitted posterior. The proposals of every registered
// policy are computed together and cached per (patient, t, s); kappa
// selections are cached per decision time.
class PosteriorProposals : public ProposalSource {
 public:
  struct Budget {
    PredictionConfig patient;  // per-visit predictive posterior
    PredictionConfig cohort;   // kappa-selection cohort
    double delta_t = 1.0;
    double kappa_time_grid = 0.25;
  };

  // cohort: observed data defining the kappa-selection sets at each
  // landmark; policies: every policy that will ask for proposals.
  PosteriorProposals(const PosteriorSamples& posterior, Dataset cohort,
                     std::vector<PolicyKind> policies, Budget budget);

  ScheduleProposal propose(const PolicyKind& policy, const PatientHistory& history, double t, double s) override;
  KappaSelection kappa_at(KappaObjective objective, double t);
  const PosteriorSamples& posterior() const { return posterior_; }

 private:
  struct Entry {
    std::map<std::string, ScheduleProposal> proposals;  // by policy id
  };
  const Entry& entry(const PatientHistory& history, double t, double s);
  double kappa_for(const KappaSource& source, double t);

  const PosteriorSamples& posterior_;
  Dataset cohort_;
  std::vector<PolicyKind> policies_;
  Budget budget_;
  std::map<std::tuple<std::string, double, double>, Entry> cache_;
  std::map<long, std::vector<CohortPoint>> cohorts_;
  std::map<std::pair<long, int>, KappaSelection> kappas_;
};

// Runs one policy through the visit loop against a simulated truth.
ScheduleOutcome run_policy(const TruePatient& patient, const std::string& id, const PolicyKind& policy,
                           ProposalSource* proposals, double horizon = 20.0, const PriasRule& prias = {});

struct PooledMoment {
  double mean = 0.0;
  double variance = 0.0;
  long n = 0;
};

// Pools per-dataset samples: n_k-weighted means and (n_k - 1)-weighted
// variances. Datasets with fewer than two values do not enter the variance.
PooledMoment pool(const std::vector<std::vector<double>>& per_dataset);

struct CriterionSummary {
  double mean = 0.0;
  double sd = 0.0;
  // Quantiles of the pooled values at kSummaryLevels.
  std::vector<double> quantiles;
};
inline const std::vector<double> kSummaryLevels{0.05, 0.25, 0.5, 0.75, 0.9, 0.95};

struct PolicySummary {
  std::string policy;  // PolicyKind::id()
  std::string name;    // PolicyKind::name()
  int subgroup = -1;   // -1 for all patients
  CriterionSummary n_biopsies;
  CriterionSummary offset;  // years
  long patients = 0;
  long undetected = 0;
};

struct PooledSummary {
  std::vector<PolicySummary> rows;

  // Throws UsageError when the policy or subgroup is missing.
  const PolicySummary& at(const std::string& policy_id, int subgroup = -1) const;
};

struct DatasetOutcomes {
  std::vector<int> subgroup;                        // per test patient
  std::vector<std::vector<ScheduleOutcome>> by_policy;  // [policy][patient]
};

// Detected outcomes only; undetected ones are counted separately.
PooledSummary pooled_estimates(const std::vector<PolicyKind>& policies, const std::vector<DatasetOutcomes>& datasets,
                               int n_subgroups = 3);

// Criteria: mean_N, sd_N, var_N, mean_O, sd_O, var_O (offset in years) and
// mean_O_months, sd_O_months.
double criterion_value(const PolicySummary& row, const std::string& criterion);

struct CompoundLossSpec {
  std::vector<std::pair<std::string, double>> criteria;  // (criterion, weight)
  void validate() const;
};

// Weighted criteria per policy (all patients), in row order.
std::vector<std::pair<std::string, double>> compound_loss(const PooledSummary& summary, const CompoundLossSpec& spec);

struct Constraint {
  std::string criterion;
  double bound = 0.0;  // feasible when value < bound
};

// Policy id minimizing the objective among feasible policies, ties toward
// fewer biopsies.
std::string constrained_select(const PooledSummary& summary, const std::string& objective,
                               const std::vector<Constraint>& constraints);

struct EvaluationConfig {
  SimConfig sim;
  McmcConfig mcmc;
  PriorConfig priors;
  PosteriorProposals::Budget budget;
  std::vector<PolicyKind> policies;
  PriasRule prias;
  int threads = 1;

  // Desk-scale budgets for the simulation study.
  static EvaluationConfig desk();
};

struct EvaluationResult {
  PooledSummary summary;
  std::vector<DatasetOutcomes> datasets;
  std::vector<double> fit_seconds;
};

EvaluationResult evaluate(const EvaluationConfig& config);

}  // namespace asched
