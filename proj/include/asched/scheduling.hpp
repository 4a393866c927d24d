#pragma once

#include <limits>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "asched/prediction.hpp"

namespace asched {

// How the dynamic-risk threshold kappa is obtained.
enum class KappaRule { Fixed, F1, Youden };

struct KappaSource {
  KappaRule rule = KappaRule::F1;
  double kappa = 0.95;  // used when rule == Fixed; strictly inside (0, 1)

  static KappaSource fixed(double kappa) { return {KappaRule::Fixed, kappa}; }
  static KappaSource f1() { return {KappaRule::F1, 0.0}; }
  static KappaSource youden() { return {KappaRule::Youden, 0.0}; }
  void validate() const;
  friend bool operator==(const KappaSource&, const KappaSource&) = default;
};

enum class HybridCenter { Expected, Median };

struct PolicyKind {
  enum class Type { Annual, Prias, ExpGrTime, MedGrTime, DynRisk, Hybrid };

  Type type = Type::Annual;
  KappaSource kappa;                           // DynRisk and Hybrid
  HybridCenter center = HybridCenter::Median;  // Hybrid

  static PolicyKind annual() { return {Type::Annual, {}, {}}; }
  static PolicyKind prias() { return {Type::Prias, {}, {}}; }
  static PolicyKind expected() { return {Type::ExpGrTime, {}, {}}; }
  static PolicyKind median() { return {Type::MedGrTime, {}, {}}; }
  static PolicyKind dyn_risk(KappaSource k) { return {Type::DynRisk, k, {}}; }
  static PolicyKind hybrid(HybridCenter c, KappaSource k) { return {Type::Hybrid, k, c}; }

  // annual | prias | exp | med | dynrisk:<f1|youden|kappa> |
  // hybrid:<med|exp>:<f1|youden|kappa>
  static PolicyKind parse(const std::string& text);
  std::string id() const;    // inverse of parse
  std::string name() const;  // table label, e.g. "DynRisk-F1"

  bool personalized() const { return type != Type::Annual && type != Type::Prias; }
  bool uses_kappa() const { return type == Type::DynRisk || type == Type::Hybrid; }
  bool selects_kappa() const { return uses_kappa() && kappa.rule != KappaRule::Fixed; }
  void validate() const;
  friend bool operator==(const PolicyKind&, const PolicyKind&) = default;
};

struct ProposalDiagnostics {
  double expected = 0.0;
  double median = 0.0;
  double sd = 0.0;
  double q025 = 0.0;
  std::optional<double> kappa_used;
  bool hybrid_fallback = false;
  bool tail_dominated = false;  // pi(horizon) above the tail cap
  bool censored_at_horizon = false;
};

struct ScheduleProposal {
  double u = 0.0;
  PolicyKind method;
  ProposalDiagnostics diagnostics;
};

// Fills the summaries of g(T*) shared by every personalized proposal.
ProposalDiagnostics summarize(const PredictivePosterior& pp);

// u = E_g(T*). Throws NumericError("tail_dominated") when the horizon
// truncation is not negligible, unless allow_tail is set.
ScheduleProposal propose_expected(const PredictivePosterior& pp, bool allow_tail = false);
// u = median of g(T*).
ScheduleProposal propose_median(const PredictivePosterior& pp);
// u = pi^{-1}(kappa). kappa = 1 proposes t itself and kappa = 0 the horizon,
// which only arise from a kappa grid search.
ScheduleProposal propose_dyn_risk(const PredictivePosterior& pp, double kappa);
// Center estimate unless it exceeds the 0.025 quantile by more than
// hybrid_spread years, in which case the dynamic-risk proposal.
ScheduleProposal propose_hybrid(const PredictivePosterior& pp, HybridCenter center, double kappa,
                                double hybrid_spread = 3.0);

// One subject at risk at t: predicted pi(t + dt | t, s) and whether the
// event falls in (t, t + dt].
struct CohortPoint {
  double survival = 1.0;
  bool event = false;
};

struct ClassificationRates {
  // Positive: survival <= kappa. Empty when the conditioning set is empty.
  std::optional<double> tpr;  // P(positive | event)
  std::optional<double> fpr;  // P(positive | no event)
  std::optional<double> ppv;  // P(event | positive)
};

ClassificationRates classification_rates(double kappa, const std::vector<CohortPoint>& cohort);

// Throws NumericError("undefined_rate") when a required rate is undefined.
double f1_score(const ClassificationRates& rates);
double youden_j(const ClassificationRates& rates);

// Status of an interval-censored subject for the window (t, t + dt]. An
// exact interval (l == r) is an observed event time. Subjects whose status
// the data cannot settle are Undetermined.
enum class LandmarkStatus { NotAtRisk, Case, Control, Undetermined };
LandmarkStatus landmark_status(const CensoringInterval& interval, double t, double dt);

// Cases and controls of data at landmark t with their predicted
// pi(t + dt | t, s), s the last PSA time up to t.
std::vector<CohortPoint> kappa_cohort(const PosteriorSamples& posterior, const Dataset& data, double t, double dt,
                                      const PredictionConfig& config);

enum class KappaObjective { F1, Youden };

struct KappaSelection {
  double delta_t = 1.0;
  double grid_step = 0.01;
  KappaObjective objective = KappaObjective::F1;
  double kappa = 0.0;
  double value = 0.0;
};

// Grid search over {0, step, ..., 1}; kappas with an undefined objective are
// skipped and ties go to the larger kappa.
KappaSelection select_kappa(KappaObjective objective, const std::vector<CohortPoint>& cohort,
                            double delta_t = 1.0, double grid_step = 0.01);

// 1 / slope of the least-squares line of log2 PSA on time, over measurements
// with time in [to - window, to]. Nonpositive slope gives +inf.
double psa_doubling_time(const std::vector<PsaMeasurement>& psa, double to = std::numeric_limits<double>::infinity(),
                         double window = std::numeric_limits<double>::infinity());

// Fixed PRIAS slots 1, 4, 7, 10, 15, 20, ...
double prias_slot_after(double t);

struct VisitState {
  double t = 0.0;                                        // last biopsy
  double s = 0.0;                                        // last PSA
  double u_pv = std::numeric_limits<double>::infinity();  // carried proposal
  double t_nv = 0.0;                                     // next visit

  void validate() const;
};

struct PriasRule {
  double psa_dt_threshold = 10.0;
  double psa_dt_window = std::numeric_limits<double>::infinity();
  // true: annual once PSA-DT has been below the threshold at any PSA time up
  // to s; false: only the PSA-DT at s counts.
  bool sticky = true;
};

// PSA-DT below the threshold switches to annual biopsies, otherwise the next
// fixed slot after t.
double prias_next_biopsy(const VisitState& visit, const std::vector<PsaMeasurement>& psa, const PriasRule& rule = {});
inline double annual_next_biopsy(double t) { return t + 1.0; }

struct BiopsyDecision {
  bool conduct = false;  // false: wait and carry u as u_pv to the next visit
  double u = 0.0;
};

// min with the carried proposal, no earlier than s, at least min_gap after t,
// and conducted only if due before the next visit.
BiopsyDecision next_biopsy_decision(const VisitState& visit, double u, double min_gap = 1.0);

}  // namespace asched
