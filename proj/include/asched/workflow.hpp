#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "asched/io.hpp"
#include "asched/prediction.hpp"
#include "asched/scheduling.hpp"
#include "asched/simulation.hpp"
#include "json.hpp"

namespace asched {

// Prediction budget for a requested number of (theta, b) pairs: one pair per
// posterior draw where possible, extra b-draws per theta otherwise.
PredictionConfig prediction_config(const PosteriorSamples& posterior, int pairs, double horizon, std::uint64_t seed);

struct PatientPrediction {
  SurvivalCurve curve;
  TimeMoment expected;
  TimeMoment variance;
  SurvivalInverse median;
  std::vector<std::pair<double, SurvivalInverse>> quantiles;  // (level, value)
};

inline const std::vector<double> kPredictionLevels{0.025, 0.25, 0.5, 0.75, 0.975};

PatientPrediction predict_patient(const PredictivePosterior& pp, double to, int points);

// Kappa for the selecting rules, from a cohort of observed patients at
// landmark t.
KappaSelection cohort_kappa(const PosteriorSamples& posterior, const Dataset& cohort, KappaObjective objective,
                            double t, double delta_t, const PredictionConfig& config);

// One proposal for one patient. kappa overrides the policy's kappa source;
// a selecting source without an override needs cohort_kappa first. pp may be
// null for Annual and PRIAS.
ScheduleProposal propose(const PolicyKind& policy, const NewPatientState& state, const PredictivePosterior* pp,
                         std::optional<double> kappa, const PriasRule& prias = {});

struct ScheduleOptions {
  int pairs = 200;
  double horizon = 20.0;
  std::uint64_t seed = 1;
  std::optional<double> kappa;      // overrides the policy's kappa source
  const Dataset* cohort = nullptr;  // for F1 / Youden kappa selection
  double delta_t = 1.0;
  PriasRule prias;
};

PredictivePosterior patient_posterior(const PosteriorSamples& posterior, const NewPatientState& state,
                                      const ScheduleOptions& options);

// Kappa the policy uses at the patient's last biopsy time, if any.
std::optional<double> policy_kappa(const PosteriorSamples& posterior, const PolicyKind& policy, double t,
                                   const ScheduleOptions& options);

// The proposal shared by the schedule command and the proposal endpoint. pp
// is built from the options when null.
ScheduleProposal schedule_patient(const PosteriorSamples& posterior, const NewPatientState& state,
                                  const PolicyKind& policy, const ScheduleOptions& options,
                                  const PredictivePosterior* pp = nullptr);

nlohmann::json to_json(const ScheduleProposal& proposal);
// Proposal with the patient's t and s and, given the next visit t_nv, the
// biopsy decision preview.
nlohmann::json proposal_response(const ScheduleProposal& proposal, const NewPatientState& state,
                                 std::optional<double> t_nv);
nlohmann::json to_json(const BiopsyDecision& decision);
nlohmann::json to_json(const SurvivalCurve& curve);
nlohmann::json to_json(const PatientPrediction& prediction);
nlohmann::json to_json(const std::vector<PsaBand>& band);
nlohmann::json to_json(const KappaSelection& selection);
nlohmann::json to_json(const PooledSummary& summary);
nlohmann::json patient_json(const PatientHistory& history);
nlohmann::json model_summary(const ModelArtifact& artifact);

std::string curve_csv(const SurvivalCurve& curve);
std::string pooled_csv(const PooledSummary& summary);
std::string proposal_csv(const ScheduleProposal& proposal);

// Simulated dataset as records: one per patient with its split, subgroup
// and true values.
nlohmann::json to_json(const SimulatedDataset& data, int dataset_index);
std::string dataset_csv(const SimulatedDataset& data, int dataset_index);

}  // namespace asched
