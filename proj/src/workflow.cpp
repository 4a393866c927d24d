#include "asched/workflow.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "asched/error.hpp"

namespace asched {

using nlohmann::json;

namespace {

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

// nlohmann writes non-finite numbers as null.
json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json quantile_json(const SurvivalInverse& q) {
  return {{"u", q.u}, {"censored_at_horizon", q.censored_at_horizon}};
}

}  // namespace

PredictionConfig prediction_config(const PosteriorSamples& posterior, int pairs, double horizon, std::uint64_t seed) {
  if (pairs < 1) throw UsageError("--pairs must be at least 1");
  if (posterior.draws.empty()) throw DataError("model has no posterior draws");
  PredictionConfig c;
  const int n = static_cast<int>(std::min<std::size_t>(posterior.size(), static_cast<std::size_t>(pairs)));
  c.theta_draws = n;
  c.b_per_theta = (pairs + n - 1) / n;
  c.horizon = horizon;
  c.seed = seed;
  c.validate();
  return c;
}

PatientPrediction predict_patient(const PredictivePosterior& pp, double to, int points) {
  PatientPrediction out;
  out.curve = survival_curve(pp, pp.state().t, to, points);
  out.expected = expected_gr_time(pp);
  out.variance = variance_gr_time(pp);
  out.median = quantile_gr_time(0.5, pp);
  for (double q : kPredictionLevels) out.quantiles.emplace_back(q, quantile_gr_time(q, pp));
  return out;
}

KappaSelection cohort_kappa(const PosteriorSamples& posterior, const Dataset& cohort, KappaObjective objective,
                            double t, double delta_t, const PredictionConfig& config) {
  const std::vector<CohortPoint> points = kappa_cohort(posterior, cohort, t, delta_t, config);
  bool cases = false, controls = false;
  for (const auto& p : points) (p.event ? cases : controls) = true;
  if (!cases || !controls)
    throw DataError("kappa cohort at t = " + num(t) + " needs both cases and controls in (t, t + " + num(delta_t) + "]");
  return select_kappa(objective, points, delta_t);
}

ScheduleProposal propose(const PolicyKind& policy, const NewPatientState& state, const PredictivePosterior* pp,
                         std::optional<double> kappa, const PriasRule& prias) {
  policy.validate();
  state.validate();
  if (policy.type == PolicyKind::Type::Annual) return {annual_next_biopsy(state.t), policy, {}};
  if (policy.type == PolicyKind::Type::Prias) {
    VisitState v;
    v.t = state.t;
    v.s = state.s;
    return {prias_next_biopsy(v, state.history.psa, prias), policy, {}};
  }
  if (!pp) throw UsageError("policy '" + policy.id() + "' needs a predictive posterior");
  double k = 0.0;
  if (policy.uses_kappa()) {
    if (kappa) k = *kappa;
    else if (policy.kappa.rule == KappaRule::Fixed) k = policy.kappa.kappa;
    else throw UsageError("policy '" + policy.id() + "' needs a kappa or a cohort to select one");
    if (!(k > 0.0 && k < 1.0)) throw UsageError("kappa must lie strictly inside (0, 1)");
  }
  ScheduleProposal p;
  switch (policy.type) {
    case PolicyKind::Type::ExpGrTime: p = propose_expected(*pp); break;
    case PolicyKind::Type::MedGrTime: p = propose_median(*pp); break;
    case PolicyKind::Type::DynRisk: p = propose_dyn_risk(*pp, k); break;
    case PolicyKind::Type::Hybrid: p = propose_hybrid(*pp, policy.center, k); break;
    default: break;
  }
  p.method = policy;
  return p;
}

PredictivePosterior patient_posterior(const PosteriorSamples& posterior, const NewPatientState& state,
                                      const ScheduleOptions& options) {
  return sample_subject_effects(state, posterior,
                                prediction_config(posterior, options.pairs, options.horizon, options.seed));
}

std::optional<double> policy_kappa(const PosteriorSamples& posterior, const PolicyKind& policy, double t,
                                   const ScheduleOptions& options) {
  if (!policy.uses_kappa()) return std::nullopt;
  if (options.kappa) return options.kappa;
  if (policy.kappa.rule == KappaRule::Fixed) return policy.kappa.kappa;
  if (!options.cohort) throw UsageError("policy '" + policy.id() + "' selects kappa and needs a cohort or an explicit kappa");
  const KappaObjective objective = policy.kappa.rule == KappaRule::F1 ? KappaObjective::F1 : KappaObjective::Youden;
  const PredictionConfig config = prediction_config(posterior, options.pairs, options.horizon, options.seed);
  return cohort_kappa(posterior, *options.cohort, objective, t, options.delta_t, config).kappa;
}

ScheduleProposal schedule_patient(const PosteriorSamples& posterior, const NewPatientState& state,
                                  const PolicyKind& policy, const ScheduleOptions& options,
                                  const PredictivePosterior* pp) {
  policy.validate();
  state.validate();
  std::optional<PredictivePosterior> own;
  if (policy.personalized() && !pp) pp = &own.emplace(patient_posterior(posterior, state, options));
  return propose(policy, state, pp, policy_kappa(posterior, policy, state.t, options), options.prias);
}

json to_json(const ScheduleProposal& proposal) {
  const ProposalDiagnostics& d = proposal.diagnostics;
  json diag{{"expected", d.expected},         {"median", d.median},
            {"sd", d.sd},                     {"q025", d.q025},
            {"hybrid_fallback", d.hybrid_fallback},
            {"tail_dominated", d.tail_dominated},
            {"censored_at_horizon", d.censored_at_horizon}};
  diag["kappa_used"] = d.kappa_used ? json(*d.kappa_used) : json(nullptr);
  const bool personalized = proposal.method.personalized();
  return {{"u", proposal.u},
          {"policy", proposal.method.id()},
          {"name", proposal.method.name()},
          {"diagnostics", personalized ? diag : json(nullptr)}};
}

json proposal_response(const ScheduleProposal& proposal, const NewPatientState& state, std::optional<double> t_nv) {
  json out = to_json(proposal);
  out["t"] = state.t;
  out["s"] = state.s;
  if (t_nv) {
    if (!(*t_nv > state.s)) throw UsageError("t_nv must be after the last PSA time");
    VisitState visit;
    visit.t = state.t;
    visit.s = state.s;
    visit.t_nv = *t_nv;
    out["t_nv"] = *t_nv;
    out["decision"] = to_json(next_biopsy_decision(visit, proposal.u));
  }
  return out;
}

json to_json(const BiopsyDecision& decision) { return {{"conduct", decision.conduct}, {"u", decision.u}}; }

json to_json(const SurvivalCurve& curve) { return {{"u", curve.u}, {"prob", curve.prob}}; }

json to_json(const PatientPrediction& p) {
  json q = json::array();
  for (const auto& [level, inv] : p.quantiles) {
    json e = quantile_json(inv);
    e["level"] = level;
    q.push_back(std::move(e));
  }
  return {{"survival", to_json(p.curve)},
          {"expected", p.expected.value},
          {"sd", std::sqrt(p.variance.value)},
          {"median", quantile_json(p.median)},
          {"quantiles", q},
          {"tail_dominated", p.expected.tail_dominated},
          {"tail_bound", p.expected.tail_bound}};
}

json to_json(const std::vector<PsaBand>& band) {
  json time = json::array(), mean = json::array(), lower = json::array(), upper = json::array();
  json raw_mean = json::array(), raw_lower = json::array(), raw_upper = json::array();
  for (const auto& b : band) {
    time.push_back(b.time);
    mean.push_back(b.mean);
    lower.push_back(b.lower);
    upper.push_back(b.upper);
    raw_mean.push_back(std::exp2(b.mean));
    raw_lower.push_back(std::exp2(b.lower));
    raw_upper.push_back(std::exp2(b.upper));
  }
  return {{"time", time},
          {"psa_ng_ml", {{"mean", raw_mean}, {"lower", raw_lower}, {"upper", raw_upper}}},
          {"log2_psa", {{"mean", mean}, {"lower", lower}, {"upper", upper}}}};
}

json to_json(const KappaSelection& s) {
  return {{"kappa", s.kappa},
          {"value", s.value},
          {"objective", s.objective == KappaObjective::F1 ? "f1" : "youden"},
          {"delta_t", s.delta_t},
          {"grid_step", s.grid_step}};
}

json to_json(const PooledSummary& summary) {
  const auto criterion = [](const CriterionSummary& c, double scale) {
    json q = json::object();
    for (std::size_t i = 0; i < kSummaryLevels.size() && i < c.quantiles.size(); ++i)
      q[num(kSummaryLevels[i])] = finite_or_null(scale * c.quantiles[i]);
    return json{{"mean", finite_or_null(scale * c.mean)}, {"sd", finite_or_null(scale * c.sd)}, {"quantiles", q}};
  };
  json rows = json::array();
  for (const auto& r : summary.rows) {
    rows.push_back({{"policy", r.policy},
                    {"name", r.name},
                    {"subgroup", r.subgroup < 0 ? json("all") : json(r.subgroup + 1)},
                    {"patients", r.patients},
                    {"undetected", r.undetected},
                    {"n_biopsies", criterion(r.n_biopsies, 1.0)},
                    {"offset_months", criterion(r.offset, 12.0)}});
  }
  return {{"rows", rows}};
}

json patient_json(const PatientHistory& h) {
  json p{{"patient_id", h.id}, {"age", h.age_at_entry}, {"psa", json::array()}, {"biopsies", json::array()}};
  for (const auto& m : h.psa) p["psa"].push_back({{"time_years", m.time}, {"psa_ng_ml", m.psa}});
  for (const auto& b : h.biopsies) p["biopsies"].push_back({{"biopsy_time_years", b.time}, {"upgraded", b.upgraded}});
  const CensoringInterval iv = derive_interval(h);
  p["upgraded"] = h.upgraded();
  p["last_biopsy_time"] = h.last_biopsy_time();
  p["last_psa_time"] = h.last_psa_time();
  p["interval"] = {{"l", iv.l}, {"r", finite_or_null(iv.r)}};
  return p;
}

json model_summary(const ModelArtifact& artifact) {
  const PosteriorSamples& ps = artifact.posterior;
  const Eigen::VectorXd mean = posterior_mean(ps);
  const std::vector<std::string> names = parameter_names(ps.draws.front().theta);
  const Diagnostics& d = ps.diagnostics;
  json params = json::array();
  for (Eigen::Index i = 0; i < mean.size(); ++i) {
    json p{{"name", names[static_cast<std::size_t>(i)]}, {"mean", mean(i)}};
    if (d.rhat.size() == mean.size()) p["rhat"] = finite_or_null(d.rhat(i));
    if (d.ess.size() == mean.size()) p["ess"] = finite_or_null(d.ess(i));
    params.push_back(std::move(p));
  }
  json acceptance = json::object();
  for (const auto& [name, rate] : d.acceptance) acceptance[name] = rate;
  return {{"note", artifact.note},   {"draws", ps.size()},       {"chains", ps.chains},
          {"seed", ps.seed},         {"parameters", params},     {"acceptance", acceptance}};
}

std::string curve_csv(const SurvivalCurve& curve) {
  std::ostringstream out;
  out << "u,survival\n";
  for (std::size_t i = 0; i < curve.u.size(); ++i) out << num(curve.u[i]) << ',' << num(curve.prob[i]) << '\n';
  return out.str();
}

std::string pooled_csv(const PooledSummary& summary) {
  std::ostringstream out;
  out << "policy,name,subgroup,patients,undetected,mean_n,sd_n,mean_o_months,sd_o_months";
  for (double q : kSummaryLevels) out << ",n_q" << num(q);
  for (double q : kSummaryLevels) out << ",o_months_q" << num(q);
  out << '\n';
  for (const auto& r : summary.rows) {
    out << r.policy << ',' << r.name << ',' << (r.subgroup < 0 ? std::string("all") : std::to_string(r.subgroup + 1))
        << ',' << r.patients << ',' << r.undetected << ',' << num(r.n_biopsies.mean) << ',' << num(r.n_biopsies.sd)
        << ',' << num(12.0 * r.offset.mean) << ',' << num(12.0 * r.offset.sd);
    for (double v : r.n_biopsies.quantiles) out << ',' << num(v);
    for (double v : r.offset.quantiles) out << ',' << num(12.0 * v);
    out << '\n';
  }
  return out.str();
}

std::string proposal_csv(const ScheduleProposal& p) {
  const ProposalDiagnostics& d = p.diagnostics;
  std::ostringstream out;
  out << "policy,u,expected,median,sd,q025,kappa_used,hybrid_fallback,tail_dominated,censored_at_horizon\n";
  out << p.method.id() << ',' << num(p.u);
  if (p.method.personalized()) {
    out << ',' << num(d.expected) << ',' << num(d.median) << ',' << num(d.sd) << ',' << num(d.q025) << ','
        << (d.kappa_used ? num(*d.kappa_used) : std::string()) << ',' << d.hybrid_fallback << ','
        << d.tail_dominated << ',' << d.censored_at_horizon;
  } else {
    out << ",,,,,,,,";
  }
  out << '\n';
  return out.str();
}

namespace {

std::string sim_id(int dataset, std::size_t patient) {
  return "d" + std::to_string(dataset) + "-p" + std::to_string(patient);
}

}  // namespace

json to_json(const SimulatedDataset& data, int k) {
  json patients = json::array();
  const auto add = [&](const TruePatient& tp, const PatientHistory& h, const char* split) {
    json p = patient_json(h);
    p["split"] = split;
    p["subgroup"] = tp.subgroup + 1;
    p["t_star"] = finite_or_null(tp.t_star);
    p["censoring"] = finite_or_null(tp.censoring);
    p["b"] = std::vector<double>(tp.b.data(), tp.b.data() + tp.b.size());
    patients.push_back(std::move(p));
  };
  for (std::size_t i = 0; i < data.train.patients.size(); ++i) {
    add(data.train_truth[i], data.train.patients[i].history, "train");
    const CensoringInterval& iv = data.train.patients[i].interval;
    patients.back()["interval"] = {{"l", iv.l}, {"r", finite_or_null(iv.r)}};
  }
  const std::size_t n_train = data.train.patients.size();
  for (std::size_t j = 0; j < data.test.size(); ++j) {
    const TruePatient& tp = data.test[j];
    add(tp, tp.history_until(sim_id(k, n_train + j), kInfinity), "test");
    patients.back().erase("interval");
  }
  return {{"dataset", k}, {"patients", patients}};
}

std::string dataset_csv(const SimulatedDataset& data, int k) {
  std::ostringstream out;
  out << "dataset,patient_id,split,subgroup,age,t_star,censoring,interval_l,interval_r,n_psa\n";
  for (std::size_t i = 0; i < data.train.patients.size(); ++i) {
    const PatientRecord& r = data.train.patients[i];
    const TruePatient& tp = data.train_truth[i];
    out << k << ',' << r.history.id << ",train," << tp.subgroup + 1 << ',' << num(tp.age) << ',' << num(tp.t_star)
        << ',' << num(tp.censoring) << ',' << num(r.interval.l) << ',' << num(r.interval.r) << ','
        << r.history.psa.size() << '\n';
  }
  const std::size_t n_train = data.train.patients.size();
  for (std::size_t j = 0; j < data.test.size(); ++j) {
    const TruePatient& tp = data.test[j];
    out << k << ',' << sim_id(k, n_train + j) << ",test," << tp.subgroup + 1 << ',' << num(tp.age) << ','
        << num(tp.t_star) << ",,,," << tp.psa.size() << '\n';
  }
  return out.str();
}

}  // namespace asched
