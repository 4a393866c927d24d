#include "asched/scheduling.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>

#include "asched/random.hpp"

namespace asched {

void KappaSource::validate() const {
  if (rule == KappaRule::Fixed && !(kappa > 0.0 && kappa < 1.0))
    throw UsageError("fixed kappa must lie strictly inside (0, 1)");
}

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t p = s.find(sep, start);
    out.push_back(s.substr(start, p - start));
    if (p == std::string::npos) return out;
    start = p + 1;
  }
}

KappaSource parse_kappa(const std::string& s) {
  if (s == "f1") return KappaSource::f1();
  if (s == "youden") return KappaSource::youden();
  double k = 0.0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), k);
  if (ec != std::errc() || end != s.data() + s.size()) throw UsageError("unknown kappa source '" + s + "'");
  KappaSource src = KappaSource::fixed(k);
  src.validate();
  return src;
}

std::string kappa_id(const KappaSource& k) {
  switch (k.rule) {
    case KappaRule::F1: return "f1";
    case KappaRule::Youden: return "youden";
    case KappaRule::Fixed: break;
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.15g", k.kappa);
  return buf;
}

std::string kappa_label(const KappaSource& k) {
  switch (k.rule) {
    case KappaRule::F1: return "F1";
    case KappaRule::Youden: return "Youden";
    case KappaRule::Fixed: break;
  }
  return kappa_id(k);
}

}  // namespace

PolicyKind PolicyKind::parse(const std::string& text) {
  const std::vector<std::string> parts = split(text, ':');
  const std::string& head = parts[0];
  PolicyKind p;
  if (head == "annual" && parts.size() == 1) p = annual();
  else if (head == "prias" && parts.size() == 1) p = prias();
  else if (head == "exp" && parts.size() == 1) p = expected();
  else if (head == "med" && parts.size() == 1) p = median();
  else if (head == "dynrisk" && parts.size() <= 2) p = dyn_risk(parts.size() == 2 ? parse_kappa(parts[1]) : KappaSource::f1());
  else if (head == "hybrid" && parts.size() <= 3) {
    HybridCenter c = HybridCenter::Median;
    if (parts.size() >= 2) {
      if (parts[1] == "exp") c = HybridCenter::Expected;
      else if (parts[1] != "med") throw UsageError("hybrid center must be 'med' or 'exp'");
    }
    p = hybrid(c, parts.size() == 3 ? parse_kappa(parts[2]) : KappaSource::f1());
  } else {
    throw UsageError("unknown policy '" + text + "'");
  }
  return p;
}

std::string PolicyKind::id() const {
  switch (type) {
    case Type::Annual: return "annual";
    case Type::Prias: return "prias";
    case Type::ExpGrTime: return "exp";
    case Type::MedGrTime: return "med";
    case Type::DynRisk: return "dynrisk:" + kappa_id(kappa);
    case Type::Hybrid:
      return std::string("hybrid:") + (center == HybridCenter::Median ? "med:" : "exp:") + kappa_id(kappa);
  }
  return {};
}

std::string PolicyKind::name() const {
  switch (type) {
    case Type::Annual: return "Annual";
    case Type::Prias: return "PRIAS";
    case Type::ExpGrTime: return "Exp";
    case Type::MedGrTime: return "Med";
    case Type::DynRisk: return "DynRisk-" + kappa_label(kappa);
    case Type::Hybrid:
      return std::string("Hybrid-") + (center == HybridCenter::Median ? "Med-" : "Exp-") + kappa_label(kappa);
  }
  return {};
}

void PolicyKind::validate() const {
  if (uses_kappa()) kappa.validate();
}

ProposalDiagnostics summarize(const PredictivePosterior& pp) {
  ProposalDiagnostics d;
  const TimeMoment e = expected_gr_time(pp);
  d.expected = e.value;
  d.tail_dominated = e.tail_dominated;
  d.sd = std::sqrt(variance_gr_time(pp).value);
  const SurvivalInverse med = quantile_gr_time(0.5, pp);
  d.median = med.u;
  d.censored_at_horizon = med.censored_at_horizon;
  d.q025 = quantile_gr_time(0.025, pp).u;
  return d;
}

ScheduleProposal propose_expected(const PredictivePosterior& pp, bool allow_tail) {
  ScheduleProposal p{0.0, PolicyKind::expected(), summarize(pp)};
  if (p.diagnostics.tail_dominated && !allow_tail)
    throw NumericError("expected time is dominated by survival beyond the horizon", "tail_dominated");
  p.u = p.diagnostics.expected;
  return p;
}

ScheduleProposal propose_median(const PredictivePosterior& pp) {
  ScheduleProposal p{0.0, PolicyKind::median(), summarize(pp)};
  const SurvivalInverse r = survival_inverse(0.5, pp);
  p.u = r.u;
  p.diagnostics.censored_at_horizon = r.censored_at_horizon;
  return p;
}

ScheduleProposal propose_dyn_risk(const PredictivePosterior& pp, double kappa) {
  if (!(kappa >= 0.0 && kappa <= 1.0)) throw DomainError("kappa must lie in [0, 1]");
  ScheduleProposal p{0.0, PolicyKind::dyn_risk(KappaSource{KappaRule::Fixed, kappa}), summarize(pp)};
  p.diagnostics.kappa_used = kappa;
  if (kappa >= 1.0) {
    p.u = pp.state().t;
    p.diagnostics.censored_at_horizon = false;
  } else if (kappa <= 0.0) {
    p.u = pp.horizon();
    p.diagnostics.censored_at_horizon = true;
  } else {
    const SurvivalInverse r = survival_inverse(kappa, pp);
    p.u = r.u;
    p.diagnostics.censored_at_horizon = r.censored_at_horizon;
  }
  return p;
}

ScheduleProposal propose_hybrid(const PredictivePosterior& pp, HybridCenter center, double kappa,
                                double hybrid_spread) {
  ScheduleProposal p = propose_dyn_risk(pp, kappa);
  p.method = PolicyKind::hybrid(center, KappaSource{KappaRule::Fixed, kappa});
  const double c = center == HybridCenter::Median ? p.diagnostics.median : p.diagnostics.expected;
  if (c - p.diagnostics.q025 > hybrid_spread) {
    p.diagnostics.hybrid_fallback = true;
  } else {
    p.u = c;
    p.diagnostics.hybrid_fallback = false;
  }
  return p;
}

ClassificationRates classification_rates(double kappa, const std::vector<CohortPoint>& cohort) {
  long cases = 0, controls = 0, true_pos = 0, false_pos = 0;
  for (const auto& c : cohort) {
    const bool positive = c.survival <= kappa;
    if (c.event) {
      ++cases;
      true_pos += positive;
    } else {
      ++controls;
      false_pos += positive;
    }
  }
  ClassificationRates r;
  if (cases > 0) r.tpr = static_cast<double>(true_pos) / static_cast<double>(cases);
  if (controls > 0) r.fpr = static_cast<double>(false_pos) / static_cast<double>(controls);
  if (true_pos + false_pos > 0) r.ppv = static_cast<double>(true_pos) / static_cast<double>(true_pos + false_pos);
  return r;
}

double f1_score(const ClassificationRates& rates) {
  if (!rates.tpr || !rates.ppv) throw NumericError("F1 needs both TPR and PPV", "undefined_rate");
  const double s = *rates.tpr + *rates.ppv;
  return s > 0.0 ? 2.0 * *rates.tpr * *rates.ppv / s : 0.0;
}

double youden_j(const ClassificationRates& rates) {
  if (!rates.tpr || !rates.fpr) throw NumericError("Youden's J needs both TPR and FPR", "undefined_rate");
  return *rates.tpr - *rates.fpr;
}

LandmarkStatus landmark_status(const CensoringInterval& iv, double t, double dt) {
  const double end = t + dt;
  if (iv.exact()) {
    if (!(iv.l > t)) return LandmarkStatus::NotAtRisk;
    return iv.l <= end ? LandmarkStatus::Case : LandmarkStatus::Control;
  }
  if (iv.r <= t) return LandmarkStatus::NotAtRisk;
  if (iv.l < t) return LandmarkStatus::Undetermined;
  if (iv.r <= end) return LandmarkStatus::Case;
  if (iv.l >= end) return LandmarkStatus::Control;
  return LandmarkStatus::Undetermined;
}

std::vector<CohortPoint> kappa_cohort(const PosteriorSamples& posterior, const Dataset& data, double t, double dt,
                                      const PredictionConfig& config) {
  if (!(t >= 0.0) || !(dt > 0.0)) throw DomainError("landmark must be nonnegative and the window positive");
  std::vector<CohortPoint> out;
  for (std::size_t j = 0; j < data.patients.size(); ++j) {
    const PatientRecord& rec = data.patients[j];
    const LandmarkStatus status = landmark_status(rec.interval, t, dt);
    if (status != LandmarkStatus::Case && status != LandmarkStatus::Control) continue;
    NewPatientState state;
    state.history = rec.history.truncated(t);
    state.t = t;
    state.s = state.history.last_psa_time();
    PredictionConfig cfg = config;
    cfg.seed = derive_seed(config.seed, {static_cast<std::uint64_t>(j), std::bit_cast<std::uint64_t>(t)});
    const PredictivePosterior pp = sample_subject_effects(state, posterior, cfg);
    out.push_back({dynamic_survival(t + dt, pp), status == LandmarkStatus::Case});
  }
  return out;
}

KappaSelection select_kappa(KappaObjective objective, const std::vector<CohortPoint>& cohort, double delta_t,
                            double grid_step) {
  if (!(grid_step > 0.0 && grid_step <= 1.0)) throw UsageError("kappa grid step must lie in (0, 1]");
  const auto n = static_cast<int>(std::lround(1.0 / grid_step));
  if (std::abs(n * grid_step - 1.0) > 1e-9) throw UsageError("kappa grid step must divide 1");
  long cases = 0;
  for (const auto& c : cohort) cases += c.event;
  const long controls = static_cast<long>(cohort.size()) - cases;

  // Objectives compared as exact fractions so equal values tie exactly.
  KappaSelection sel{delta_t, grid_step, objective, 0.0, 0.0};
  long best_num = 0, best_den = 1;
  bool found = false;
  for (int i = 0; i <= n; ++i) {
    const double kappa = static_cast<double>(i) / n;
    long tp = 0, fp = 0;
    for (const auto& c : cohort)
      if (c.survival <= kappa) (c.event ? tp : fp) += 1;
    long num = 0, den = 0;
    if (objective == KappaObjective::F1 && cases > 0 && tp + fp > 0) {
      num = 2 * tp;
      den = tp + fp + cases;  // 2 TP + FP + FN
    } else if (objective == KappaObjective::Youden && cases > 0 && controls > 0) {
      num = tp * controls - fp * cases;
      den = cases * controls;
    } else {
      continue;
    }
    if (!found || num * best_den >= best_num * den) {
      sel.kappa = kappa;
      best_num = num;
      best_den = den;
      found = true;
    }
  }
  if (found) {
    const ClassificationRates r = classification_rates(sel.kappa, cohort);
    sel.value = objective == KappaObjective::F1 ? f1_score(r) : youden_j(r);
  }
  if (!found) throw NumericError("no kappa on the grid has a defined objective", "undefined_rate");
  return sel;
}

double psa_doubling_time(const std::vector<PsaMeasurement>& psa, double to, double window) {
  const double from = std::isinf(window) ? -window : to - window;
  double n = 0, st = 0, sy = 0;
  for (const auto& m : psa)
    if (m.time <= to && m.time >= from) {
      n += 1;
      st += m.time;
      sy += m.log2_psa();
    }
  if (n < 2) throw DataError("PSA doubling time needs at least two measurements");
  const double tm = st / n, ym = sy / n;
  double sxx = 0, sxy = 0;
  for (const auto& m : psa)
    if (m.time <= to && m.time >= from) {
      sxx += (m.time - tm) * (m.time - tm);
      sxy += (m.time - tm) * (m.log2_psa() - ym);
    }
  if (!(sxx > 0.0)) throw DataError("PSA doubling time needs measurements at distinct times");
  const double slope = sxy / sxx;
  return slope > 0.0 ? 1.0 / slope : std::numeric_limits<double>::infinity();
}

double prias_slot_after(double t) {
  for (double slot : {1.0, 4.0, 7.0, 10.0})
    if (slot > t) return slot;
  return 10.0 + 5.0 * (std::floor((t - 10.0) / 5.0) + 1.0);
}

void VisitState::validate() const {
  if (!(t >= 0.0) || !(s >= 0.0)) throw DomainError("visit times must be nonnegative");
  if (!(u_pv >= 0.0)) throw DomainError("carried proposal must be nonnegative");
}

double prias_next_biopsy(const VisitState& visit, const std::vector<PsaMeasurement>& psa, const PriasRule& rule) {
  const auto triggered_at = [&](double s) {
    std::size_t available = 0;
    for (const auto& m : psa) available += m.time <= s && m.time >= s - rule.psa_dt_window;
    return available >= 2 && psa_doubling_time(psa, s, rule.psa_dt_window) < rule.psa_dt_threshold;
  };
  bool triggered = triggered_at(visit.s);
  if (rule.sticky)
    for (std::size_t i = 0; i < psa.size() && !triggered && psa[i].time < visit.s; ++i)
      triggered = triggered_at(psa[i].time);
  return triggered ? annual_next_biopsy(visit.t) : prias_slot_after(visit.t);
}

BiopsyDecision next_biopsy_decision(const VisitState& visit, double u, double min_gap) {
  u = std::min(u, visit.u_pv);
  if (u <= visit.s) u = visit.s;
  if (u - visit.t < min_gap) u = visit.t + min_gap;
  return {u <= visit.t_nv, u};
}

}  // namespace asched
