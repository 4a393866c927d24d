#include "asched/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <thread>

#include <boost/math/tools/toms748_solve.hpp>

namespace asched {

namespace {

// FNV-1a, stable across platforms, for deriving substreams from ids.
std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string patient_id(int dataset, int patient) {
  return "d" + std::to_string(dataset) + "-p" + std::to_string(patient);
}

double sorted_quantile(const std::vector<double>& v, double p) {
  if (v.empty()) return std::nan("");
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

std::vector<double> psa_visit_times(double until) {
  std::vector<double> out;
  for (int i = 0;; ++i) {
    const double t = i <= 8 ? 0.25 * i : 2.0 + 0.5 * (i - 8);
    if (t > until) return out;
    out.push_back(t);
  }
}

double next_visit_after(double s) {
  constexpr double eps = 1e-9;
  if (s < 2.0 - eps) return std::min(2.0, 0.25 * (std::floor(s / 0.25 + eps) + 1.0));
  return 2.0 + 0.5 * (std::floor((s - 2.0) / 0.5 + eps) + 1.0);
}

void SimConfig::validate() const {
  if (n_datasets < 1 || n_patients < 2) throw UsageError("simulation needs at least one dataset of two patients");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw UsageError("train fraction must lie in (0, 1)");
  if (n_train() < 1 || n_test() < 1) throw UsageError("both the training and the test split must be nonempty");
  if (!(horizon > 0.0) || !(censoring_max > 0.0)) throw UsageError("horizon and censoring bound must be positive");
  if (!(age_sd >= 0.0)) throw UsageError("age standard deviation must be nonnegative");
  if (subgroups.empty()) throw UsageError("at least one subgroup is required");
  for (const auto& g : subgroups)
    if (!(g.shape > 0.0) || !(g.scale > 0.0)) throw UsageError("subgroup Weibull parameters must be positive");
  spec.validate();
  asched::validate(theta_true, spec);
}

PatientHistory TruePatient::history_until(const std::string& id, double s) const {
  PatientHistory h{id, age, {}, {}};
  for (const auto& m : psa)
    if (m.time <= s) h.psa.push_back(m);
  return h;
}

double gr_time_from_uniform(double u, double age, const Theta& theta, const RandomEffects& b, const ModelSpec& spec,
                            double horizon) {
  if (!(u > 0.0 && u <= 1.0)) throw DomainError("uniform draw must lie in (0, 1]");
  const double target = -std::log(u);
  if (target == 0.0) return 0.0;
  const double limit = 10.0 * horizon;
  double a = 0.0, h = 0.0;
  while (a < limit) {
    const double next = std::min(a + 1.0, limit);
    const double step = cumulative_hazard(age, theta, b, spec, a, next);
    if (h + step >= target) {
      const auto f = [&](double x) { return h + cumulative_hazard(age, theta, b, spec, a, x) - target; };
      std::uintmax_t iters = 200;
      const auto r = boost::math::tools::toms748_solve(f, a, next, h - target, h + step - target,
                                                       boost::math::tools::eps_tolerance<double>(48), iters);
      return 0.5 * (r.first + r.second);
    }
    h += step;
    a = next;
  }
  return std::numeric_limits<double>::infinity();
}

double draw_true_gr_time(double age, const Theta& theta, const RandomEffects& b, const ModelSpec& spec, Rng& rng,
                         double horizon) {
  return gr_time_from_uniform(1.0 - rng.uniform(), age, theta, b, spec, horizon);
}

Theta subgroup_theta(const SimConfig& config, int subgroup) {
  if (subgroup < 0 || subgroup >= static_cast<int>(config.subgroups.size()))
    throw DomainError("subgroup index out of range");
  Theta theta = config.theta_true;
  theta.baseline = WeibullBaseline{config.subgroups[subgroup].shape, config.subgroups[subgroup].scale};
  return theta;
}

SimulatedDataset simulate_dataset(const SimConfig& config, int dataset_index) {
  config.validate();
  SimulatedDataset out;
  const auto k = static_cast<std::uint64_t>(dataset_index);
  const Eigen::MatrixXd chol = config.theta_true.D.llt().matrixL();
  const double sigma = std::sqrt(config.theta_true.sigma2);
  const std::vector<double> visits = psa_visit_times(config.horizon);
  const int groups = static_cast<int>(config.subgroups.size());

  for (int i = 0; i < config.n_patients; ++i) {
    const auto p = static_cast<std::uint64_t>(i);
    const bool train = i < config.n_train();
    Rng rng(derive_seed(config.seed, {k, p, 0}));
    TruePatient tp;
    tp.subgroup = std::min(groups - 1, static_cast<int>(rng.uniform() * groups));
    tp.age = rng.normal(config.age_mean, config.age_sd);
    tp.b = mvn_from_cholesky(rng, Eigen::VectorXd::Zero(chol.rows()), chol);
    const Theta theta = subgroup_theta(config, tp.subgroup);
    tp.t_star = draw_true_gr_time(tp.age, theta, tp.b, config.spec, rng, config.horizon);
    if (train) tp.censoring = config.censoring_max * (1.0 - rng.uniform());

    Rng noise(derive_seed(config.seed, {k, p, 1}));
    for (double t : visits)
      tp.psa.push_back({t, std::exp2(lmm_mean(t, tp.age, theta, tp.b, config.spec) + sigma * noise.normal())});

    if (train) {
      const double end = std::min(tp.t_star, tp.censoring);
      PatientRecord rec{tp.history_until(patient_id(dataset_index, i), end), {}};
      rec.interval = tp.t_star < tp.censoring ? CensoringInterval{tp.t_star, tp.t_star}
                                              : CensoringInterval{tp.censoring, kInfinity};
      out.train.patients.push_back(std::move(rec));
      out.train_truth.push_back(std::move(tp));
    } else {
      out.test.push_back(std::move(tp));
    }
  }
  return out;
}

PosteriorProposals::PosteriorProposals(const PosteriorSamples& posterior, Dataset cohort,
                                       std::vector<PolicyKind> policies, Budget budget)
    : posterior_(posterior), cohort_(std::move(cohort)), policies_(std::move(policies)), budget_(std::move(budget)) {
  budget_.patient.validate();
  budget_.cohort.validate();
  if (!(budget_.delta_t > 0.0) || !(budget_.kappa_time_grid > 0.0))
    throw UsageError("kappa window and time grid must be positive");
  for (const auto& p : policies_) p.validate();
}

KappaSelection PosteriorProposals::kappa_at(KappaObjective objective, double t) {
  long key = std::lround(t / budget_.kappa_time_grid);
  for (; key >= 0; --key) {
    const auto found = kappas_.find({key, static_cast<int>(objective)});
    if (found != kappas_.end()) return found->second;

    auto cohort = cohorts_.find(key);
    if (cohort == cohorts_.end()) {
      const double tk = static_cast<double>(key) * budget_.kappa_time_grid;
      PredictionConfig cfg = budget_.cohort;
      cfg.seed = derive_seed(budget_.cohort.seed, {static_cast<std::uint64_t>(key)});
      std::vector<CohortPoint> points;
      if (tk + budget_.delta_t <= budget_.cohort.horizon)
        points = kappa_cohort(posterior_, cohort_, tk, budget_.delta_t, cfg);
      cohort = cohorts_.emplace(key, std::move(points)).first;
    }
    bool cases = false, controls = false;
    for (const auto& c : cohort->second) (c.event ? cases : controls) = true;
    if (cases && controls) {
      const KappaSelection sel = select_kappa(objective, cohort->second, budget_.delta_t);
      kappas_.emplace(std::make_pair(key, static_cast<int>(objective)), sel);
      return sel;
    }
  }
  // No earlier decision time has both cases and controls.
  KappaSelection fallback;
  fallback.objective = objective;
  fallback.kappa = 0.95;
  fallback.value = std::nan("");
  return fallback;
}

double PosteriorProposals::kappa_for(const KappaSource& source, double t) {
  switch (source.rule) {
    case KappaRule::Fixed: return source.kappa;
    case KappaRule::F1: return kappa_at(KappaObjective::F1, t).kappa;
    case KappaRule::Youden: return kappa_at(KappaObjective::Youden, t).kappa;
  }
  return source.kappa;
}

const PosteriorProposals::Entry& PosteriorProposals::entry(const PatientHistory& history, double t, double s) {
  const auto key = std::make_tuple(history.id, t, s);
  const auto found = cache_.find(key);
  if (found != cache_.end()) return found->second;

  NewPatientState state{history, t, s};
  PredictionConfig cfg = budget_.patient;
  cfg.seed = derive_seed(budget_.patient.seed,
                         {fnv1a(history.id), std::bit_cast<std::uint64_t>(t), std::bit_cast<std::uint64_t>(s)});
  const PredictivePosterior pp = sample_subject_effects(state, posterior_, cfg);
  Entry e;
  for (const auto& policy : policies_) {
    ScheduleProposal p;
    switch (policy.type) {
      case PolicyKind::Type::Annual:
      case PolicyKind::Type::Prias: continue;
      case PolicyKind::Type::ExpGrTime: p = propose_expected(pp, true); break;
      case PolicyKind::Type::MedGrTime: p = propose_median(pp); break;
      case PolicyKind::Type::DynRisk: p = propose_dyn_risk(pp, kappa_for(policy.kappa, t)); break;
      case PolicyKind::Type::Hybrid: p = propose_hybrid(pp, policy.center, kappa_for(policy.kappa, t)); break;
    }
    p.method = policy;
    e.proposals.emplace(policy.id(), std::move(p));
  }
  return cache_.emplace(key, std::move(e)).first->second;
}

ScheduleProposal PosteriorProposals::propose(const PolicyKind& policy, const PatientHistory& history, double t,
                                             double s) {
  const Entry& e = entry(history, t, s);
  const auto it = e.proposals.find(policy.id());
  if (it == e.proposals.end()) throw UsageError("policy '" + policy.id() + "' was not registered for proposals");
  return it->second;
}

ScheduleOutcome run_policy(const TruePatient& patient, const std::string& id, const PolicyKind& policy,
                           ProposalSource* proposals, double horizon, const PriasRule& prias) {
  if (policy.personalized() && proposals == nullptr)
    throw UsageError("personalized policies need a proposal source");
  ScheduleOutcome out;
  PatientHistory history{id, patient.age, {}, {}};
  VisitState v;
  std::size_t revealed = 0;
  const std::vector<double> visits = psa_visit_times(horizon);
  for (std::size_t i = 0; i < visits.size() && v.t < horizon; ++i) {
    v.s = visits[i];
    v.t_nv = i + 1 < visits.size() ? visits[i + 1] : next_visit_after(v.s);
    while (revealed < patient.psa.size() && patient.psa[revealed].time <= v.s)
      history.psa.push_back(patient.psa[revealed++]);

    double u = 0.0;
    switch (policy.type) {
      case PolicyKind::Type::Annual: u = annual_next_biopsy(v.t); break;
      case PolicyKind::Type::Prias: u = prias_next_biopsy(v, history.psa, prias); break;
      default: u = proposals->propose(policy, history, v.t, v.s).u; break;
    }
    const BiopsyDecision d = next_biopsy_decision(v, u);
    if (!d.conduct) {
      v.u_pv = d.u;
      continue;
    }
    if (d.u > horizon) break;  // past the study end: undetected
    ++out.n_biopsies;
    out.biopsy_times.push_back(d.u);
    if (d.u >= patient.t_star) {
      out.detected = true;
      out.detection = d.u;
      out.offset = d.u - patient.t_star;
      return out;
    }
    history.biopsies.push_back({d.u, false});
    v.t = d.u;
    v.u_pv = kInfinity;
  }
  return out;
}

PooledMoment pool(const std::vector<std::vector<double>>& per_dataset) {
  PooledMoment m;
  double weighted_mean = 0.0, weighted_var = 0.0;
  long dof = 0;
  for (const auto& v : per_dataset) {
    const auto n = static_cast<long>(v.size());
    if (n == 0) continue;
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(n);
    weighted_mean += static_cast<double>(n) * mean;
    m.n += n;
    if (n < 2) continue;
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    weighted_var += ss;  // (n_k - 1) * var_k
    dof += n - 1;
  }
  m.mean = m.n > 0 ? weighted_mean / static_cast<double>(m.n) : std::nan("");
  m.variance = dof > 0 ? weighted_var / static_cast<double>(dof) : std::nan("");
  return m;
}

const PolicySummary& PooledSummary::at(const std::string& policy_id, int subgroup) const {
  for (const auto& r : rows)
    if (r.policy == policy_id && r.subgroup == subgroup) return r;
  throw UsageError("no summary row for policy '" + policy_id + "'");
}

PooledSummary pooled_estimates(const std::vector<PolicyKind>& policies, const std::vector<DatasetOutcomes>& datasets,
                               int n_subgroups) {
  if (datasets.empty()) throw UsageError("pooling needs at least one dataset");
  PooledSummary summary;
  for (std::size_t p = 0; p < policies.size(); ++p) {
    for (int g = -1; g < n_subgroups; ++g) {
      PolicySummary row;
      row.policy = policies[p].id();
      row.name = policies[p].name();
      row.subgroup = g;
      std::vector<std::vector<double>> ns, os;
      std::vector<double> all_n, all_o;
      for (const auto& d : datasets) {
        if (d.by_policy.size() != policies.size()) throw UsageError("outcomes do not match the policy list");
        const auto& outcomes = d.by_policy[p];
        std::vector<double> n_k, o_k;
        for (std::size_t j = 0; j < outcomes.size(); ++j) {
          if (g >= 0 && d.subgroup.at(j) != g) continue;
          ++row.patients;
          if (!outcomes[j].detected) {
            ++row.undetected;
            continue;
          }
          n_k.push_back(outcomes[j].n_biopsies);
          o_k.push_back(outcomes[j].offset);
        }
        all_n.insert(all_n.end(), n_k.begin(), n_k.end());
        all_o.insert(all_o.end(), o_k.begin(), o_k.end());
        ns.push_back(std::move(n_k));
        os.push_back(std::move(o_k));
      }
      const PooledMoment pn = pool(ns), po = pool(os);
      std::sort(all_n.begin(), all_n.end());
      std::sort(all_o.begin(), all_o.end());
      row.n_biopsies = {pn.mean, std::sqrt(pn.variance), {}};
      row.offset = {po.mean, std::sqrt(po.variance), {}};
      for (double level : kSummaryLevels) {
        row.n_biopsies.quantiles.push_back(sorted_quantile(all_n, level));
        row.offset.quantiles.push_back(sorted_quantile(all_o, level));
      }
      summary.rows.push_back(std::move(row));
    }
  }
  return summary;
}

double criterion_value(const PolicySummary& row, const std::string& criterion) {
  if (criterion == "mean_N") return row.n_biopsies.mean;
  if (criterion == "sd_N") return row.n_biopsies.sd;
  if (criterion == "var_N") return row.n_biopsies.sd * row.n_biopsies.sd;
  if (criterion == "mean_O") return row.offset.mean;
  if (criterion == "sd_O") return row.offset.sd;
  if (criterion == "var_O") return row.offset.sd * row.offset.sd;
  if (criterion == "mean_O_months") return 12.0 * row.offset.mean;
  if (criterion == "sd_O_months") return 12.0 * row.offset.sd;
  throw UsageError("unknown criterion '" + criterion + "'");
}

void CompoundLossSpec::validate() const {
  if (criteria.empty()) throw UsageError("compound loss needs at least one criterion");
  double sum = 0.0;
  for (const auto& [name, w] : criteria) {
    if (!(w >= 0.0 && w <= 1.0)) throw UsageError("criterion weights must lie in [0, 1]");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw UsageError("criterion weights must sum to 1");
}

std::vector<std::pair<std::string, double>> compound_loss(const PooledSummary& summary, const CompoundLossSpec& spec) {
  spec.validate();
  std::vector<std::pair<std::string, double>> out;
  for (const auto& row : summary.rows) {
    if (row.subgroup != -1) continue;
    double loss = 0.0;
    for (const auto& [name, w] : spec.criteria) loss += w * criterion_value(row, name);
    out.emplace_back(row.policy, loss);
  }
  return out;
}

std::string constrained_select(const PooledSummary& summary, const std::string& objective,
                               const std::vector<Constraint>& constraints) {
  const PolicySummary* best = nullptr;
  double best_value = 0.0;
  std::string violated;
  for (const auto& row : summary.rows) {
    if (row.subgroup != -1) continue;
    bool feasible = true;
    for (const auto& c : constraints) {
      const double v = criterion_value(row, c.criterion);
      if (!(v < c.bound)) {
        feasible = false;
        violated += "\n  " + row.policy + ": " + c.criterion + " = " + std::to_string(v) + " >= " +
                    std::to_string(c.bound);
      }
    }
    if (!feasible) continue;
    const double v = criterion_value(row, objective);
    if (!best || v < best_value || (v == best_value && row.n_biopsies.mean < best->n_biopsies.mean)) {
      best = &row;
      best_value = v;
    }
  }
  if (!best) throw UsageError("no policy satisfies the constraints:" + violated);
  return best->policy;
}

EvaluationConfig EvaluationConfig::desk() {
  EvaluationConfig c;
  c.mcmc.chains = 1;
  c.mcmc.iterations = 2000;
  c.mcmc.burn_in = 500;
  c.mcmc.thin = 5;
  c.mcmc.store_random_effects = false;
  c.budget.patient.theta_draws = 50;
  c.budget.patient.b_per_theta = 2;
  c.budget.patient.burn_in = 20;
  c.budget.patient.thin = 5;
  c.budget.patient.panel_width = 1.0;
  c.budget.cohort = c.budget.patient;
  c.budget.cohort.theta_draws = 20;
  c.budget.cohort.b_per_theta = 1;
  c.policies = {PolicyKind::annual(),
                PolicyKind::prias(),
                PolicyKind::dyn_risk(KappaSource::f1()),
                PolicyKind::dyn_risk(KappaSource::fixed(0.95)),
                PolicyKind::hybrid(HybridCenter::Median, KappaSource::f1()),
                PolicyKind::median(),
                PolicyKind::expected()};
  return c;
}

namespace {

struct DatasetRun {
  DatasetOutcomes outcomes;
  double fit_seconds = 0.0;
};

DatasetRun run_dataset(const EvaluationConfig& config, int k) {
  DatasetRun run;
  const SimulatedDataset data = simulate_dataset(config.sim, k);
  const auto kk = static_cast<std::uint64_t>(k);
  bool personalized = false;
  for (const auto& p : config.policies) personalized = personalized || p.personalized();

  std::optional<PosteriorSamples> posterior;
  std::optional<PosteriorProposals> proposals;
  if (personalized) {
    McmcConfig mcmc = config.mcmc;
    mcmc.seed = derive_seed(config.sim.seed, {kk, 2});
    const auto start = std::chrono::steady_clock::now();
    posterior = run_mcmc(data.train, config.sim.spec, config.priors, mcmc);
    run.fit_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    PosteriorProposals::Budget budget = config.budget;
    budget.patient.seed = derive_seed(config.sim.seed, {kk, 3});
    budget.cohort.seed = derive_seed(config.sim.seed, {kk, 4});
    budget.patient.horizon = budget.cohort.horizon = config.sim.horizon;
    proposals.emplace(*posterior, data.train, config.policies, budget);
  }

  for (const auto& tp : data.test) run.outcomes.subgroup.push_back(tp.subgroup);
  for (const auto& policy : config.policies) {
    std::vector<ScheduleOutcome> outcomes;
    for (std::size_t j = 0; j < data.test.size(); ++j) {
      const std::string id = patient_id(k, config.sim.n_train() + static_cast<int>(j));
      outcomes.push_back(run_policy(data.test[j], id, policy, proposals ? &*proposals : nullptr, config.sim.horizon,
                                    config.prias));
    }
    run.outcomes.by_policy.push_back(std::move(outcomes));
  }
  return run;
}

}  // namespace

EvaluationResult evaluate(const EvaluationConfig& config) {
  config.sim.validate();
  if (config.policies.empty()) throw UsageError("no policies to evaluate");
  for (const auto& p : config.policies) p.validate();

  const int n = config.sim.n_datasets;
  std::vector<DatasetRun> runs(static_cast<std::size_t>(n));
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  const auto worker = [&] {
    for (int k = next++; k < n && !failed; k = next++) {
      try {
        runs[static_cast<std::size_t>(k)] = run_dataset(config, k);
      } catch (...) {
        if (!failed.exchange(true)) error = std::current_exception();
      }
    }
  };
  const int threads = std::clamp(config.threads, 1, n);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);

  EvaluationResult result;
  for (auto& r : runs) {
    result.datasets.push_back(std::move(r.outcomes));
    result.fit_seconds.push_back(r.fit_seconds);
  }
  result.summary = pooled_estimates(config.policies, result.datasets, static_cast<int>(config.sim.subgroups.size()));
  return result;
}

}  // namespace asched
