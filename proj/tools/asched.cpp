#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "asched/error.hpp"
#include "asched/service.hpp"
#include "asched/workflow.hpp"

using namespace asched;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct Globals {
  std::uint64_t seed = 1;
  double horizon = 20.0;
  int pairs = 200;
  std::string output = "json";
};

void emit(const Globals& g, const json& j, const std::string& csv) {
  if (g.output == "csv") std::cout << csv;
  else std::cout << j.dump(2) << '\n';
}

PatientHistory pick_patient(const std::string& path, const std::string& id) {
  const std::vector<PatientHistory> all = read_patient_file(path);
  if (id.empty()) {
    if (all.size() != 1)
      throw UsageError("'" + path + "' holds " + std::to_string(all.size()) + " patients; choose one with --id");
    return all.front();
  }
  for (const auto& h : all)
    if (h.id == id) return h;
  throw DataError("no patient '" + id + "' in '" + path + "'", -1, "patient_id");
}

std::vector<PolicyKind> parse_policies(const std::string& list) {
  std::vector<PolicyKind> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out.push_back(PolicyKind::parse(item));
    out.back().validate();
  }
  if (out.empty()) throw UsageError("no policies given");
  return out;
}

std::string params_csv(const json& summary) {
  std::ostringstream out;
  out << "name,mean,rhat,ess\n";
  for (const auto& p : summary["parameters"]) {
    out << p["name"].get<std::string>() << ',' << p["mean"].dump() << ',';
    if (p.contains("rhat")) out << p["rhat"].dump();
    out << ',';
    if (p.contains("ess")) out << p["ess"].dump();
    out << '\n';
  }
  return out.str();
}

std::string prediction_csv(const PatientPrediction& p) {
  std::ostringstream out;
  out << "quantity,value\n";
  out << "expected," << json(p.expected.value).dump() << '\n';
  out << "sd," << json(std::sqrt(p.variance.value)).dump() << '\n';
  out << "median," << json(p.median.u).dump() << '\n';
  for (const auto& [level, q] : p.quantiles) out << "q" << json(level).dump() << ',' << json(q.u).dump() << '\n';
  out << '\n' << curve_csv(p.curve);
  return out.str();
}

Service* g_service = nullptr;
extern "C" void on_signal(int) {
  if (g_service) g_service->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Personalized biopsy schedules from a joint model of PSA and time to Gleason reclassification"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
  app.add_option("--horizon", g.horizon, "Prediction and study horizon (years)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app.add_option("--pairs", g.pairs, "Posterior (theta, b) pairs per prediction")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app.add_option("--output", g.output, "Output format")->check(CLI::IsMember({"json", "csv"}))->capture_default_str();

  // fit
  std::string data_path, model_out, spec_name = "prias", baseline = "pspline", note;
  McmcConfig mcmc;
  auto* fit = app.add_subcommand("fit", "Fit the joint model to a patient file and save the posterior");
  fit->add_option("--data", data_path, "Patient file (.csv or .json)")->required()->check(CLI::ExistingFile);
  fit->add_option("-o,--model-out", model_out, "Model artifact to write")->required();
  fit->add_option("--spec", spec_name, "Longitudinal design")->check(CLI::IsMember({"prias", "linear"}))
      ->capture_default_str();
  fit->add_option("--baseline", baseline, "Baseline hazard")->check(CLI::IsMember({"pspline", "weibull"}))
      ->capture_default_str();
  fit->add_option("--chains", mcmc.chains)->check(CLI::PositiveNumber)->capture_default_str();
  fit->add_option("--iterations", mcmc.iterations)->check(CLI::PositiveNumber)->capture_default_str();
  fit->add_option("--burn-in", mcmc.burn_in)->check(CLI::NonNegativeNumber)->capture_default_str();
  fit->add_option("--thin", mcmc.thin)->check(CLI::PositiveNumber)->capture_default_str();
  fit->add_option("--knots", mcmc.pspline_knots, "P-spline basis size")->capture_default_str();
  fit->add_option("--note", note, "Provenance note stored with the model");

  // predict / schedule / kappa / serve share a model
  std::string model_path, patients_path, patient_id, cohort_path;
  double to = -1.0, delta_t = 1.0;
  int points = 50;
  auto* predict = app.add_subcommand("predict", "Survival curve and time-to-reclassification summaries");
  predict->add_option("--model", model_path, "Model artifact")->required()->check(CLI::ExistingFile);
  predict->add_option("--patients", patients_path, "Patient file")->required()->check(CLI::ExistingFile);
  predict->add_option("--id", patient_id, "Patient id when the file holds several");
  predict->add_option("--points", points, "Survival curve points")->check(CLI::Range(1, 2000))->capture_default_str();
  predict->add_option("--to", to, "Curve end (default: horizon)");

  std::string policy_text;
  std::optional<double> kappa, t_nv;
  auto* schedule = app.add_subcommand("schedule", "Next biopsy proposal for one patient");
  schedule->add_option("--model", model_path, "Model artifact")->required()->check(CLI::ExistingFile);
  schedule->add_option("--patients", patients_path, "Patient file")->required()->check(CLI::ExistingFile);
  schedule->add_option("--id", patient_id, "Patient id when the file holds several");
  schedule->add_option("--policy", policy_text,
                       "annual | prias | exp | med | dynrisk:<f1|youden|kappa> | hybrid:<med|exp>:<f1|youden|kappa>")
      ->required();
  schedule->add_option("--kappa", kappa, "Override the policy's kappa")->check(CLI::Range(0.0, 1.0));
  schedule->add_option("--cohort", cohort_path, "Patient file for F1 / Youden kappa selection")
      ->check(CLI::ExistingFile);
  schedule->add_option("--delta-t", delta_t, "Kappa selection window (years)")->capture_default_str();
  schedule->add_option("--t-nv", t_nv, "Next visit time (default: next PSA visit after the last PSA)");

  // simulate / evaluate
  SimConfig sim;
  sim.n_datasets = 1;
  int eval_datasets = 20, threads = 1;
  std::string policies_text = "annual,prias,dynrisk:f1,dynrisk:0.95,hybrid:med:f1,med,exp";
  std::optional<int> eval_iterations, eval_burn_in, eval_thin;
  auto* simulate = app.add_subcommand("simulate", "Simulated study datasets with their true values");
  simulate->add_option("--datasets", sim.n_datasets)->check(CLI::PositiveNumber)->capture_default_str();
  simulate->add_option("--patients", sim.n_patients)->check(CLI::Range(2, 1000000))->capture_default_str();
  simulate->add_option("--censoring-max", sim.censoring_max)->check(CLI::PositiveNumber)->capture_default_str();

  auto* evaluate_cmd = app.add_subcommand("evaluate", "Simulation study: pooled E(N), E(O) per policy");
  evaluate_cmd->add_option("--datasets", eval_datasets)->check(CLI::PositiveNumber)->capture_default_str();
  evaluate_cmd->add_option("--patients", sim.n_patients)->check(CLI::Range(2, 1000000))->capture_default_str();
  evaluate_cmd->add_option("--policies", policies_text, "Comma-separated policy ids")->capture_default_str();
  evaluate_cmd->add_option("--threads", threads)->check(CLI::PositiveNumber)->capture_default_str();
  evaluate_cmd->add_option("--iterations", eval_iterations, "MCMC iterations per dataset fit");
  evaluate_cmd->add_option("--burn-in", eval_burn_in);
  evaluate_cmd->add_option("--thin", eval_thin);
  evaluate_cmd->add_option("--censoring-max", sim.censoring_max)->check(CLI::PositiveNumber)->capture_default_str();

  std::string objective = "f1";
  double landmark = 0.0;
  auto* kappa_cmd = app.add_subcommand("kappa", "Select kappa on an observed cohort at a landmark time");
  kappa_cmd->add_option("--model", model_path, "Model artifact")->required()->check(CLI::ExistingFile);
  kappa_cmd->add_option("--cohort", cohort_path, "Patient file")->required()->check(CLI::ExistingFile);
  kappa_cmd->add_option("--t", landmark, "Landmark time (years)")->required()->check(CLI::NonNegativeNumber);
  kappa_cmd->add_option("--delta-t", delta_t)->check(CLI::PositiveNumber)->capture_default_str();
  kappa_cmd->add_option("--objective", objective)->check(CLI::IsMember({"f1", "youden"}))->capture_default_str();

  std::string store_path, bind;
  auto* serve = app.add_subcommand("serve", "HTTP API over a file-backed patient store");
  serve->add_option("--model", model_path, "Model artifact")->required()->check(CLI::ExistingFile);
  serve->add_option("--store", store_path, "Patient store file (created on first write)")->required();
  serve->add_option("--bind", bind, "host:port (default: $ASCHED_BIND, else 127.0.0.1:8080)");
  serve->add_option("--cohort", cohort_path, "Patient file for F1 / Youden kappa selection")
      ->check(CLI::ExistingFile);
  serve->add_option("--delta-t", delta_t)->check(CLI::PositiveNumber)->capture_default_str();

  std::string export_path;
  auto* export_cmd = app.add_subcommand("export-default", "Write the shipped PRIAS parameter artifact");
  export_cmd->add_option("-o,--model-out", export_path, "Destination (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (*fit) {
      mcmc.seed = g.seed;
      mcmc.baseline = baseline == "weibull" ? BaselineKind::Weibull : BaselineKind::PSpline;
      const ModelSpec spec = spec_name == "linear" ? ModelSpec::linear_trend() : ModelSpec::prias();
      const Dataset data = Dataset::from_histories(read_patient_file(data_path));
      ModelArtifact artifact;
      artifact.posterior = run_mcmc(data, spec, PriorConfig{}, mcmc);
      artifact.note = note.empty() ? "fitted to " + std::to_string(data.size()) + " patients from " + data_path : note;
      write_model_file(model_out, artifact);
      const json summary = model_summary(artifact);
      emit(g, summary, params_csv(summary));
    } else if (*predict) {
      const ModelArtifact model = read_model_file(model_path);
      const NewPatientState state = NewPatientState::from_history(pick_patient(patients_path, patient_id));
      ScheduleOptions o;
      o.pairs = g.pairs;
      o.horizon = g.horizon;
      o.seed = g.seed;
      const PredictivePosterior pp = patient_posterior(model.posterior, state, o);
      const PatientPrediction p = predict_patient(pp, to < 0.0 ? g.horizon : to, points);
      json out = to_json(p);
      out["patient_id"] = state.history.id;
      out["t"] = state.t;
      out["s"] = state.s;
      emit(g, out, prediction_csv(p));
    } else if (*schedule) {
      const ModelArtifact model = read_model_file(model_path);
      const NewPatientState state = NewPatientState::from_history(pick_patient(patients_path, patient_id));
      const PolicyKind policy = PolicyKind::parse(policy_text);
      std::optional<Dataset> cohort;
      if (!cohort_path.empty()) cohort = Dataset::from_histories(read_patient_file(cohort_path));
      ScheduleOptions o;
      o.pairs = g.pairs;
      o.horizon = g.horizon;
      o.seed = g.seed;
      o.kappa = kappa;
      o.cohort = cohort ? &*cohort : nullptr;
      o.delta_t = delta_t;
      const ScheduleProposal p = schedule_patient(model.posterior, state, policy, o);
      const json out = proposal_response(p, state, t_nv.value_or(next_visit_after(state.s)));
      emit(g, out, proposal_csv(p));
    } else if (*simulate) {
      sim.seed = g.seed;
      sim.horizon = g.horizon;
      sim.validate();
      json datasets = json::array();
      std::string csv;
      for (int k = 0; k < sim.n_datasets; ++k) {
        const SimulatedDataset d = simulate_dataset(sim, k);
        datasets.push_back(to_json(d, k));
        const std::string rows = dataset_csv(d, k);
        csv += k == 0 ? rows : rows.substr(rows.find('\n') + 1);
      }
      emit(g, json{{"seed", g.seed}, {"datasets", datasets}}, csv);
    } else if (*evaluate_cmd) {
      EvaluationConfig c = EvaluationConfig::desk();
      c.sim.n_datasets = eval_datasets;
      c.sim.n_patients = sim.n_patients;
      c.sim.censoring_max = sim.censoring_max;
      c.sim.seed = g.seed;
      c.sim.horizon = g.horizon;
      c.mcmc.seed = g.seed;
      if (eval_iterations) c.mcmc.iterations = *eval_iterations;
      if (eval_burn_in) c.mcmc.burn_in = *eval_burn_in;
      if (eval_thin) c.mcmc.thin = *eval_thin;
      c.budget.patient.horizon = c.budget.cohort.horizon = g.horizon;
      c.policies = parse_policies(policies_text);
      c.threads = threads;
      const EvaluationResult r = evaluate(c);
      emit(g, to_json(r.summary), pooled_csv(r.summary));
    } else if (*kappa_cmd) {
      const ModelArtifact model = read_model_file(model_path);
      const Dataset cohort = Dataset::from_histories(read_patient_file(cohort_path));
      const KappaSelection s =
          cohort_kappa(model.posterior, cohort, objective == "youden" ? KappaObjective::Youden : KappaObjective::F1,
                       landmark, delta_t, prediction_config(model.posterior, g.pairs, g.horizon, g.seed));
      std::ostringstream csv;
      csv << "objective,kappa,value,delta_t,grid_step\n"
          << objective << ',' << json(s.kappa).dump() << ',' << json(s.value).dump() << ',' << json(s.delta_t).dump()
          << ',' << json(s.grid_step).dump() << '\n';
      emit(g, to_json(s), csv.str());
    } else if (*serve) {
      ServiceConfig c;
      c.store_path = store_path;
      c.pairs = g.pairs;
      c.horizon = g.horizon;
      c.seed = g.seed;
      c.delta_t = delta_t;
      if (!cohort_path.empty()) c.cohort = Dataset::from_histories(read_patient_file(cohort_path));
      if (bind.empty())
        if (const char* env = std::getenv("ASCHED_BIND")) bind = env;
      const auto [host, port] = parse_bind(bind);
      Service service(read_model_file(model_path), std::move(c));
      g_service = &service;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cerr << "listening on " << host << ':' << port << std::endl;
      if (!service.listen(host, port)) throw UsageError("cannot listen on " + host + ":" + std::to_string(port));
      g_service = nullptr;
    } else if (*export_cmd) {
      const ModelArtifact a = default_prias_artifact();
      if (export_path.empty()) std::cout << save_model(a);
      else write_model_file(export_path, a);
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const DomainError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure" << (e.flag().empty() ? "" : " [" + e.flag() + "]") << ": " << e.what() << '\n';
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << '\n';
    return kNumeric;
  }
  return kOk;
}
