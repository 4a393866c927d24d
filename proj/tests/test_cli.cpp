#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <thread>

#include "asched/service.hpp"
#include "doctest.h"
#include "httplib.h"

using namespace asched;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(ASCHED_CLI) + " " + args + " 2>/dev/null";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe);
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name, const std::string& text = {}) const {
    const fs::path p = path / name;
    if (!text.empty()) std::ofstream(p, std::ios::binary) << text;
    return p.string();
  }
};

ModelArtifact exponential_artifact(double rate) {
  Theta theta;
  theta.beta = Eigen::Vector2d(2.0, 0.1);
  theta.gamma.resize(0);
  theta.alpha = Eigen::Vector2d::Zero();
  theta.sigma2 = 0.09;
  theta.D = Eigen::Matrix2d::Identity() * 0.25;
  theta.baseline = WeibullBaseline{1.0, 1.0 / rate};
  ModelArtifact a;
  a.posterior.spec = ModelSpec::linear_trend();
  a.posterior.draws.push_back({theta, {}});
  return a;
}

const char* kPatientCsv =
    "patient_id,age,time_years,psa_ng_ml,biopsy_time_years,upgraded\n"
    "a,68,0,4.2,,\n"
    "a,,0.5,4.8,,\n"
    "a,,1,5.1,1,0\n"
    "a,,1.5,5.6,,\n"
    "a,,2,6.0,2,0\n";

}  // namespace

TEST_CASE("schedule annual after a biopsy at 2") {
  TempDir dir("asched_cli_annual");
  const std::string model = dir.file("m.json", save_model(default_prias_artifact()));
  const std::string patients = dir.file("p.csv", kPatientCsv);
  const Run r = run("schedule --model " + model + " --patients " + patients + " --policy annual");
  REQUIRE(r.code == 0);
  const json j = json::parse(r.out);
  CHECK(j["t"] == 2.0);
  CHECK(j["u"] == 3.0);

  const Run csv = run("schedule --model " + model + " --patients " + patients + " --policy annual --output csv");
  CHECK(csv.code == 0);
  CHECK(csv.out.find("annual,3,") != std::string::npos);
}

TEST_CASE("predict on an exponential model") {
  TempDir dir("asched_cli_predict");
  const double rate = 0.5, t = 2.0;
  const std::string model = dir.file("m.json", save_model(exponential_artifact(rate)));
  const std::string patients = dir.file("p.csv", kPatientCsv);
  const Run r = run("predict --model " + model + " --patients " + patients + " --pairs 20 --points 11");
  REQUIRE(r.code == 0);
  const json j = json::parse(r.out);
  CHECK(std::abs(j["expected"].get<double>() - (t + 1.0 / rate)) < 0.01 * (t + 1.0 / rate));
  CHECK(std::abs(j["sd"].get<double>() - 1.0 / rate) < 0.01 / rate);
  CHECK(std::abs(j["median"]["u"].get<double>() - (t + std::log(2.0) / rate)) < 0.01 * (t + std::log(2.0) / rate));
  CHECK(j["survival"]["prob"][0] == 1.0);
  CHECK(j["survival"]["u"].size() == 11);
}

TEST_CASE("exit codes") {
  TempDir dir("asched_cli_exit");
  const std::string model = dir.file("m.json", save_model(default_prias_artifact()));
  const std::string patients = dir.file("p.csv", kPatientCsv);
  CHECK(run("").code == 1);
  CHECK(run("schedule --model " + model).code == 1);
  CHECK(run("schedule --model " + model + " --patients " + patients + " --policy weekly").code == 1);
  CHECK(run("schedule --model " + model + " --patients " + patients + " --policy dynrisk:f1").code == 1);
  CHECK(run("--output xml export-default").code == 1);
  CHECK(run("--help").code == 0);

  const std::string bad = dir.file("bad.csv", "patient_id,age,time_years,psa_ng_ml\na,70,0,-3\n");
  CHECK(run("schedule --model " + model + " --patients " + bad + " --policy annual").code == 2);
  const std::string truncated = dir.file("t.json", save_model(default_prias_artifact()).substr(0, 300));
  CHECK(run("schedule --model " + truncated + " --patients " + patients + " --policy annual").code == 2);
  const std::string upgraded = dir.file("u.csv", "patient_id,age,time_years,psa_ng_ml,biopsy_time_years,upgraded\n"
                                                 "a,70,0,4,,\na,,1,5,1,1\n");
  CHECK(run("schedule --model " + model + " --patients " + upgraded + " --policy annual").code == 2);

  const std::string slow = dir.file("slow.json", save_model(exponential_artifact(0.01)));
  CHECK(run("schedule --model " + slow + " --patients " + patients + " --policy exp --pairs 10").code == 3);
  CHECK(run("schedule --model " + slow + " --patients " + patients + " --policy med --pairs 10").code == 0);
}

TEST_CASE("export-default reproduces the shipped model") {
  const Run r = run("export-default");
  REQUIRE(r.code == 0);
  const std::string shipped = read_text_file(std::string(ASCHED_SOURCE_DIR) + "/models/prias_default.json");
  CHECK(r.out == shipped);
  CHECK(load_model(r.out).posterior.draws[0].theta.alpha(1) == 2.407);
}

TEST_CASE("simulate and evaluate are deterministic") {
  const std::string sim = "--seed 5 simulate --datasets 2 --patients 12";
  const Run a = run(sim), b = run(sim);
  REQUIRE(a.code == 0);
  CHECK(a.out == b.out);
  CHECK(run("--seed 6 simulate --datasets 2 --patients 12").out != a.out);
  const Run c = run(sim + " --output csv"), d = run(sim + " --output csv");
  CHECK(c.out == d.out);
  CHECK(c.out.rfind("dataset,patient_id,split", 0) == 0);
  const json j = json::parse(a.out);
  REQUIRE(j["datasets"].size() == 2);
  CHECK(j["datasets"][1]["patients"].size() == 12);

  const std::string eval =
      "--seed 3 evaluate --datasets 1 --patients 24 --policies annual,prias,dynrisk:0.9,med "
      "--iterations 60 --burn-in 20 --thin 2";
  const Run e = run(eval), f = run(eval);
  REQUIRE(e.code == 0);
  CHECK(e.out == f.out);
  const json rows = json::parse(e.out)["rows"];
  CHECK(rows.size() == 16);  // 4 policies x (all + 3 subgroups)
  CHECK(rows[0]["policy"] == "annual");
}

TEST_CASE("fit writes a loadable artifact") {
  TempDir dir("asched_cli_fit");
  std::string csv = "patient_id,age,time_years,psa_ng_ml,biopsy_time_years,upgraded\n";
  for (int i = 0; i < 12; ++i) {
    const std::string id = "f" + std::to_string(i);
    for (int k = 0; k <= 4; ++k) {
      csv += id + "," + (k == 0 ? std::to_string(60 + i) : std::string()) + "," + std::to_string(0.5 * k) + "," +
             std::to_string(4.0 + 0.3 * k + 0.1 * (i % 3)) + ",";
      if (k == 2) csv += "1," + std::string(i % 4 == 0 ? "1" : "0");
      else if (k == 4 && i % 4 != 0) csv += "2,0";
      else csv += ",";
      csv += "\n";
    }
  }
  const std::string data = dir.file("train.csv", csv);
  const std::string out = dir.file("fitted.json");
  const Run r = run("--seed 9 fit --data " + data + " -o " + out +
                    " --spec linear --baseline weibull --chains 2 --iterations 60 --burn-in 20 --thin 4");
  REQUIRE(r.code == 0);
  const json summary = json::parse(r.out);
  CHECK(summary["draws"] == 20);
  CHECK(summary["chains"] == 2);
  const std::string bytes = read_text_file(out);
  const ModelArtifact a = load_model(bytes);
  CHECK(save_model(a) == bytes);
  CHECK(a.posterior.seed == 9);
  CHECK(a.posterior.spec == ModelSpec::linear_trend());
}

TEST_CASE("kappa subcommand agrees with the library") {
  TempDir dir("asched_cli_kappa");
  std::vector<PatientHistory> cohort;
  for (int i = 0; i < 10; ++i) {
    PatientHistory h{"k" + std::to_string(i), 62.0 + i, {}, {}};
    for (int k = 0; k <= 4; ++k) h.psa.push_back({0.5 * k, 4.0 * std::exp2((0.1 + 0.08 * i) * 0.5 * k)});
    h.biopsies.push_back({1.0, i >= 7});
    if (i < 7) h.biopsies.push_back({2.0, false});
    cohort.push_back(h);
  }
  const std::string path = dir.file("cohort.json", write_patient_json(cohort));
  const std::string model = dir.file("m.json", save_model(default_prias_artifact()));
  const Run r = run("--pairs 20 --seed 4 kappa --model " + model + " --cohort " + path + " --t 0 --objective youden");
  REQUIRE(r.code == 0);
  const json j = json::parse(r.out);
  const KappaSelection lib =
      cohort_kappa(default_prias_artifact().posterior, Dataset::from_histories(cohort), KappaObjective::Youden, 0.0,
                   1.0, prediction_config(default_prias_artifact().posterior, 20, 20.0, 4));
  CHECK(j["kappa"].get<double>() == lib.kappa);
  CHECK(j["value"].get<double>() == lib.value);
  CHECK(j["objective"] == "youden");
  // at t = 3 nobody is left at risk
  CHECK(run("kappa --model " + model + " --cohort " + path + " --t 3").code == 2);
}

TEST_CASE("schedule command and proposal endpoint agree") {
  TempDir dir("asched_cli_parity");
  const std::string model = dir.file("m.json", save_model(default_prias_artifact()));
  const std::string patients = dir.file("p.csv", kPatientCsv);

  ServiceConfig config;
  config.pairs = 30;
  config.seed = 17;
  Service service(default_prias_artifact(), config);
  const int port = service.bind_any_port("127.0.0.1");
  std::thread th([&] { service.listen_after_bind(); });
  service.server().wait_until_ready();
  httplib::Client cli("127.0.0.1", port);
  const std::string body = json(json::parse(write_patient_json(parse_patient_csv(kPatientCsv)))["patients"][0]).dump();
  REQUIRE(cli.Post("/patients", body, "application/json")->status == 201);

  for (const char* policy : {"annual", "prias", "exp", "med", "dynrisk:0.9", "hybrid:med:0.95"}) {
    CAPTURE(policy);
    const Run r = run("--seed 17 --pairs 30 schedule --model " + model + " --patients " + patients +
                      " --policy " + policy + " --t-nv 2.5");
    REQUIRE(r.code == 0);
    const auto res = cli.Get(std::string("/patients/a/proposal?t_nv=2.5&policy=") + policy);
    REQUIRE(res);
    REQUIRE(res->status == 200);
    const json c = json::parse(r.out), a = json::parse(res->body);
    CHECK(c["u"].get<double>() == a["u"].get<double>());
    CHECK(c["diagnostics"] == a["diagnostics"]);
    CHECK(c["decision"] == a["decision"]);
  }
  service.stop();
  th.join();
}
