#include "asched/service.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>

#include "asched/error.hpp"
#include "httplib.h"

namespace asched {

using nlohmann::json;

// ---- store ----------------------------------------------------------------

PatientStore::PatientStore(std::string path) : path_(std::move(path)) {
  if (path_.empty() || !std::filesystem::exists(path_)) return;
  for (auto& h : parse_patient_json(read_text_file(path_))) {
    const std::string id = h.id;
    patients_.emplace(id, std::make_shared<const Snapshot>(Snapshot{std::move(h), 1}));
  }
}

std::shared_ptr<const PatientStore::Snapshot> PatientStore::get(const std::string& id) const {
  std::lock_guard lock(map_mutex_);
  const auto it = patients_.find(id);
  return it == patients_.end() ? nullptr : it->second;
}

std::mutex& PatientStore::lock_for(const std::string& id) {
  std::lock_guard lock(map_mutex_);
  auto& m = id_locks_[id];
  if (!m) m = std::make_unique<std::mutex>();
  return *m;
}

void PatientStore::persist(const std::map<std::string, std::shared_ptr<const Snapshot>>& patients) {
  if (path_.empty()) return;
  std::vector<PatientHistory> all;
  all.reserve(patients.size());
  for (const auto& [id, snap] : patients) all.push_back(snap->history);
  write_text_file_atomic(path_, write_patient_json(all));
}

std::shared_ptr<const PatientStore::Snapshot> PatientStore::create(PatientHistory history) {
  history.validate();
  std::lock_guard id_lock(lock_for(history.id));
  std::lock_guard file_lock(file_mutex_);
  std::map<std::string, std::shared_ptr<const Snapshot>> next;
  {
    std::lock_guard lock(map_mutex_);
    if (patients_.count(history.id)) throw StoreConflict("patient '" + history.id + "' already exists");
    next = patients_;
  }
  auto snap = std::make_shared<const Snapshot>(Snapshot{history, 1});
  next[history.id] = snap;
  persist(next);
  std::lock_guard lock(map_mutex_);
  patients_[history.id] = snap;
  return snap;
}

std::shared_ptr<const PatientStore::Snapshot> PatientStore::update(const std::string& id,
                                                                   const std::function<void(PatientHistory&)>& edit) {
  std::lock_guard id_lock(lock_for(id));
  const auto current = get(id);
  if (!current) throw StoreNotFound("unknown patient '" + id + "'");
  PatientHistory h = current->history;
  edit(h);
  h.validate();
  auto snap = std::make_shared<const Snapshot>(Snapshot{std::move(h), current->version + 1});

  std::lock_guard file_lock(file_mutex_);
  std::map<std::string, std::shared_ptr<const Snapshot>> next;
  {
    std::lock_guard lock(map_mutex_);
    next = patients_;
  }
  next[id] = snap;
  persist(next);
  std::lock_guard lock(map_mutex_);
  patients_[id] = snap;
  return snap;
}

// ---- config ---------------------------------------------------------------

ScheduleOptions ServiceConfig::schedule_options() const {
  ScheduleOptions o;
  o.pairs = pairs;
  o.horizon = horizon;
  o.seed = seed;
  o.cohort = cohort ? &*cohort : nullptr;
  o.delta_t = delta_t;
  o.prias = prias;
  return o;
}

std::pair<std::string, int> parse_bind(const std::string& text) {
  if (text.empty()) return {"127.0.0.1", 8080};
  const auto colon = text.rfind(':');
  if (colon == std::string::npos) throw UsageError("bind address must be host:port, got '" + text + "'");
  const std::string host = text.substr(0, colon), port_text = text.substr(colon + 1);
  int port = 0;
  const auto [p, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), port);
  if (ec != std::errc() || p != port_text.data() + port_text.size() || port < 0 || port > 65535 || host.empty())
    throw UsageError("bind address must be host:port, got '" + text + "'");
  return {host, port};
}

// ---- HTTP -----------------------------------------------------------------

namespace {

struct HttpError : std::runtime_error {
  HttpError(int status, const std::string& what, std::string field = {})
      : std::runtime_error(what), status(status), field(std::move(field)) {}
  int status;
  std::string field;
};

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void fail(httplib::Response& res, int status, const std::string& msg, const std::string& field = {},
          const std::string& flag = {}) {
  json body{{"error", msg}};
  if (!field.empty()) body["field"] = field;
  if (!flag.empty()) body["flag"] = flag;
  reply(res, status, body);
}

template <class F>
void guarded(httplib::Response& res, F&& f) {
  try {
    f();
  } catch (const HttpError& e) {
    fail(res, e.status, e.what(), e.field);
  } catch (const StoreNotFound& e) {
    fail(res, 404, e.what());
  } catch (const StoreConflict& e) {
    fail(res, 409, e.what());
  } catch (const DataError& e) {
    fail(res, 400, e.what(), e.field());
  } catch (const UsageError& e) {
    fail(res, 400, e.what());
  } catch (const DomainError& e) {
    fail(res, 400, e.what());
  } catch (const NumericError& e) {
    fail(res, 500, e.what(), {}, e.flag().empty() ? "numeric" : e.flag());
  } catch (const std::exception& e) {
    fail(res, 500, e.what(), {}, "internal");
  }
}

json body_object(const httplib::Request& req) {
  json body;
  try {
    body = json::parse(req.body);
  } catch (const json::parse_error&) {
    throw HttpError(400, "request body is not valid JSON");
  }
  if (!body.is_object()) throw HttpError(400, "request body must be a JSON object");
  return body;
}

double body_number(const json& body, const char* key) {
  if (!body.contains(key)) throw HttpError(400, "missing field", key);
  const json& v = body[key];
  if (!v.is_number() || !std::isfinite(v.get<double>())) throw HttpError(400, "must be a finite number", key);
  return v.get<double>();
}

bool body_flag(const json& body, const char* key) {
  if (!body.contains(key)) throw HttpError(400, "missing field", key);
  const json& v = body[key];
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_number_integer() && (v.get<int>() == 0 || v.get<int>() == 1)) return v.get<int>() == 1;
  throw HttpError(400, "must be a boolean", key);
}

std::optional<double> query_number(const httplib::Request& req, const char* key) {
  if (!req.has_param(key)) return std::nullopt;
  const std::string text = req.get_param_value(key);
  double v = 0.0;
  const auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || p != text.data() + text.size() || !std::isfinite(v))
    throw HttpError(400, "'" + text + "' is not a finite number", key);
  return v;
}

int query_points(const httplib::Request& req, int fallback) {
  const auto v = query_number(req, "points");
  if (!v) return fallback;
  if (*v != std::floor(*v) || *v < 1 || *v > 2000) throw HttpError(400, "points must be an integer in [1, 2000]", "points");
  return static_cast<int>(*v);
}

NewPatientState surveillance_state(const PatientHistory& h) {
  if (h.upgraded()) throw HttpError(422, "Remove patient from AS");
  return NewPatientState::from_history(h);
}

}  // namespace

Service::Service(ModelArtifact model, ServiceConfig config)
    : model_(std::move(model)),
      config_(std::move(config)),
      store_(config_.store_path),
      server_(std::make_unique<httplib::Server>()) {
  if (model_.posterior.draws.empty()) throw DataError("model has no posterior draws");
  prediction_config(model_.posterior, config_.pairs, config_.horizon, config_.seed);
  routes();
}

Service::~Service() = default;

bool Service::listen(const std::string& host, int port) { return server_->listen(host, port); }
int Service::bind_any_port(const std::string& host) { return server_->bind_to_any_port(host); }
bool Service::listen_after_bind() { return server_->listen_after_bind(); }
void Service::stop() { server_->stop(); }

std::shared_ptr<const PredictivePosterior> Service::posterior_for(const PatientStore::Snapshot& patient) {
  const std::string& id = patient.history.id;
  {
    std::lock_guard lock(cache_mutex_);
    const auto it = cache_.find(id);
    if (it != cache_.end() && it->second.first == patient.version) return it->second.second;
  }
  auto pp = std::make_shared<const PredictivePosterior>(
      patient_posterior(model_.posterior, surveillance_state(patient.history), config_.schedule_options()));
  std::lock_guard lock(cache_mutex_);
  auto& slot = cache_[id];
  if (slot.first <= patient.version) slot = {patient.version, pp};
  return pp;
}

void Service::routes() {
  httplib::Server& s = *server_;

  s.Post("/patients", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const json body = body_object(req);
      const std::string wrapped = json::array({body}).dump();
      std::vector<PatientHistory> parsed;
      try {
        parsed = parse_patient_json(wrapped);
      } catch (const DataError& e) {
        throw HttpError(400, e.what(), e.field());
      }
      reply(res, 201, patient_json(store_.create(std::move(parsed.front()))->history));
    });
  });

  s.Get(R"(/patients/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto p = store_.get(req.matches[1]);
      if (!p) throw StoreNotFound("unknown patient '" + std::string(req.matches[1]) + "'");
      json out = patient_json(p->history);
      out["version"] = p->version;
      reply(res, 200, out);
    });
  });

  s.Post(R"(/patients/([^/]+)/psa)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const json body = body_object(req);
      const double time = body_number(body, "time");
      const double psa = body_number(body, "psa");
      if (time < 0.0) throw HttpError(400, "time must be nonnegative", "time");
      if (!(psa > 0.0)) throw HttpError(400, "PSA must be positive", "psa");
      const auto snap = store_.update(req.matches[1], [&](PatientHistory& h) {
        if (!h.psa.empty() && time <= h.psa.back().time)
          throw HttpError(409, "PSA time is not after the last recorded PSA time", "time");
        h.psa.push_back({time, psa});
      });
      reply(res, 201, patient_json(snap->history));
    });
  });

  s.Post(R"(/patients/([^/]+)/biopsies)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const json body = body_object(req);
      const double time = body_number(body, "time");
      const bool upgraded = body_flag(body, "upgraded");
      if (!(time > 0.0)) throw HttpError(400, "biopsy time must be positive", "time");
      const auto snap = store_.update(req.matches[1], [&](PatientHistory& h) {
        if (h.upgraded()) throw HttpError(409, "patient already reclassified; no further biopsies", "time");
        if (!h.biopsies.empty() && time <= h.biopsies.back().time)
          throw HttpError(409, "biopsy time is not after the last recorded biopsy", "time");
        h.biopsies.push_back({time, upgraded});
      });
      reply(res, 201, patient_json(snap->history));
    });
  });

  const auto patient = [this](const httplib::Request& req) {
    const auto p = store_.get(req.matches[1]);
    if (!p) throw StoreNotFound("unknown patient '" + std::string(req.matches[1]) + "'");
    return p;
  };

  s.Get(R"(/patients/([^/]+)/survival)", [this, patient](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto p = patient(req);
      const NewPatientState state = surveillance_state(p->history);
      const double from = query_number(req, "from").value_or(state.t);
      const double to = query_number(req, "to").value_or(config_.horizon);
      const int points = query_points(req, 50);
      if (from < state.t) throw HttpError(400, "from precedes the last negative biopsy", "from");
      if (to > config_.horizon || to < from) throw HttpError(400, "to must lie in [from, horizon]", "to");
      const auto pp = posterior_for(*p);
      json out = to_json(survival_curve(*pp, from, to, points));
      out["t"] = state.t;
      out["s"] = state.s;
      reply(res, 200, out);
    });
  });

  s.Get(R"(/patients/([^/]+)/psa-fit)", [this, patient](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto p = patient(req);
      const NewPatientState state = surveillance_state(p->history);
      const int points = query_points(req, 50);
      const double to = query_number(req, "to").value_or(std::max(state.s, state.t));
      if (to < 0.0 || to > config_.horizon) throw HttpError(400, "to must lie in [0, horizon]", "to");
      std::vector<double> grid;
      for (int i = 0; i < points; ++i) grid.push_back(points == 1 ? to : to * i / (points - 1.0));
      const auto pp = posterior_for(*p);
      reply(res, 200, to_json(fitted_psa_curve(*pp, grid)));
    });
  });

  s.Get(R"(/patients/([^/]+)/proposal)", [this, patient](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto p = patient(req);
      const NewPatientState state = surveillance_state(p->history);
      if (!req.has_param("policy")) throw HttpError(400, "missing query parameter", "policy");
      PolicyKind policy;
      try {
        policy = PolicyKind::parse(req.get_param_value("policy"));
        policy.validate();
      } catch (const std::exception& e) {
        throw HttpError(400, e.what(), "policy");
      }
      ScheduleOptions options = config_.schedule_options();
      options.kappa = query_number(req, "kappa");
      if (options.kappa && !(*options.kappa > 0.0 && *options.kappa < 1.0))
        throw HttpError(400, "kappa must lie strictly inside (0, 1)", "kappa");
      if (policy.selects_kappa() && !options.kappa) {
        const std::pair<int, double> key{static_cast<int>(policy.kappa.rule), state.t};
        std::optional<double> cached;
        {
          std::lock_guard lock(cache_mutex_);
          if (const auto it = kappas_.find(key); it != kappas_.end()) cached = it->second;
        }
        if (!cached) {
          cached = policy_kappa(model_.posterior, policy, state.t, options);
          std::lock_guard lock(cache_mutex_);
          kappas_[key] = *cached;
        }
        options.kappa = cached;
      }
      const double t_nv = query_number(req, "t_nv").value_or(next_visit_after(state.s));
      if (!(t_nv > state.s)) throw HttpError(400, "t_nv must be after the last PSA time", "t_nv");

      std::shared_ptr<const PredictivePosterior> pp;
      if (policy.personalized()) pp = posterior_for(*p);
      const ScheduleProposal proposal = schedule_patient(model_.posterior, state, policy, options, pp.get());
      json out = proposal_response(proposal, state, t_nv);
      reply(res, 200, out);
    });
  });

  s.Get("/model/summary", [this](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { reply(res, 200, model_summary(model_)); });
  });

  s.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) fail(res, res.status, res.status == 404 ? "not found" : "request failed");
  });
}

}  // namespace asched
