#pragma once

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "asched/workflow.hpp"

namespace httplib {
class Server;
}

namespace asched {

// Patients keyed by id, persisted as one patient-JSON file. Readers get
// immutable snapshots; writers to one id are serialized, and a write either
// validates, persists and publishes a new snapshot or changes nothing.
class PatientStore {
 public:
  struct Snapshot {
    PatientHistory history;
    long version = 0;
  };

  // Loads path when it exists; an empty path keeps the store in memory.
  explicit PatientStore(std::string path = {});

  std::shared_ptr<const Snapshot> get(const std::string& id) const;
  // Throws StoreConflict when the id exists.
  std::shared_ptr<const Snapshot> create(PatientHistory history);
  // Applies edit to a copy of the patient. Throws StoreNotFound for an
  // unknown id; exceptions from edit or validation leave the store unchanged.
  std::shared_ptr<const Snapshot> update(const std::string& id, const std::function<void(PatientHistory&)>& edit);

 private:
  void persist(const std::map<std::string, std::shared_ptr<const Snapshot>>& patients);
  std::mutex& lock_for(const std::string& id);

  std::string path_;
  mutable std::mutex map_mutex_;
  std::mutex file_mutex_;
  std::map<std::string, std::shared_ptr<const Snapshot>> patients_;
  std::map<std::string, std::unique_ptr<std::mutex>> id_locks_;
};

class StoreNotFound : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class StoreConflict : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ServiceConfig {
  std::string store_path;  // empty: in-memory store
  int pairs = 200;
  double horizon = 20.0;
  std::uint64_t seed = 1;
  std::optional<Dataset> cohort;  // kappa selection for F1 / Youden policies
  double delta_t = 1.0;
  PriasRule prias;

  ScheduleOptions schedule_options() const;
};

// Host and port from a "host:port" string (ASCHED_BIND), default
// 127.0.0.1:8080.
std::pair<std::string, int> parse_bind(const std::string& text);

class Service {
 public:
  Service(ModelArtifact model, ServiceConfig config);
  ~Service();

  httplib::Server& server() { return *server_; }
  // Blocks until stop().
  bool listen(const std::string& host, int port);
  // Binds to a free port, returns it; serve with listen_after_bind().
  int bind_any_port(const std::string& host);
  bool listen_after_bind();
  void stop();

  PatientStore& store() { return store_; }

 private:
  void routes();
  std::shared_ptr<const PredictivePosterior> posterior_for(const PatientStore::Snapshot& patient);

  ModelArtifact model_;
  ServiceConfig config_;
  PatientStore store_;
  std::unique_ptr<httplib::Server> server_;

  std::mutex cache_mutex_;
  // patient id -> (version, posterior)
  std::map<std::string, std::pair<long, std::shared_ptr<const PredictivePosterior>>> cache_;
  std::map<std::pair<int, double>, double> kappas_;  // (objective, t) -> kappa
};

}  // namespace asched
