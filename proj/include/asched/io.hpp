#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "asched/inference.hpp"

namespace asched {

enum class PatientFormat { Csv, Json };

// Format from a file extension (.csv / .json); throws UsageError otherwise.
PatientFormat patient_format_for(const std::string& path);

// CSV columns (any order, header required): patient_id, age, time_years,
// psa_ng_ml, biopsy_time_years, upgraded. A row carries a PSA measurement,
// a biopsy, or both; blank fields are absent. Rows of one patient are in
// time order. JSON: an array, or {"patients": [...]}, of
//   {"patient_id", "age", "psa": [{"time_years", "psa_ng_ml"}],
//    "biopsies": [{"biopsy_time_years", "upgraded"}]}.
// Errors are DataError with the row number (1-based, header is row 1; the
// patient index for JSON) and the field.
std::vector<PatientHistory> parse_patient_csv(std::string_view text);
std::vector<PatientHistory> parse_patient_json(std::string_view text);
std::vector<PatientHistory> parse_patient_file(std::string_view bytes, PatientFormat format);
std::vector<PatientHistory> read_patient_file(const std::string& path);

std::string write_patient_csv(const std::vector<PatientHistory>& patients);
std::string write_patient_json(const std::vector<PatientHistory>& patients);

inline constexpr const char* kArtifactFormat = "asched-model";
inline constexpr int kArtifactVersion = 1;

struct ModelArtifact {
  PosteriorSamples posterior;  // carries the ModelSpec and PriorConfig
  std::string note;
};

// JSON with a {"format", "version"} header; doubles as hex-float strings so
// load(save(a)) is bit-exact.
std::string save_model(const ModelArtifact& artifact);
// DataError on malformed or truncated input; DataError naming both versions
// on a version mismatch.
ModelArtifact load_model(std::string_view bytes);
void write_model_file(const std::string& path, const ModelArtifact& artifact);
ModelArtifact read_model_file(const std::string& path);

// Single-draw artifact of the published PRIAS posterior means.
ModelArtifact default_prias_artifact();

bool operator==(const Theta& a, const Theta& b);
bool operator==(const Draw& a, const Draw& b);
bool operator==(const Diagnostics& a, const Diagnostics& b);
bool operator==(const PosteriorSamples& a, const PosteriorSamples& b);

std::string read_text_file(const std::string& path);
// Write to a temporary sibling, then rename over path.
void write_text_file_atomic(const std::string& path, const std::string& text);

}  // namespace asched
