#include "asched/io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "asched/defaults.hpp"
#include "json.hpp"

namespace asched {

using nlohmann::json;

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

std::string where(long row, const std::string& field) {
  std::string out = "row " + std::to_string(row);
  if (!field.empty()) out += ", field " + field;
  return out;
}

[[noreturn]] void fail(const std::string& msg, long row, const std::string& field) {
  throw DataError(where(row, field) + ": " + msg, row, field);
}

double parse_number(const std::string& text, long row, const std::string& field) {
  double v = 0.0;
  const char* begin = text.data();
  const char* end = begin + text.size();
  if (begin != end && *begin == '+') ++begin;
  const auto [p, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || p != end || !std::isfinite(v)) fail("'" + text + "' is not a finite number", row, field);
  return v;
}

bool parse_flag(const std::string& text, long row, const std::string& field) {
  const std::string t = lower(text);
  if (t == "1" || t == "true" || t == "yes") return true;
  if (t == "0" || t == "false" || t == "no") return false;
  fail("'" + text + "' is not a boolean (0/1/true/false/yes/no)", row, field);
}

// RFC 4180 records: quoted fields may hold commas, doubled quotes and newlines.
std::vector<std::vector<std::string>> csv_records(std::string_view text, std::vector<long>& line_of) {
  std::vector<std::vector<std::string>> out;
  std::vector<std::string> rec;
  std::string field;
  bool quoted = false, any = false;
  long line = 1, start = 1;
  const auto end_record = [&] {
    rec.push_back(std::move(field));
    field.clear();
    const bool blank = rec.size() == 1 && trim(rec[0]).empty();
    if (!blank) {
      out.push_back(std::move(rec));
      line_of.push_back(start);
    }
    rec.clear();
    any = false;
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        if (c == '\n') ++line;
        field += c;
      }
      continue;
    }
    if (!any) start = line;
    any = true;
    if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      rec.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      end_record();
      ++line;
    } else if (c != '\r') {
      field += c;
    }
  }
  if (quoted) throw DataError("unterminated quoted field starting on line " + std::to_string(start), start);
  if (any) end_record();
  return out;
}

struct RowIndex {
  std::vector<long> psa, biopsy;
  long first = 0;
};

// Re-throws a PatientHistory invariant violation against the file row.
void validate_rows(const PatientHistory& h, const RowIndex& rows) {
  try {
    h.validate();
  } catch (const DataError& e) {
    long row = rows.first;
    const auto pick = [&](const std::vector<long>& v) {
      if (e.row() >= 0 && static_cast<std::size_t>(e.row()) < v.size()) row = v[static_cast<std::size_t>(e.row())];
    };
    if (e.field() == "time_years" || e.field() == "psa_ng_ml") pick(rows.psa);
    if (e.field() == "biopsy_time_years" || e.field() == "upgraded") pick(rows.biopsy);
    fail(std::string(e.what()) + " (patient '" + h.id + "')", row, e.field());
  }
}

}  // namespace

PatientFormat patient_format_for(const std::string& path) {
  const std::string ext = lower(std::filesystem::path(path).extension().string());
  if (ext == ".csv") return PatientFormat::Csv;
  if (ext == ".json") return PatientFormat::Json;
  throw UsageError("cannot tell the patient file format of '" + path + "' (expected .csv or .json)");
}

std::vector<PatientHistory> parse_patient_csv(std::string_view text) {
  if (text.size() >= 3 && text.substr(0, 3) == "\xEF\xBB\xBF") text.remove_prefix(3);
  std::vector<long> line_of;
  const auto records = csv_records(text, line_of);
  if (records.empty()) return {};

  static const std::vector<std::string> kColumns{"patient_id",        "age",     "time_years", "psa_ng_ml",
                                                 "biopsy_time_years", "upgraded"};
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < records[0].size(); ++i) {
    const std::string name = lower(trim(records[0][i]));
    if (std::find(kColumns.begin(), kColumns.end(), name) == kColumns.end())
      fail("unknown column '" + name + "'", 1, name);
    if (!col.emplace(name, i).second) fail("duplicate column '" + name + "'", 1, name);
  }
  for (const char* required : {"patient_id", "age"})
    if (!col.count(required)) fail(std::string("missing column '") + required + "'", 1, required);

  std::vector<PatientHistory> out;
  std::vector<RowIndex> rows;
  std::map<std::string, std::size_t> index;
  for (std::size_t r = 1; r < records.size(); ++r) {
    const long row = static_cast<long>(r) + 1;
    const auto& rec = records[r];
    if (rec.size() != records[0].size())
      fail("expected " + std::to_string(records[0].size()) + " fields, found " + std::to_string(rec.size()), row, "");
    const auto get = [&](const char* name) { return col.count(name) ? trim(rec[col.at(name)]) : std::string(); };

    const std::string id = get("patient_id");
    if (id.empty()) fail("patient id is empty", row, "patient_id");
    const std::string age_text = get("age");
    auto found = index.find(id);
    if (found == index.end()) {
      if (age_text.empty()) fail("age is required on the first row of a patient", row, "age");
      found = index.emplace(id, out.size()).first;
      out.push_back({id, parse_number(age_text, row, "age"), {}, {}});
      rows.push_back({{}, {}, row});
    } else if (!age_text.empty() && parse_number(age_text, row, "age") != out[found->second].age_at_entry) {
      fail("age differs from the patient's first row", row, "age");
    }
    PatientHistory& h = out[found->second];
    RowIndex& ri = rows[found->second];

    const std::string t = get("time_years"), psa = get("psa_ng_ml");
    if (t.empty() != psa.empty())
      fail("time_years and psa_ng_ml must both be given or both be blank", row, t.empty() ? "time_years" : "psa_ng_ml");
    if (!t.empty()) {
      const double time = parse_number(t, row, "time_years");
      const double value = parse_number(psa, row, "psa_ng_ml");
      if (!(value > 0.0)) fail("PSA value must be positive", row, "psa_ng_ml");
      if (!h.psa.empty() && time == h.psa.back().time) fail("duplicate PSA time " + t, row, "time_years");
      if (!h.psa.empty() && time < h.psa.back().time) fail("PSA rows are not in time order", row, "time_years");
      h.psa.push_back({time, value});
      ri.psa.push_back(row);
    }

    const std::string bt = get("biopsy_time_years"), up = get("upgraded");
    if (bt.empty() != up.empty())
      fail("biopsy_time_years and upgraded must both be given or both be blank", row,
           bt.empty() ? "biopsy_time_years" : "upgraded");
    if (!bt.empty()) {
      const double time = parse_number(bt, row, "biopsy_time_years");
      const bool upgraded = parse_flag(up, row, "upgraded");
      if (!h.biopsies.empty() && time == h.biopsies.back().time)
        fail("duplicate biopsy time " + bt, row, "biopsy_time_years");
      if (!h.biopsies.empty() && time < h.biopsies.back().time)
        fail("biopsy rows are not in time order", row, "biopsy_time_years");
      h.biopsies.push_back({time, upgraded});
      ri.biopsy.push_back(row);
    }
  }
  for (std::size_t i = 0; i < out.size(); ++i) validate_rows(out[i], rows[i]);
  return out;
}

std::vector<PatientHistory> parse_patient_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw DataError(std::string("patient JSON does not parse: ") + e.what());
  }
  if (doc.is_object() && doc.contains("patients")) doc = doc["patients"];
  if (!doc.is_array()) throw DataError("patient JSON must be an array or an object with a 'patients' array");

  std::vector<PatientHistory> out;
  std::map<std::string, long> seen;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const long row = static_cast<long>(i) + 1;
    const json& p = doc[i];
    if (!p.is_object()) fail("patient entry must be an object", row, "");
    const auto number = [&](const json& obj, const char* key, const std::string& path) {
      if (!obj.contains(key)) fail("missing field", row, path);
      if (!obj.at(key).is_number()) fail("must be a number", row, path);
      const double v = obj.at(key).get<double>();
      if (!std::isfinite(v)) fail("must be finite", row, path);
      return v;
    };
    PatientHistory h;
    if (!p.contains("patient_id")) fail("missing field", row, "patient_id");
    const json& id = p["patient_id"];
    if (id.is_string()) h.id = id.get<std::string>();
    else if (id.is_number_integer()) h.id = std::to_string(id.get<long long>());
    else fail("must be a string", row, "patient_id");
    if (h.id.empty()) fail("patient id is empty", row, "patient_id");
    if (!seen.emplace(h.id, row).second) fail("duplicate patient id '" + h.id + "'", row, "patient_id");
    h.age_at_entry = number(p, "age", "age");

    if (p.contains("psa")) {
      if (!p["psa"].is_array()) fail("must be an array", row, "psa");
      for (std::size_t k = 0; k < p["psa"].size(); ++k) {
        const std::string path = "psa[" + std::to_string(k) + "]";
        const json& m = p["psa"][k];
        if (!m.is_object()) fail("must be an object", row, path);
        h.psa.push_back({number(m, "time_years", path + ".time_years"), number(m, "psa_ng_ml", path + ".psa_ng_ml")});
      }
    }
    if (p.contains("biopsies")) {
      if (!p["biopsies"].is_array()) fail("must be an array", row, "biopsies");
      for (std::size_t k = 0; k < p["biopsies"].size(); ++k) {
        const std::string path = "biopsies[" + std::to_string(k) + "]";
        const json& b = p["biopsies"][k];
        if (!b.is_object()) fail("must be an object", row, path);
        const double time = number(b, "biopsy_time_years", path + ".biopsy_time_years");
        if (!b.contains("upgraded")) fail("missing field", row, path + ".upgraded");
        const json& u = b["upgraded"];
        bool upgraded = false;
        if (u.is_boolean()) upgraded = u.get<bool>();
        else if (u.is_number_integer() && (u.get<int>() == 0 || u.get<int>() == 1)) upgraded = u.get<int>() == 1;
        else fail("must be a boolean", row, path + ".upgraded");
        h.biopsies.push_back({time, upgraded});
      }
    }
    try {
      h.validate();
    } catch (const DataError& e) {
      std::string path = e.field();
      if (e.row() >= 0) {
        const bool psa = e.field() == "time_years" || e.field() == "psa_ng_ml";
        path = (psa ? "psa[" : "biopsies[") + std::to_string(e.row()) + "]." + e.field();
      }
      fail(std::string(e.what()) + " (patient '" + h.id + "')", row, path);
    }
    out.push_back(std::move(h));
  }
  return out;
}

std::vector<PatientHistory> parse_patient_file(std::string_view bytes, PatientFormat format) {
  return format == PatientFormat::Csv ? parse_patient_csv(bytes) : parse_patient_json(bytes);
}

std::vector<PatientHistory> read_patient_file(const std::string& path) {
  return parse_patient_file(read_text_file(path), patient_format_for(path));
}

namespace {

std::string shortest(double v) {
  char buf[32];
  for (int precision = 15; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

}  // namespace

std::string write_patient_csv(const std::vector<PatientHistory>& patients) {
  std::ostringstream out;
  out << "patient_id,age,time_years,psa_ng_ml,biopsy_time_years,upgraded\n";
  for (const auto& h : patients) {
    const std::string id = csv_field(h.id);
    const std::size_t n = std::max(h.psa.size(), h.biopsies.size());
    if (n == 0) out << id << ',' << shortest(h.age_at_entry) << ",,,,\n";
    for (std::size_t i = 0; i < n; ++i) {
      out << id << ',' << (i == 0 ? shortest(h.age_at_entry) : std::string()) << ',';
      if (i < h.psa.size()) out << shortest(h.psa[i].time) << ',' << shortest(h.psa[i].psa);
      else out << ',';
      out << ',';
      if (i < h.biopsies.size()) out << shortest(h.biopsies[i].time) << ',' << (h.biopsies[i].upgraded ? 1 : 0);
      else out << ',';
      out << '\n';
    }
  }
  return out.str();
}

std::string write_patient_json(const std::vector<PatientHistory>& patients) {
  json arr = json::array();
  for (const auto& h : patients) {
    json p{{"patient_id", h.id}, {"age", h.age_at_entry}, {"psa", json::array()}, {"biopsies", json::array()}};
    for (const auto& m : h.psa) p["psa"].push_back({{"time_years", m.time}, {"psa_ng_ml", m.psa}});
    for (const auto& b : h.biopsies) p["biopsies"].push_back({{"biopsy_time_years", b.time}, {"upgraded", b.upgraded}});
    arr.push_back(std::move(p));
  }
  return json{{"patients", arr}}.dump(2) + "\n";
}

// ---- model artifact -------------------------------------------------------

namespace {

std::string hex(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

double unhex(const json& j, const std::string& path) {
  if (j.is_number()) return j.get<double>();
  if (!j.is_string()) throw DataError("artifact field " + path + " must be a number", -1, path);
  const std::string s = j.get<std::string>();
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size())
    throw DataError("artifact field " + path + " holds '" + s + "', not a number", -1, path);
  return v;
}

json hex_vector(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(hex(v[i]));
  return out;
}

json hex_vector(const std::vector<double>& v) {
  json out = json::array();
  for (double x : v) out.push_back(hex(x));
  return out;
}

const json& field(const json& obj, const char* key, const std::string& path) {
  if (!obj.is_object()) throw DataError("artifact field " + path + " must be an object", -1, path);
  const auto it = obj.find(key);
  if (it == obj.end()) throw DataError("artifact is missing " + path + "." + key, -1, path + "." + key);
  return *it;
}

Eigen::VectorXd read_vector(const json& j, const std::string& path) {
  if (!j.is_array()) throw DataError("artifact field " + path + " must be an array", -1, path);
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = unhex(j[i], path);
  return v;
}

std::vector<double> read_list(const json& j, const std::string& path) {
  const Eigen::VectorXd v = read_vector(j, path);
  return {v.data(), v.data() + v.size()};
}

json write_matrix(const Eigen::MatrixXd& m) {
  json data = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(hex(m(i, j)));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Eigen::MatrixXd read_matrix(const json& j, const std::string& path) {
  const auto rows = field(j, "rows", path).get<Eigen::Index>();
  const auto cols = field(j, "cols", path).get<Eigen::Index>();
  const Eigen::VectorXd data = read_vector(field(j, "data", path), path + ".data");
  if (rows < 0 || cols < 0 || data.size() != rows * cols)
    throw DataError("artifact matrix " + path + " has the wrong number of entries", -1, path);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = data[i * cols + c];
  return m;
}

json write_spline(const SplineBasis& s) {
  return {{"degree", s.degree}, {"internal_knots", hex_vector(s.internal_knots)}, {"low", hex(s.low)},
          {"high", hex(s.high)}};
}

SplineBasis read_spline(const json& j, const std::string& path) {
  SplineBasis s;
  s.degree = field(j, "degree", path).get<int>();
  s.internal_knots = read_list(field(j, "internal_knots", path), path + ".internal_knots");
  s.low = unhex(field(j, "low", path), path + ".low");
  s.high = unhex(field(j, "high", path), path + ".high");
  return s;
}

json write_time_basis(const TimeBasis& tb) {
  switch (tb.kind()) {
    case TimeBasis::Kind::Linear: return {{"kind", "linear"}};
    case TimeBasis::Kind::BSpline: return {{"kind", "bspline"}, {"spline", write_spline(tb.spline())}};
    case TimeBasis::Kind::Natural: return {{"kind", "natural"}, {"spline", write_spline(tb.spline())}};
  }
  return {};
}

TimeBasis read_time_basis(const json& j, const std::string& path) {
  const std::string kind = field(j, "kind", path).get<std::string>();
  if (kind == "linear") return TimeBasis::linear();
  const SplineBasis s = read_spline(field(j, "spline", path), path + ".spline");
  if (kind == "bspline") return TimeBasis::bspline(s);
  if (kind == "natural") return TimeBasis::natural(s.internal_knots, s.low, s.high);
  throw DataError("unknown time basis kind '" + kind + "' at " + path, -1, path);
}

json write_spec(const ModelSpec& spec) {
  return {{"fixed_time", write_time_basis(spec.fixed_time)},
          {"random_time", write_time_basis(spec.random_time)},
          {"functional_form", spec.functional_form == FunctionalForm::ValueOnly ? "value" : "value_and_slope"},
          {"age_center", hex(spec.age_center)},
          {"include_age_terms", spec.include_age_terms}};
}

ModelSpec read_spec(const json& j) {
  ModelSpec spec;
  spec.fixed_time = read_time_basis(field(j, "fixed_time", "spec"), "spec.fixed_time");
  spec.random_time = read_time_basis(field(j, "random_time", "spec"), "spec.random_time");
  const std::string form = field(j, "functional_form", "spec").get<std::string>();
  if (form == "value") spec.functional_form = FunctionalForm::ValueOnly;
  else if (form == "value_and_slope") spec.functional_form = FunctionalForm::ValueAndSlope;
  else throw DataError("unknown functional form '" + form + "'", -1, "spec.functional_form");
  spec.age_center = unhex(field(j, "age_center", "spec"), "spec.age_center");
  spec.include_age_terms = field(j, "include_age_terms", "spec").get<bool>();
  spec.validate();
  return spec;
}

#define ASCHED_PRIOR_FIELDS(X)                                                                                    \
  X(beta_var) X(sigma2_shape) X(sigma2_rate) X(ridge_tau_shape) X(ridge_tau_rate) X(ridge_psi_shape)              \
  X(ridge_psi_rate) X(pspline_tau_shape) X(pspline_tau_rate) X(pspline_ridge_eps) X(weibull_log_var)

json write_priors(const PriorConfig& p) {
  json j{{"wishart_df", p.wishart_df}};
#define X(name) j[#name] = hex(p.name);
  ASCHED_PRIOR_FIELDS(X)
#undef X
  return j;
}

PriorConfig read_priors(const json& j) {
  PriorConfig p;
  p.wishart_df = field(j, "wishart_df", "priors").get<int>();
#define X(name) p.name = unhex(field(j, #name, "priors"), "priors." #name);
  ASCHED_PRIOR_FIELDS(X)
#undef X
  p.validate();
  return p;
}

#undef ASCHED_PRIOR_FIELDS

json write_theta(const Theta& t) {
  json j{{"beta", hex_vector(t.beta)}, {"gamma", hex_vector(t.gamma)}, {"alpha", hex_vector(t.alpha)},
         {"sigma2", hex(t.sigma2)}, {"D", write_matrix(t.D)}};
  if (const auto* w = std::get_if<WeibullBaseline>(&t.baseline)) {
    j["baseline"] = {{"type", "weibull"}, {"shape", hex(w->shape)}, {"scale", hex(w->scale)}};
  } else {
    const auto& p = std::get<PSplineBaseline>(t.baseline);
    j["baseline"] = {{"type", "pspline"},
                     {"spline", write_spline(p.basis)},
                     {"intercept", hex(p.intercept)},
                     {"coefficients", hex_vector(p.coefficients)},
                     {"penalty_order", p.penalty_order}};
  }
  j["hyper"] = {{"tau_gamma", hex(t.hyper.tau_gamma)}, {"psi_gamma", hex_vector(t.hyper.psi_gamma)},
                {"tau_alpha", hex(t.hyper.tau_alpha)}, {"psi_alpha", hex_vector(t.hyper.psi_alpha)},
                {"tau_h", hex(t.hyper.tau_h)}};
  return j;
}

Theta read_theta(const json& j, const std::string& path) {
  Theta t;
  t.beta = read_vector(field(j, "beta", path), path + ".beta");
  t.gamma = read_vector(field(j, "gamma", path), path + ".gamma");
  t.alpha = read_vector(field(j, "alpha", path), path + ".alpha");
  t.sigma2 = unhex(field(j, "sigma2", path), path + ".sigma2");
  t.D = read_matrix(field(j, "D", path), path + ".D");
  const json& b = field(j, "baseline", path);
  const std::string bp = path + ".baseline";
  const std::string type = field(b, "type", bp).get<std::string>();
  if (type == "weibull") {
    t.baseline = WeibullBaseline{unhex(field(b, "shape", bp), bp + ".shape"), unhex(field(b, "scale", bp), bp + ".scale")};
  } else if (type == "pspline") {
    PSplineBaseline p;
    p.basis = read_spline(field(b, "spline", bp), bp + ".spline");
    p.intercept = unhex(field(b, "intercept", bp), bp + ".intercept");
    p.coefficients = read_vector(field(b, "coefficients", bp), bp + ".coefficients");
    p.penalty_order = field(b, "penalty_order", bp).get<int>();
    t.baseline = std::move(p);
  } else {
    throw DataError("unknown baseline type '" + type + "'", -1, bp + ".type");
  }
  const json& h = field(j, "hyper", path);
  const std::string hp = path + ".hyper";
  t.hyper.tau_gamma = unhex(field(h, "tau_gamma", hp), hp + ".tau_gamma");
  t.hyper.psi_gamma = read_vector(field(h, "psi_gamma", hp), hp + ".psi_gamma");
  t.hyper.tau_alpha = unhex(field(h, "tau_alpha", hp), hp + ".tau_alpha");
  t.hyper.psi_alpha = read_vector(field(h, "psi_alpha", hp), hp + ".psi_alpha");
  t.hyper.tau_h = unhex(field(h, "tau_h", hp), hp + ".tau_h");
  return t;
}

bool same(double a, double b) { return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b); }

bool same(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    if (!same(a.data()[i], b.data()[i])) return false;
  return true;
}

}  // namespace

bool operator==(const Theta& a, const Theta& b) {
  const auto& ha = a.hyper;
  const auto& hb = b.hyper;
  return same(a.beta, b.beta) && same(a.gamma, b.gamma) && same(a.alpha, b.alpha) && same(a.sigma2, b.sigma2) &&
         same(a.D, b.D) && a.baseline == b.baseline && same(ha.tau_gamma, hb.tau_gamma) &&
         same(ha.psi_gamma, hb.psi_gamma) && same(ha.tau_alpha, hb.tau_alpha) && same(ha.psi_alpha, hb.psi_alpha) &&
         same(ha.tau_h, hb.tau_h);
}

bool operator==(const Draw& a, const Draw& b) {
  if (!(a.theta == b.theta) || a.b.size() != b.b.size()) return false;
  for (std::size_t i = 0; i < a.b.size(); ++i)
    if (!same(a.b[i], b.b[i])) return false;
  return true;
}

bool operator==(const Diagnostics& a, const Diagnostics& b) {
  if (a.names != b.names || !same(a.rhat, b.rhat) || !same(a.ess, b.ess) || a.acceptance.size() != b.acceptance.size())
    return false;
  for (std::size_t i = 0; i < a.acceptance.size(); ++i)
    if (a.acceptance[i].first != b.acceptance[i].first || !same(a.acceptance[i].second, b.acceptance[i].second))
      return false;
  return true;
}

bool operator==(const PosteriorSamples& a, const PosteriorSamples& b) {
  return a.draws == b.draws && a.chains == b.chains && a.spec == b.spec && a.priors == b.priors &&
         a.diagnostics == b.diagnostics && a.seed == b.seed;
}

std::string save_model(const ModelArtifact& artifact) {
  const PosteriorSamples& ps = artifact.posterior;
  json draws = json::array();
  for (const auto& d : ps.draws) {
    json j = write_theta(d.theta);
    if (!d.b.empty()) {
      json b = json::array();
      for (const auto& v : d.b) b.push_back(hex_vector(v));
      j["b"] = std::move(b);
    }
    draws.push_back(std::move(j));
  }
  json acceptance = json::array();
  for (const auto& [name, rate] : ps.diagnostics.acceptance) acceptance.push_back({name, hex(rate)});
  json doc{{"format", kArtifactFormat},
           {"version", kArtifactVersion},
           {"note", artifact.note},
           {"spec", write_spec(ps.spec)},
           {"priors", write_priors(ps.priors)},
           {"chains", ps.chains},
           {"seed", ps.seed},
           {"diagnostics",
            {{"names", ps.diagnostics.names},
             {"rhat", hex_vector(ps.diagnostics.rhat)},
             {"ess", hex_vector(ps.diagnostics.ess)},
             {"acceptance", acceptance}}},
           {"draws", draws}};
  return doc.dump(1) + "\n";
}

ModelArtifact load_model(std::string_view bytes) {
  json doc;
  try {
    doc = json::parse(bytes.begin(), bytes.end());
  } catch (const json::parse_error& e) {
    throw DataError(std::string("model artifact does not parse (truncated or corrupt): ") + e.what());
  }
  try {
    if (!doc.is_object() || doc.value("format", std::string()) != kArtifactFormat)
      throw DataError(std::string("not a model artifact: missing format header '") + kArtifactFormat + "'");
    const int version = field(doc, "version", "").get<int>();
    if (version != kArtifactVersion)
      throw DataError("model artifact version " + std::to_string(version) + " is not supported (this build reads " +
                          std::to_string(kArtifactVersion) + "); re-fit or convert the model",
                      -1, "version");
    ModelArtifact a;
    a.note = doc.value("note", std::string());
    PosteriorSamples& ps = a.posterior;
    ps.spec = read_spec(field(doc, "spec", ""));
    ps.priors = read_priors(field(doc, "priors", ""));
    ps.chains = field(doc, "chains", "").get<int>();
    ps.seed = field(doc, "seed", "").get<std::uint64_t>();
    const json& diag = field(doc, "diagnostics", "");
    ps.diagnostics.names = field(diag, "names", "diagnostics").get<std::vector<std::string>>();
    ps.diagnostics.rhat = read_vector(field(diag, "rhat", "diagnostics"), "diagnostics.rhat");
    ps.diagnostics.ess = read_vector(field(diag, "ess", "diagnostics"), "diagnostics.ess");
    for (const auto& e : field(diag, "acceptance", "diagnostics"))
      ps.diagnostics.acceptance.emplace_back(e.at(0).get<std::string>(), unhex(e.at(1), "diagnostics.acceptance"));
    const json& draws = field(doc, "draws", "");
    if (!draws.is_array() || draws.empty()) throw DataError("model artifact holds no draws", -1, "draws");
    for (std::size_t i = 0; i < draws.size(); ++i) {
      const std::string path = "draws[" + std::to_string(i) + "]";
      Draw d{read_theta(draws[i], path), {}};
      validate(d.theta, ps.spec);
      if (draws[i].contains("b"))
        for (const auto& v : draws[i]["b"]) d.b.push_back(read_vector(v, path + ".b"));
      ps.draws.push_back(std::move(d));
    }
    if (ps.chains < 1 || ps.draws.size() % static_cast<std::size_t>(ps.chains) != 0)
      throw DataError("draw count is not a multiple of the chain count", -1, "chains");
    return a;
  } catch (const json::exception& e) {
    throw DataError(std::string("model artifact has a malformed field: ") + e.what());
  } catch (const DomainError& e) {
    throw DataError(std::string("model artifact holds invalid parameters: ") + e.what());
  }
}

void write_model_file(const std::string& path, const ModelArtifact& artifact) {
  write_text_file_atomic(path, save_model(artifact));
}

ModelArtifact read_model_file(const std::string& path) { return load_model(read_text_file(path)); }

ModelArtifact default_prias_artifact() {
  ModelArtifact a;
  PosteriorSamples& ps = a.posterior;
  ps.spec = ModelSpec::prias();
  ps.draws.push_back({prias_posterior_means(), {}});
  ps.chains = 1;
  ps.diagnostics.names = parameter_names(ps.draws[0].theta);
  a.note = "Posterior means of the joint model fitted to the PRIAS cohort; Weibull(3, 5) baseline.";
  return a;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file_atomic(const std::string& path, const std::string& text) {
  const std::filesystem::path target(path);
  std::filesystem::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw UsageError("cannot write '" + tmp.string() + "'");
    out << text;
    out.flush();
    if (!out) throw UsageError("failed writing '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, target);
}

}  // namespace asched
