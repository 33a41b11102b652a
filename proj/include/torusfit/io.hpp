#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "torusfit/probe.hpp"
#include "torusfit/solver.hpp"
#include "torusfit/verify.hpp"

namespace torusfit {

using json = nlohmann::ordered_json;

inline constexpr int kModelSchemaVersion = 1;
inline constexpr int kReportSchemaVersion = 1;

/// 17 significant digits: round-trips every finite double and keeps CSV
/// output byte-stable across runs.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline json vec_to_json(const Vec& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline Vec vec_from_json(const json& a) {
  Vec v(static_cast<Eigen::Index>(a.size()));
  for (size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
  return v;
}

inline json index_set_to_json(const IndexSet& s) {
  json a = json::array();
  for (const auto& k : s.idx) {
    json kk = json::array();
    for (int i = 0; i < k.dim(); ++i) kk.push_back(k[i]);
    a.push_back(kk);
  }
  return a;
}

inline json table_to_json(const Eigen::MatrixXd& t) {
  json rows = json::array();
  for (int r = 0; r < t.rows(); ++r) {
    json row = json::array();
    for (int c = 0; c < t.cols(); ++c) row.push_back(t(r, c));
    rows.push_back(row);
  }
  return rows;
}

inline Eigen::MatrixXd table_from_json(const json& rows, int expect_rows, int expect_cols) {
  if (static_cast<int>(rows.size()) != expect_rows)
    throw ConfigError("model coefficients: wrong component count");
  Eigen::MatrixXd t(expect_rows, expect_cols);
  for (int r = 0; r < expect_rows; ++r) {
    if (static_cast<int>(rows[static_cast<size_t>(r)].size()) != expect_cols)
      throw ConfigError("model coefficients: wrong index count");
    for (int c = 0; c < expect_cols; ++c)
      t(r, c) = rows[static_cast<size_t>(r)][static_cast<size_t>(c)].get<double>();
  }
  return t;
}

/// Torus model document. Round-trips bit-exactly for finite doubles (numbers
/// are emitted in shortest round-trip form).
inline json model_to_json(const TorusModel& m) {
  json j;
  j["schema_version"] = kModelSchemaVersion;
  j["n"] = m.n;
  j["N"] = m.N;
  j["family"] = to_string(m.family);
  j["X"] = index_set_to_json(m.X);
  j["Y"] = index_set_to_json(m.Y);
  j["a"] = table_to_json(m.a);
  j["b"] = table_to_json(m.b);
  j["c"] = table_to_json(m.c);
  j["d"] = table_to_json(m.d);
  return j;
}

inline TorusModel model_from_json(const json& j) {
  if (j.value("schema_version", 0) != kModelSchemaVersion)
    throw ConfigError("model: unsupported schema_version");
  TorusModel m = TorusModel::zero(family_from_string(j.at("family").get<std::string>()),
                                  j.at("N").get<int>(), j.at("n").get<int>());
  // the index enumeration is derived from (family, N); verify the document
  json X = index_set_to_json(m.X), Y = index_set_to_json(m.Y);
  if (j.at("X") != X || j.at("Y") != Y)
    throw ConfigError("model: index sets do not match the family enumeration");
  m.a = table_from_json(j.at("a"), m.n, m.X.size());
  m.b = table_from_json(j.at("b"), m.n, m.X.size());
  m.c = table_from_json(j.at("c"), m.n, m.Y.size());
  m.d = table_from_json(j.at("d"), m.n, m.Y.size());
  if (!m.respects_mask()) throw ConfigError("model: coefficients violate the family mask");
  return m;
}

inline json spec_to_json(const ObjectiveSpec& s) {
  json j;
  j["mode"] = to_string(s.mode);
  j["lambda"] = {s.lambda[0], s.lambda[1], s.lambda[2], s.lambda[3], s.lambda[4]};
  j["rho"] = s.rho;
  if (s.mode == LabelMode::action) j["action_label"] = vec_to_json(s.action_label);
  if (s.mode == LabelMode::frequency) j["frequency_label"] = vec_to_json(s.frequency_label);
  return j;
}

inline ObjectiveSpec spec_from_json(const json& j) {
  ObjectiveSpec s;
  s.mode = label_mode_from_string(j.value("mode", "unlabelled"));
  if (j.contains("lambda")) {
    auto l = j.at("lambda");
    if (l.size() != 5) throw ConfigError("objective.lambda: needs 5 weights");
    for (size_t i = 0; i < 5; ++i) s.lambda[i] = l[i].get<double>();
  }
  s.rho = j.value("rho", 0.0);
  if (j.contains("action_label")) s.action_label = vec_from_json(j.at("action_label"));
  if (j.contains("frequency_label"))
    s.frequency_label = vec_from_json(j.at("frequency_label"));
  return s;
}

inline json solver_options_to_json(const SolverOptions& o) {
  json j;
  j["damping_init"] = o.damping_init;
  j["damping_decrease"] = o.damping_decrease;
  j["damping_increase"] = o.damping_increase;
  j["max_iterations"] = o.max_iterations;
  j["gradient_tol"] = o.gradient_tol;
  j["step_tol"] = o.step_tol;
  j["objective_tol"] = o.objective_tol;
  j["plateau_enabled"] = o.plateau_enabled;
  j["plateau_window"] = o.plateau_window;
  j["plateau_rel_decrease"] = o.plateau_rel_decrease;
  j["plateau_objective"] = o.plateau_objective;
  return j;
}

inline SolverOptions solver_options_from_json(const json& j) {
  SolverOptions o;
  o.damping_init = j.value("damping_init", o.damping_init);
  o.damping_decrease = j.value("damping_decrease", o.damping_decrease);
  o.damping_increase = j.value("damping_increase", o.damping_increase);
  o.max_iterations = j.value("max_iterations", o.max_iterations);
  o.gradient_tol = j.value("gradient_tol", o.gradient_tol);
  o.step_tol = j.value("step_tol", o.step_tol);
  o.objective_tol = j.value("objective_tol", o.objective_tol);
  o.plateau_enabled = j.value("plateau_enabled", o.plateau_enabled);
  o.plateau_window = j.value("plateau_window", o.plateau_window);
  o.plateau_rel_decrease = j.value("plateau_rel_decrease", o.plateau_rel_decrease);
  o.plateau_objective = j.value("plateau_objective", o.plateau_objective);
  return o;
}

inline json report_to_json(const FitReport& r) {
  json j;
  j["schema_version"] = kReportSchemaVersion;
  j["objective"] = r.objective;
  j["per_point_objective"] = r.per_point_objective;
  j["sigma_h"] = r.sigma_h;
  j["omega"] = vec_to_json(r.omega);
  j["actions"] = vec_to_json(r.actions);
  j["consistency"] = r.consistency;
  j["iterations"] = r.iterations;
  j["termination"] = to_string(r.termination);
  j["spec"] = spec_to_json(r.spec);
  j["options"] = solver_options_to_json(r.options);
  j["model"] = model_to_json(r.model);
  return j;
}

inline Termination termination_from_string(const std::string& s) {
  for (Termination t : {Termination::gradient, Termination::step, Termination::objective,
                        Termination::plateau, Termination::max_iterations,
                        Termination::degenerate})
    if (to_string(t) == s) return t;
  throw ConfigError("report.termination: unknown value '" + s + "'");
}

inline FitReport report_from_json(const json& j) {
  if (j.value("schema_version", 0) != kReportSchemaVersion)
    throw ConfigError("report: unsupported schema_version");
  FitReport r;
  r.objective = j.at("objective").get<double>();
  r.per_point_objective = j.at("per_point_objective").get<double>();
  r.sigma_h = j.at("sigma_h").get<double>();
  r.omega = vec_from_json(j.at("omega"));
  r.actions = vec_from_json(j.at("actions"));
  r.consistency = j.at("consistency").get<double>();
  r.iterations = j.at("iterations").get<int>();
  r.termination = termination_from_string(j.at("termination").get<std::string>());
  r.spec = spec_from_json(j.at("spec"));
  r.options = solver_options_from_json(j.at("options"));
  r.model = model_from_json(j.at("model"));
  return r;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

inline void write_json(const std::filesystem::path& path, const json& j) {
  write_text(path, j.dump(2) + "\n");
}

inline json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return json::parse(in);
}

/// Rows of 17-significant-digit fields; reruns produce byte-identical files.
class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header) : cols_(header.size()) {
    for (size_t i = 0; i < header.size(); ++i) {
      if (i) out_ << ',';
      out_ << header[i];
    }
    out_ << '\n';
  }

  CsvWriter& field(double v) { return raw(format_double(v)); }
  CsvWriter& field(int v) { return raw(std::to_string(v)); }
  CsvWriter& field(const std::string& v) { return raw(v); }

  void end_row() {
    if (at_ != cols_) throw std::logic_error("csv row has wrong arity");
    out_ << '\n';
    at_ = 0;
  }

  std::string str() const { return out_.str(); }

 private:
  CsvWriter& raw(const std::string& s) {
    if (at_) out_ << ',';
    out_ << s;
    ++at_;
    return *this;
  }
  std::ostringstream out_;
  size_t cols_, at_ = 0;
};

inline std::string trajectory_csv(const Trajectory& traj) {
  int n = traj.q.empty() ? 0 : static_cast<int>(traj.q[0].size());
  std::vector<std::string> header{"t"};
  for (int i = 0; i < n; ++i) header.push_back("q" + std::to_string(i + 1));
  for (int i = 0; i < n; ++i) header.push_back("p" + std::to_string(i + 1));
  header.push_back("H");
  CsvWriter csv(header);
  for (int s = 0; s < traj.size(); ++s) {
    csv.field(traj.t[static_cast<size_t>(s)]);
    for (int i = 0; i < n; ++i) csv.field(traj.q[static_cast<size_t>(s)][i]);
    for (int i = 0; i < n; ++i) csv.field(traj.p[static_cast<size_t>(s)][i]);
    csv.field(traj.energy[static_cast<size_t>(s)]);
    csv.end_row();
  }
  return csv.str();
}

inline std::string section_csv(const SectionSet& sec) {
  CsvWriter csv({"t", "x", "xdot", "source"});
  for (const auto& pt : sec.points) {
    csv.field(pt.t).field(pt.x).field(pt.xdot).field(sec.source);
    csv.end_row();
  }
  return csv.str();
}

/// Per-index probe summary, ordered by lattice index.
inline std::string probe_summary_csv(const ActionGrid& grid, const ProbeResult& res) {
  CsvWriter csv({"m1", "m2", "J1", "J2", "omega1", "omega2", "sigma", "objective",
                 "consistency", "accepted", "generation", "parent_m1", "parent_m2",
                 "termination"});
  for (const auto& [m, e] : res.entries) {
    Vec J = grid.point(m);
    csv.field(m[0]).field(m[1]);
    csv.field(J[0]).field(grid.n > 1 ? J[1] : 0.0);
    csv.field(e.report.omega.size() > 0 ? e.report.omega[0] : 0.0);
    csv.field(e.report.omega.size() > 1 ? e.report.omega[1] : 0.0);
    csv.field(e.report.sigma_h).field(e.report.objective).field(e.report.consistency);
    csv.field(e.accepted ? 1 : 0).field(e.generation);
    csv.field(e.has_parent ? e.parent[0] : -1).field(e.has_parent ? e.parent[1] : -1);
    csv.field(to_string(e.report.termination));
    csv.end_row();
  }
  return csv.str();
}

}  // namespace torusfit
