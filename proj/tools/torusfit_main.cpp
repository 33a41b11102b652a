// torusfit command-line front end: isochrone sweeps, single torus fits,
// action-grid probing, and Poincare-section overlays.

#include <CLI11.hpp>

#include <filesystem>
#include <future>
#include <iostream>
#include <thread>

#include "torusfit/io.hpp"
#include "torusfit/svg.hpp"

namespace fs = std::filesystem;
using namespace torusfit;

namespace {

void deep_merge(json& base, const json& overlay) {
  if (!overlay.is_object() || !base.is_object()) {
    base = overlay;
    return;
  }
  for (auto it = overlay.begin(); it != overlay.end(); ++it) {
    if (base.contains(it.key()))
      deep_merge(base[it.key()], it.value());
    else
      base[it.key()] = it.value();
  }
}

void apply_override(json& cfg, const std::string& kv) {
  auto pos = kv.find('=');
  if (pos == std::string::npos)
    throw ConfigError("--set expects key.path=value, got '" + kv + "'");
  std::string path = kv.substr(0, pos), value = kv.substr(pos + 1);
  json* node = &cfg;
  size_t start = 0;
  while (true) {
    size_t dot = path.find('.', start);
    std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (key.empty()) throw ConfigError("--set: empty key segment in '" + path + "'");
    if (dot == std::string::npos) {
      json parsed = json::parse(value, nullptr, false);
      (*node)[key] = parsed.is_discarded() ? json(value) : parsed;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

json resolve_config(const json& defaults, const std::string& config_path,
                    const std::vector<std::string>& overrides, const std::string& out_dir) {
  json cfg = defaults;
  if (!config_path.empty()) deep_merge(cfg, read_json(config_path));
  for (const auto& kv : overrides) apply_override(cfg, kv);
  if (!out_dir.empty()) cfg["output"]["dir"] = out_dir;
  return cfg;
}

fs::path prepare_output(const json& cfg) {
  fs::path dir = cfg.at("output").at("dir").get<std::string>();
  fs::create_directories(dir);
  write_json(dir / "config.json", cfg);  // resolved settings, for provenance
  return dir;
}

std::unique_ptr<Hamiltonian> system_from_config(const json& cfg) {
  const json& sys = cfg.at("system");
  std::map<std::string, double> params;
  if (sys.contains("params"))
    for (auto it = sys.at("params").begin(); it != sys.at("params").end(); ++it)
      params[it.key()] = it.value().get<double>();
  return make_system(sys.at("name").get<std::string>(), params);
}

ThetaGrid grid_from_config(const json& cfg, int n) {
  const json& g = cfg.at("grid");
  return ThetaGrid::regular(n, g.at("points").get<int>(), g.at("reduced").get<bool>());
}

SolverOptions solver_from_config(const json& cfg) {
  SolverOptions opt;
  if (cfg.contains("solver")) opt = solver_options_from_json(cfg.at("solver"));
  opt.validate();
  return opt;
}

std::array<double, 5> lambda_from_json(const json& l) {
  if (l.size() != 5) throw ConfigError("objective.lambda: needs 5 weights");
  std::array<double, 5> out{};
  for (size_t i = 0; i < 5; ++i) out[i] = l[i].get<double>();
  return out;
}

unsigned worker_count(bool parallel) {
  unsigned hw = std::thread::hardware_concurrency();
  return parallel ? std::max(1u, hw) : 1u;
}

// runs fn(i) for i in [0, count) on a small worker pool; results land by index
template <class Fn>
void parallel_for(int count, bool parallel, Fn&& fn) {
  unsigned workers = std::min<unsigned>(worker_count(parallel), static_cast<unsigned>(count));
  if (workers <= 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  auto drain = [&]() {
    for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) fn(i);
  };
  std::vector<std::future<void>> futs;
  for (unsigned w = 0; w < workers; ++w) futs.push_back(std::async(std::launch::async, drain));
  for (auto& f : futs) f.get();
}

// ---------------------------------------------------------------------------
// sweep-isochrone

const char* kSweepDefaults = R"json({
  "system": {"name": "isochrone", "params": {"c1": 1.0, "c2": 0.15}},
  "sweep": {
    "N": [16, 64, 128],
    "omega": [0.2, 0.4, 1.0, 2.0],
    "points": 1024,
    "reduced": true,
    "init_scale": 1.0,
    "converged_sigma": 0.25,
    "parallel": true
  },
  "solver": {
    "objective_tol": 1e-22,
    "gradient_tol": 1e-12,
    "max_iterations": 400
  },
  "output": {"dir": "out-sweep"}
})json";

int cmd_sweep_isochrone(const json& cfg) {
  if (cfg.at("system").at("name").get<std::string>() != "isochrone")
    throw ConfigError("system.name: sweep-isochrone requires the isochrone system");
  auto system = system_from_config(cfg);
  const json& sw = cfg.at("sweep");
  std::vector<int> Ns = sw.at("N").get<std::vector<int>>();
  std::vector<double> omegas = sw.at("omega").get<std::vector<double>>();
  int points = sw.at("points").get<int>();
  bool reduced = sw.at("reduced").get<bool>();
  double init_scale = sw.at("init_scale").get<double>();
  double conv_sigma = sw.at("converged_sigma").get<double>();
  if (points < 2) throw ConfigError("sweep.points: must be >= 2");
  SolverOptions opt = solver_from_config(cfg);
  double c1 = cfg.at("system").at("params").value("c1", 1.0);

  fs::path dir = prepare_output(cfg);
  ThetaGrid grid = ThetaGrid::regular(1, points, reduced);

  struct Cell {
    int N;
    double omega;
    FitReport rep;
    double H_mean, H_theory;
    bool converged;
    std::string error;
  };
  std::vector<Cell> cells;
  for (int N : Ns)
    for (double om : omegas) cells.push_back({N, om, {}, 0, 0, false, ""});

  parallel_for(static_cast<int>(cells.size()), sw.value("parallel", true), [&](int i) {
    Cell& c = cells[static_cast<size_t>(i)];
    try {
      TorusModel init = initial_guess(Family::odd1d, c.N, init_scale);
      ObjectiveSpec spec = ObjectiveSpec::frequency_labelled(make_vec({c.omega}));
      c.rep = fit(*system, grid, spec, init, opt);
      double hm = 0.0;
      for (const auto& th : grid.theta) {
        auto pp = eval(c.rep.model, th);
        hm += system->value(pp.q, pp.p);
      }
      c.H_mean = hm / grid.size();
      c.H_theory = -std::pow(2.0 * c1 * c.omega, 2.0 / 3.0) / 2.0;
      c.converged = c.rep.sigma_h <= conv_sigma;
    } catch (const std::exception& e) {
      c.error = e.what();  // recorded per cell, not fatal
    }
  });

  CsvWriter csv({"N", "omega", "init_scale", "sigma", "H_mean", "H_theory", "objective",
                 "per_point_objective", "iterations", "termination", "converged", "error"});
  for (const auto& c : cells) {
    csv.field(c.N).field(c.omega).field(init_scale);
    csv.field(c.rep.sigma_h).field(c.H_mean).field(c.H_theory);
    csv.field(c.rep.objective).field(c.rep.per_point_objective).field(c.rep.iterations);
    csv.field(c.error.empty() ? to_string(c.rep.termination) : std::string("error"));
    csv.field(c.converged ? 1 : 0).field(c.error);
    csv.end_row();
  }
  write_text(dir / "sweep.csv", csv.str());

  // sigma map, one tile per cell, shaded by log10 sigma
  double om_lo = *std::min_element(omegas.begin(), omegas.end());
  double om_hi = *std::max_element(omegas.begin(), omegas.end());
  SvgPlot plot(om_lo - 0.1, om_hi + 0.1, -0.5, static_cast<double>(Ns.size()) + 0.5);
  for (size_t i = 0; i < cells.size(); ++i) {
    const Cell& c = cells[i];
    size_t row = i / omegas.size();
    double shade = std::min(1.0, std::max(0.0, (std::log10(c.rep.sigma_h + 1e-16) + 16) / 16));
    int gray = static_cast<int>(255 * (1.0 - shade));
    char color[16];
    std::snprintf(color, sizeof(color), "rgb(%d,%d,%d)", gray, gray, 255);
    plot.add_rect(c.omega - 0.02, row + 0.05, c.omega + 0.02, row + 0.95, color);
  }
  for (size_t r = 0; r < Ns.size(); ++r)
    plot.add_label(om_lo - 0.08, r + 0.5, "N=" + std::to_string(Ns[r]));
  write_text(dir / "sweep.svg", plot.str());

  int conv = 0;
  for (const auto& c : cells) conv += c.converged ? 1 : 0;
  std::cout << "sweep-isochrone: " << cells.size() << " cells, " << conv
            << " converged; results in " << dir.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// fit

const char* kFitDefaults = R"json({
  "system": {"name": "logarithmic", "params": {"c1": 0.9, "c2": 1.0}},
  "model": {"family": "box", "N": 16},
  "grid": {"points": 32, "reduced": true},
  "objective": {"mode": "unlabelled", "lambda": [1, 1, 1, 1, 0], "rho": 0.0, "rho_auto": false},
  "init": {"kind": "guess", "scale": 1.0, "path": ""},
  "solver": {
    "objective_tol": 1e-10,
    "gradient_tol": 1e-12,
    "max_iterations": 300,
    "plateau_rel_decrease": 0.3
  },
  "output": {"dir": "out-fit"}
})json";

TorusModel init_from_config(const json& cfg, Family family, int N) {
  const json& init = cfg.at("init");
  std::string kind = init.at("kind").get<std::string>();
  if (kind == "guess") return initial_guess(family, N, init.value("scale", 1.0));
  if (kind == "model") {
    TorusModel m = model_from_json(read_json(init.at("path").get<std::string>()));
    if (m.family != family || m.N != N)
      throw ConfigError("init.path: model family/N do not match the run configuration");
    return m;
  }
  throw ConfigError("init.kind: expected 'guess' or 'model'");
}

ObjectiveSpec objective_from_config(const json& cfg, const TorusModel& structure) {
  const json& ob = cfg.at("objective");
  ObjectiveSpec spec;
  spec.mode = label_mode_from_string(ob.at("mode").get<std::string>());
  spec.lambda = lambda_from_json(ob.at("lambda"));
  spec.rho = ob.value("rho", 0.0);
  if (ob.value("rho_auto", false)) spec.rho = consistency_rho(structure);
  if (spec.mode == LabelMode::action) {
    if (!ob.contains("action_label"))
      throw ConfigError("objective.action_label: required in action mode");
    spec.action_label = vec_from_json(ob.at("action_label"));
  }
  if (spec.mode == LabelMode::frequency) {
    if (!ob.contains("frequency_label"))
      throw ConfigError("objective.frequency_label: required in frequency mode");
    spec.frequency_label = vec_from_json(ob.at("frequency_label"));
  }
  spec.validate(structure.n);
  return spec;
}

void emit_sections(const fs::path& dir, const Hamiltonian& system, const FitReport& rep,
                   const json& section_cfg);

int cmd_fit(const json& cfg, bool with_sections) {
  auto system = system_from_config(cfg);
  Family family = family_from_string(cfg.at("model").at("family").get<std::string>());
  int N = cfg.at("model").at("N").get<int>();
  if (family_dimension(family) != system->dim())
    throw ConfigError("model.family: dimension does not match the system");
  ThetaGrid grid = grid_from_config(cfg, system->dim());
  TorusModel init = init_from_config(cfg, family, N);
  ObjectiveSpec spec = objective_from_config(cfg, init);
  SolverOptions opt = solver_from_config(cfg);
  if (spec.mode == LabelMode::unlabelled) opt.plateau_enabled = true;

  fs::path dir = prepare_output(cfg);
  FitReport rep = fit(*system, grid, spec, init, opt);
  write_json(dir / "model.json", model_to_json(rep.model));
  write_json(dir / "report.json", report_to_json(rep));

  std::cout << "fit: termination=" << to_string(rep.termination)
            << " iterations=" << rep.iterations << " objective=" << format_double(rep.objective)
            << " sigma_h=" << format_double(rep.sigma_h);
  if (rep.omega.size() > 0) {
    std::cout << " omega=(";
    for (int i = 0; i < rep.omega.size(); ++i)
      std::cout << (i ? "," : "") << format_double(rep.omega[i]);
    std::cout << ") J=(";
    for (int i = 0; i < rep.actions.size(); ++i)
      std::cout << (i ? "," : "") << format_double(rep.actions[i]);
    std::cout << ")";
  }
  std::cout << "\n";

  if (with_sections) {
    json scfg = cfg.value("section", json::object());
    emit_sections(dir, *system, rep, scfg);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// probe

const char* kProbeDefaults = R"json({
  "system": {"name": "logarithmic", "params": {"c1": 0.9, "c2": 1.0}},
  "grid": {"points": 32, "reduced": true},
  "probe": {
    "delta_j": [0.05, 0.05],
    "max_index": [26, 26],
    "threshold": 1e-6,
    "lambda": [1, 1, 1, 1, 1],
    "parallel": true
  },
  "seed": {"report": ""},
  "solver": {
    "gradient_tol": 1e-12,
    "max_iterations": 150
  },
  "output": {"dir": "out-probe"}
})json";

int cmd_probe(const json& cfg) {
  auto system = system_from_config(cfg);
  if (system->dim() != 2) throw ConfigError("system: probing runs on 2D systems");
  const json& pr = cfg.at("probe");
  Vec dJ = vec_from_json(pr.at("delta_j"));
  auto max_idx = pr.at("max_index").get<std::vector<int>>();
  if (dJ.size() != 2 || max_idx.size() != 2)
    throw ConfigError("probe.delta_j/max_index: need 2 components");
  ActionGrid lattice = ActionGrid::regular(dJ, {max_idx[0], max_idx[1]});
  double threshold = pr.at("threshold").get<double>();
  if (threshold < 0) throw ConfigError("probe.threshold: must be >= 0");

  // seed: an unlabelled fit report, or an explicit (actions, model) pair
  const json& seed = cfg.at("seed");
  Vec seed_actions;
  TorusModel seed_model;
  if (seed.contains("report") && !seed.at("report").get<std::string>().empty()) {
    FitReport srep = report_from_json(read_json(seed.at("report").get<std::string>()));
    seed_actions = srep.actions;
    seed_model = srep.model;
  } else if (seed.contains("actions") && seed.contains("model")) {
    seed_actions = vec_from_json(seed.at("actions"));
    seed_model = model_from_json(read_json(seed.at("model").get<std::string>()));
  } else {
    throw ConfigError("seed: provide seed.report, or seed.actions plus seed.model");
  }
  if (seed_model.n != 2) throw ConfigError("seed: model must be 2D");

  ThetaGrid grid = grid_from_config(cfg, 2);
  SolverOptions opt = solver_from_config(cfg);
  if (!cfg.at("solver").contains("objective_tol"))
    opt.objective_tol = threshold / (10.0 * grid.size());  // dig past the threshold

  fs::path dir = prepare_output(cfg);
  ProbeFitFn fit_fn =
      make_labelled_probe_fit(*system, grid, lambda_from_json(pr.at("lambda")), opt);
  ProbeOptions popt;
  popt.threshold = threshold;
  popt.parallel = pr.value("parallel", true);
  ProbeResult res = probe(lattice, seed_actions, seed_model, fit_fn, popt);

  write_text(dir / "summary.csv", probe_summary_csv(lattice, res));
  fs::create_directories(dir / "reports");
  for (const auto& [m, e] : res.entries) {
    std::string name = std::to_string(m[0]) + "_" + std::to_string(m[1]) + ".json";
    write_json(dir / "reports" / name, report_to_json(e.report));
  }

  // accepted (dark) and rejected (light) lattice points
  double jmax = std::max(lattice.point({lattice.max_index[0], lattice.max_index[1]})[0],
                         lattice.point({lattice.max_index[0], lattice.max_index[1]})[1]);
  SvgPlot plot(-0.05, jmax + 0.05, -0.05, jmax + 0.05);
  std::vector<std::pair<double, double>> acc, rej;
  for (const auto& [m, e] : res.entries) {
    Vec J = lattice.point(m);
    (e.accepted ? acc : rej).push_back({J[0], J[1]});
  }
  plot.add_points(rej, 2.0, "rgb(200,200,200)");
  plot.add_points(acc, 3.0, "black");
  write_text(dir / "probe.svg", plot.str());

  int accepted = res.accepted_count();
  if (res.generations[0].empty())
    std::cerr << "warning: seed lattice point rejected, no expansion (see reports/)\n";
  std::cout << "probe: " << res.entries.size() << " fitted, " << accepted << " accepted, "
            << res.generations.size() << " generations; results in " << dir.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// section

const char* kSectionDefaults = R"json({
  "system": {"name": "logarithmic", "params": {"c1": 0.9, "c2": 1.0}},
  "section": {
    "report": "",
    "crossings_model": 512,
    "crossings_orbit": 512,
    "tolerance": 5e-14,
    "max_step": 0.25,
    "theta0": [0.0, 1.5707963267948966]
  },
  "output": {"dir": "out-section"}
})json";

void emit_sections(const fs::path& dir, const Hamiltonian& system, const FitReport& rep,
                   const json& scfg) {
  if (system.dim() != 2) throw ConfigError("section: sections are defined for 2D systems");
  int cross_model = scfg.value("crossings_model", 512);
  int cross_orbit = scfg.value("crossings_orbit", 512);
  Vec theta0 = scfg.contains("theta0") ? vec_from_json(scfg.at("theta0"))
                                       : make_vec({0.0, kPi / 2});
  IntegratorOptions iopt;
  iopt.tolerance = scfg.value("tolerance", 5e-14);
  iopt.max_step = scfg.value("max_step", 0.25);

  SectionSet cons = section_from_model(rep.model, rep.omega, theta0, cross_model);
  auto start = eval(rep.model, theta0);
  double w2 = std::abs(rep.omega[1]);
  double t_end = (cross_orbit + 4) * kTwoPi / (w2 > 0 ? w2 : 1.0);
  Trajectory traj = integrate_orbit(system, start.q, start.p, t_end, iopt);
  SectionSet integ = section_from_orbit(system, traj);
  if (integ.points.empty()) throw std::runtime_error("section: integrated orbit never crosses");
  SectionDistance dist = compare_sections(cons, integ);

  write_text(dir / "section_constructed.csv", section_csv(cons));
  write_text(dir / "section_integrated.csv", section_csv(integ));
  json metrics;
  metrics["hausdorff"] = dist.hausdorff;
  metrics["mean_nn"] = dist.mean_nn;
  metrics["energy_sigma"] = traj.energy_sigma();
  metrics["crossings_constructed"] = cons.points.size();
  metrics["crossings_integrated"] = integ.points.size();
  write_json(dir / "metrics.json", metrics);

  double xlo = 1e300, xhi = -1e300, ylo = 1e300, yhi = -1e300;
  std::vector<std::pair<double, double>> pc, pi;
  for (const auto& pt : cons.points) {
    pc.push_back({pt.x, pt.xdot});
    xlo = std::min(xlo, pt.x);
    xhi = std::max(xhi, pt.x);
    ylo = std::min(ylo, pt.xdot);
    yhi = std::max(yhi, pt.xdot);
  }
  for (const auto& pt : integ.points) pi.push_back({pt.x, pt.xdot});
  double mx = 0.05 * (xhi - xlo + 1e-9), my = 0.05 * (yhi - ylo + 1e-9);
  SvgPlot plot(xlo - mx, xhi + mx, ylo - my, yhi + my);
  plot.add_points(pi, 2.5, "rgb(170,170,170)");
  plot.add_points(pc, 1.2, "black");
  write_text(dir / "overlay.svg", plot.str());

  std::cout << "section: hausdorff=" << format_double(dist.hausdorff)
            << " mean_nn=" << format_double(dist.mean_nn)
            << " energy_sigma=" << format_double(traj.energy_sigma()) << "\n";
}

int cmd_section(const json& cfg) {
  auto system = system_from_config(cfg);
  const json& sc = cfg.at("section");
  std::string report_path = sc.at("report").get<std::string>();
  if (report_path.empty()) throw ConfigError("section.report: path to a fit report required");
  FitReport rep = report_from_json(read_json(report_path));
  if (rep.model.n != 2) throw ConfigError("section.report: model must be 2D");
  fs::path dir = prepare_output(cfg);
  emit_sections(dir, *system, rep, sc);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Invariant torus construction by Fourier-surface least squares"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::vector<std::string> overrides;
  bool with_sections = false;
  std::string seed_report, seed_model, seed_actions, report_path;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON configuration file");
    sub->add_option("--out", out_dir, "output directory (overrides output.dir)");
    sub->add_option("--set", overrides, "override a config field, e.g. --set probe.threshold=1e-6");
  };

  CLI::App* sweep = app.add_subcommand("sweep-isochrone", "frequency-labelled 1D fits over (N, omega)");
  add_common(sweep);
  CLI::App* fitc = app.add_subcommand("fit", "construct a single torus");
  add_common(fitc);
  fitc->add_flag("--sections", with_sections, "also emit a Poincare-section overlay");
  CLI::App* probec = app.add_subcommand("probe", "action-grid probing from a seed torus");
  add_common(probec);
  probec->add_option("--seed-report", seed_report, "unlabelled fit report to seed from");
  probec->add_option("--seed-model", seed_model, "seed model JSON (with --seed-actions)");
  probec->add_option("--seed-actions", seed_actions, "seed actions, e.g. 0.16,0.22");
  CLI::App* sectionc = app.add_subcommand("section", "constructed vs integrated section overlay");
  add_common(sectionc);
  sectionc->add_option("--report", report_path, "fit report JSON for the torus");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(sweep)) {
      json cfg = resolve_config(json::parse(kSweepDefaults), config_path, overrides, out_dir);
      return cmd_sweep_isochrone(cfg);
    }
    if (app.got_subcommand(fitc)) {
      json cfg = resolve_config(json::parse(kFitDefaults), config_path, overrides, out_dir);
      return cmd_fit(cfg, with_sections);
    }
    if (app.got_subcommand(probec)) {
      json cfg = resolve_config(json::parse(kProbeDefaults), config_path, overrides, out_dir);
      if (!seed_report.empty()) cfg["seed"]["report"] = seed_report;
      if (!seed_model.empty()) cfg["seed"]["model"] = seed_model;
      if (!seed_actions.empty()) {
        json arr = json::array();
        std::stringstream ss(seed_actions);
        std::string tok;
        while (std::getline(ss, tok, ',')) arr.push_back(std::stod(tok));
        cfg["seed"]["actions"] = arr;
      }
      return cmd_probe(cfg);
    }
    if (app.got_subcommand(sectionc)) {
      json cfg = resolve_config(json::parse(kSectionDefaults), config_path, overrides, out_dir);
      if (!report_path.empty()) cfg["section"]["report"] = report_path;
      return cmd_section(cfg);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
