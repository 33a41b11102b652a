#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "torusfit/objective.hpp"

namespace torusfit {

struct SolverOptions {
  double damping_init = 1e-3;           // initial mu, scaled by diag(J^T J)
  double damping_decrease = 1.0 / 3.0;  // on accepted step
  double damping_increase = 2.0;        // on rejected step
  int max_iterations = 500;
  double gradient_tol = 1e-10;   // inf-norm of J^T r
  double step_tol = 1e-14;       // relative step size
  double objective_tol = 1e-8;   // per grid point
  // valley-bottom stopping (unlabelled mode)
  bool plateau_enabled = false;
  int plateau_window = 5;
  double plateau_rel_decrease = 0.3;  // stop early in the slow valley phase
  double plateau_objective = 1e-4;    // per grid point gate

  void validate() const {
    if (gradient_tol <= 0 || step_tol <= 0 || objective_tol <= 0)
      throw ConfigError("solver: tolerances must be > 0");
    if (plateau_window < 2) throw ConfigError("solver.plateau_window: must be >= 2");
    if (max_iterations < 1) throw ConfigError("solver.max_iterations: must be >= 1");
    if (damping_increase <= 1.0 || damping_decrease >= 1.0 || damping_decrease <= 0.0)
      throw ConfigError("solver: damping factors must contract/expand");
  }
};

enum class Termination { gradient, step, objective, plateau, max_iterations, degenerate };

inline std::string to_string(Termination t) {
  switch (t) {
    case Termination::gradient: return "gradient";
    case Termination::step: return "step";
    case Termination::objective: return "objective";
    case Termination::plateau: return "plateau";
    case Termination::max_iterations: return "max-iter";
    case Termination::degenerate: return "degenerate";
  }
  return "?";
}

struct LmOutcome {
  Eigen::VectorXd x;
  double objective = std::numeric_limits<double>::infinity();
  int iterations = 0;
  Termination termination = Termination::max_iterations;
  std::vector<double> accepted_objectives;  // strictly decreasing
};

/// Damped least squares over a flat parameter vector. `eval(x, r, J*)` fills
/// the residual and, when requested, the Jacobian; it may throw
/// DegenerateTorusError, which rejects the trial step (or aborts at the
/// initial point). `grid_points` scales the per-point objective tolerances.
template <class Eval>
LmOutcome lm_minimize(Eval&& eval, Eigen::VectorXd x, const SolverOptions& opt,
                      int grid_points) {
  opt.validate();
  const double M = std::max(1, grid_points);
  const int P = static_cast<int>(x.size());

  Eigen::VectorXd r;
  Eigen::MatrixXd J;
  eval(x, r, &J);  // degenerate here propagates to the caller
  double F = r.squaredNorm();
  if (!std::isfinite(F)) throw std::runtime_error("lm_minimize: non-finite initial residual");

  LmOutcome out;
  out.x = x;
  out.objective = F;
  out.accepted_objectives.push_back(F);
  if (F / M <= opt.objective_tol) {
    out.termination = Termination::objective;
    return out;
  }

  Eigen::MatrixXd JtJ(P, P);
  Eigen::VectorXd g(P);
  auto refresh_normal = [&]() {
    JtJ.setZero();
    JtJ.template selfadjointView<Eigen::Lower>().rankUpdate(J.transpose());
    JtJ = JtJ.template selfadjointView<Eigen::Lower>();
    g = J.transpose() * r;
  };
  refresh_normal();
  double mu = opt.damping_init;

  // Marquardt scaling: damping proportional to diag(J^T J), with a floor so
  // grid-null directions (aliased Nyquist pairs) stay bounded.
  auto damping_diag = [&]() {
    double dmax = JtJ.diagonal().maxCoeff();
    if (!(dmax > 0)) dmax = 1.0;
    return Eigen::VectorXd(JtJ.diagonal().cwiseMax(1e-12 * dmax));
  };

  const int max_rejects = 64;
  for (int iter = 1; iter <= opt.max_iterations; ++iter) {
    out.iterations = iter;
    if (g.template lpNorm<Eigen::Infinity>() <= opt.gradient_tol) {
      out.iterations = iter - 1;
      out.termination = Termination::gradient;
      return out;
    }

    Eigen::VectorXd dscale = damping_diag();
    bool accepted = false;
    for (int rej = 0; rej < max_rejects && !accepted; ++rej) {
      Eigen::MatrixXd damped = JtJ;
      damped.diagonal() += mu * dscale;
      Eigen::LDLT<Eigen::MatrixXd> ldlt(damped);
      if (ldlt.info() != Eigen::Success) {
        mu *= opt.damping_increase;
        continue;
      }
      Eigen::VectorXd dx = ldlt.solve(-g);
      if (dx.norm() <= opt.step_tol * (x.norm() + opt.step_tol)) {
        out.iterations = iter - 1;
        out.termination = Termination::step;
        return out;
      }
      Eigen::VectorXd xt = x + dx;
      double Ft = std::numeric_limits<double>::infinity();
      try {
        Eigen::VectorXd rt;
        eval(xt, rt, nullptr);
        double v = rt.squaredNorm();
        if (std::isfinite(v)) Ft = v;
      } catch (const DegenerateTorusError&) {
        // collapsed trial; treat as a rejected step
      }
      if (Ft < F) {
        x = xt;
        F = Ft;
        mu *= opt.damping_decrease;
        accepted = true;
      } else {
        mu *= opt.damping_increase;
      }
    }
    if (!accepted) {
      out.termination = Termination::step;
      return out;
    }

    eval(x, r, &J);
    refresh_normal();
    out.x = x;
    out.objective = F;
    out.accepted_objectives.push_back(F);

    if (F / M <= opt.objective_tol) {
      out.termination = Termination::objective;
      return out;
    }
    if (opt.plateau_enabled) {
      const auto& hist = out.accepted_objectives;
      int K = opt.plateau_window;
      if (static_cast<int>(hist.size()) > K) {
        double before = hist[hist.size() - 1 - static_cast<size_t>(K)];
        double rel = (before - F) / before;
        if (rel < opt.plateau_rel_decrease && F / M < opt.plateau_objective) {
          out.termination = Termination::plateau;
          return out;
        }
      }
    }
  }
  out.termination = Termination::max_iterations;
  return out;
}

/// Converged model plus the diagnostics Table-style summaries are built from.
/// Every field is recomputed from the final model, not taken from solver
/// state.
struct FitReport {
  TorusModel model;
  double objective = 0.0;
  double per_point_objective = 0.0;
  double sigma_h = 0.0;
  Vec omega;
  Vec actions;
  double consistency = 0.0;
  int iterations = 0;
  Termination termination = Termination::max_iterations;
  ObjectiveSpec spec;
  SolverOptions options;
};

inline FitReport fit(const Hamiltonian& system, const ThetaGrid& grid,
                     const ObjectiveSpec& spec, const TorusModel& init,
                     const SolverOptions& options = {}) {
  spec.validate(init.n);
  options.validate();
  if (!init.respects_mask())
    throw std::invalid_argument("fit: initial model has coefficients outside its mask");
  ObjectiveEval ev(system, grid, spec, init);

  LmOutcome out;
  bool degenerate_init = false;
  try {
    out = lm_minimize([&](const Eigen::VectorXd& x, Eigen::VectorXd& r,
                          Eigen::MatrixXd* J) { ev.eval(x, r, J); },
                      init.flatten(), options, grid.size());
  } catch (const DegenerateTorusError&) {
    degenerate_init = true;
    out.x = init.flatten();
    out.termination = Termination::degenerate;
  }

  FitReport rep;
  rep.spec = spec;
  rep.options = options;
  rep.iterations = out.iterations;
  rep.termination = out.termination;
  auto d = ev.diagnostics(out.x);
  rep.model = ev.to_model(out.x);
  rep.objective = d.objective;
  rep.per_point_objective = d.per_point_objective;
  rep.sigma_h = d.sigma_h;
  rep.omega = d.omega;
  rep.actions = d.actions;
  rep.consistency = d.consistency;
  if (degenerate_init || d.degenerate) rep.termination = Termination::degenerate;
  return rep;
}

/// Label-free construction: E1..E4 with unit weights, H-bar as the grid mean,
/// and valley-bottom stopping. The report's (J, omega) seed later probing.
inline FitReport fit_unlabelled(const Hamiltonian& system, const ThetaGrid& grid,
                                const TorusModel& init, SolverOptions options = {}) {
  ObjectiveSpec spec = ObjectiveSpec::unlabelled();
  options.plateau_enabled = true;
  return fit(system, grid, spec, init, options);
}

}  // namespace torusfit
