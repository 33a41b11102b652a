#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "oracles.hpp"
#include "torusfit/solver.hpp"

using namespace torusfit;

namespace {

TorusModel exact_harmonic_1d(double J) {
  TorusModel m = TorusModel::zero(Family::odd1d, 2, 1);
  int pos = m.X.find(MultiIndex(1));
  m.a(0, pos) = std::sqrt(2.0 * J);
  m.d(0, pos) = std::sqrt(2.0 * J);
  return m;
}

}  // namespace

TEST_CASE("lm_minimize: quadratic toy problem and monotone history") {
  // residual r = [x0 - 3, 2(x1 + 1), x0 * x1]
  auto eval = [](const Eigen::VectorXd& x, Eigen::VectorXd& r, Eigen::MatrixXd* J) {
    r.resize(3);
    r << x[0] - 3.0, 2.0 * (x[1] + 1.0), x[0] * x[1];
    if (J) {
      J->setZero(3, 2);
      (*J)(0, 0) = 1.0;
      (*J)(1, 1) = 2.0;
      (*J)(2, 0) = x[1];
      (*J)(2, 1) = x[0];
    }
  };
  Eigen::VectorXd x0(2);
  x0 << 10.0, 5.0;
  SolverOptions opt;
  opt.objective_tol = 1e-30;  // force gradient/step termination
  LmOutcome out = lm_minimize(eval, x0, opt, 1);
  CHECK((out.termination == Termination::gradient || out.termination == Termination::step));
  for (size_t i = 1; i < out.accepted_objectives.size(); ++i)
    CHECK(out.accepted_objectives[i] < out.accepted_objectives[i - 1]);
  // stationary point of the sum of squares
  Eigen::VectorXd r;
  Eigen::MatrixXd J;
  eval(out.x, r, &J);
  CHECK((J.transpose() * r).lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("fit: exact initial torus stops immediately") {
  HarmonicPotential sys(make_vec({1.0}));
  ThetaGrid grid = ThetaGrid::regular(1, 64, false);
  TorusModel init = exact_harmonic_1d(0.5);
  ObjectiveSpec spec = ObjectiveSpec::frequency_labelled(make_vec({1.0}));
  FitReport rep = fit(sys, grid, spec, init);
  CHECK(rep.iterations <= 1);
  CHECK(rep.objective < 1e-20);
  CHECK(rep.termination == Termination::objective);
  CHECK(rep.sigma_h < 1e-14);
}

TEST_CASE("fit: isochrone frequency-labelled from the unit circle") {
  IsochronePotential sys(1.0, 0.15);
  ThetaGrid grid = ThetaGrid::regular(1, 1024, true);
  TorusModel init = initial_guess(Family::odd1d, 128);
  ObjectiveSpec spec = ObjectiveSpec::frequency_labelled(make_vec({1.0}));
  SolverOptions opt;
  opt.objective_tol = 1e-22;
  opt.gradient_tol = 1e-12;
  opt.max_iterations = 300;
  FitReport rep = fit(sys, grid, spec, init, opt);
  INFO("termination " << to_string(rep.termination) << " after " << rep.iterations);
  // truncation floor at N = 128: per-point objective ~2.4e-7, sigma ~5.8e-6
  CHECK(rep.per_point_objective < 1e-6);
  CHECK(rep.sigma_h < 1e-4);
  // mean energy approaches the isochrone H(omega) relation
  double H_expected = -std::pow(2.0, 2.0 / 3.0) / 2.0;
  double H_mean = 0.0;
  for (const auto& th : grid.theta) {
    auto pp = eval(rep.model, th);
    H_mean += sys.value(pp.q, pp.p);
  }
  H_mean /= grid.size();
  CHECK(H_mean == Catch::Approx(H_expected).margin(1e-5));
}

TEST_CASE("fit: low-frequency isochrone stalls from the unit circle") {
  IsochronePotential sys(1.0, 0.15);
  ThetaGrid grid = ThetaGrid::regular(1, 256, true);
  ObjectiveSpec spec = ObjectiveSpec::frequency_labelled(make_vec({0.2}));
  SolverOptions opt;
  opt.objective_tol = 1e-22;
  opt.max_iterations = 120;
  FitReport bad = fit(sys, grid, spec, initial_guess(Family::odd1d, 16, 1.0), opt);
  CHECK(bad.per_point_objective > 1e-6);
}

TEST_CASE("fit: determinism") {
  LogarithmicPotential sys(0.9, 1.0);
  ThetaGrid grid = ThetaGrid::regular(2, 8, true);
  TorusModel init = initial_guess(Family::box, 4);
  SolverOptions opt;
  opt.max_iterations = 40;
  FitReport a = fit_unlabelled(sys, grid, init, opt);
  FitReport b = fit_unlabelled(sys, grid, init, opt);
  Eigen::VectorXd xa = a.model.flatten(), xb = b.model.flatten();
  REQUIRE(xa.size() == xb.size());
  for (int i = 0; i < xa.size(); ++i) CHECK(xa[i] == xb[i]);
  CHECK(a.objective == b.objective);
  CHECK(a.iterations == b.iterations);
  CHECK(a.termination == b.termination);
  CHECK(a.sigma_h == b.sigma_h);
}

TEST_CASE("fit_unlabelled: integrable system reaches the valley floor") {
  IsochronePotential sys(1.0, 0.15);
  ThetaGrid grid = ThetaGrid::regular(1, 128, true);
  TorusModel init = initial_guess(Family::odd1d, 8);
  SolverOptions opt;
  opt.max_iterations = 400;
  FitReport rep = fit_unlabelled(sys, grid, init, opt);
  INFO("termination " << to_string(rep.termination) << " obj/M " << rep.per_point_objective);
  // on an integrable system the valley bottom is a genuine torus: the plateau
  // rule must not fire above the labelled tolerance
  CHECK(rep.per_point_objective <= rep.options.objective_tol);
  CHECK((rep.termination == Termination::objective ||
         rep.termination == Termination::gradient ||
         rep.termination == Termination::plateau));
  CHECK(std::isfinite(rep.omega[0]));
  CHECK(rep.actions[0] > 0.0);
}

TEST_CASE("fit: degenerate initial model reports cleanly") {
  HarmonicPotential sys(make_vec({1.0, 1.0}));
  ThetaGrid grid = ThetaGrid::regular(2, 8, false);
  TorusModel zero = TorusModel::zero(Family::box, 2, 2);
  FitReport rep = fit_unlabelled(sys, grid, zero);
  CHECK(rep.termination == Termination::degenerate);
  CHECK(!std::isfinite(rep.objective));
}

TEST_CASE("fit: init must respect the mask") {
  HarmonicPotential sys(make_vec({1.0, 1.0}));
  ThetaGrid grid = ThetaGrid::regular(2, 8, false);
  TorusModel bad = initial_guess(Family::box, 2);
  bad.b(0, 0) = 0.1;  // outside the box mask
  CHECK_THROWS_AS(fit_unlabelled(sys, grid, bad), std::invalid_argument);
}

TEST_CASE("solver options validation") {
  SolverOptions opt;
  opt.gradient_tol = 0.0;
  CHECK_THROWS_AS(opt.validate(), ConfigError);
  SolverOptions opt2;
  opt2.plateau_window = 1;
  CHECK_THROWS_AS(opt2.validate(), ConfigError);
  SolverOptions opt3;
  opt3.damping_increase = 0.5;
  CHECK_THROWS_AS(opt3.validate(), ConfigError);
}
