#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "oracles.hpp"
#include "torusfit/objective.hpp"

using namespace torusfit;

namespace {

// exact invariant torus of the 2D unit harmonic oscillator
TorusModel harmonic_torus(double J1, double J2) {
  TorusModel m = TorusModel::zero(Family::general, 1, 2);
  int p10 = m.X.find(MultiIndex(1, 0)), p01 = m.X.find(MultiIndex(0, 1));
  m.a(0, p10) = std::sqrt(2.0 * J1);
  m.a(1, p01) = std::sqrt(2.0 * J2);
  m.d(0, p10) = std::sqrt(2.0 * J1);
  m.d(1, p01) = std::sqrt(2.0 * J2);
  return m;
}

TorusModel harmonic_torus_1d(double J) {
  TorusModel m = TorusModel::zero(Family::odd1d, 2, 1);
  int pos = m.X.find(MultiIndex(1));
  m.a(0, pos) = std::sqrt(2.0 * J);
  m.d(0, pos) = std::sqrt(2.0 * J);
  return m;
}

// H scaled by a constant factor (for the time-scale equivariance check)
class ScaledHamiltonian final : public Hamiltonian {
 public:
  ScaledHamiltonian(const Hamiltonian& inner, double s)
      : Hamiltonian(inner.dim(), "scaled", {}), inner_(inner), s_(s) {}
  double value(const Vec& q, const Vec& p) const override { return s_ * inner_.value(q, p); }
  void gradients(const Vec& q, const Vec& p, Vec& dq, Vec& dp) const override {
    inner_.gradients(q, p, dq, dp);
    dq *= s_;
    dp *= s_;
  }
  void hessians(const Vec& q, const Vec& p, Mat& qq, Mat& qp, Mat& pp) const override {
    inner_.hessians(q, p, qq, qp, pp);
    qq *= s_;
    qp *= s_;
    pp *= s_;
  }

 private:
  const Hamiltonian& inner_;
  double s_;
};

}  // namespace

TEST_CASE("solve_frequencies: exact harmonic torus") {
  HarmonicPotential sys(make_vec({1.0}));
  ThetaGrid grid = ThetaGrid::regular(1, 64, false);
  TorusModel m = harmonic_torus_1d(0.7);
  Vec w = solve_frequencies(m, grid, sys);
  CHECK(w[0] == Catch::Approx(1.0).margin(1e-13));
}

TEST_CASE("solve_frequencies: box guess under the PPS is finite but not invariant") {
  PpsPotential sys(-1.0, -0.25, 1.0);
  ThetaGrid grid = ThetaGrid::regular(2, 16, false);
  TorusModel m = initial_guess(Family::box, 4);
  ObjectiveEval ev(sys, grid, ObjectiveSpec::unlabelled(), m);
  Vec w = ev.frequencies(m.flatten());
  CHECK(std::isfinite(w[0]));
  CHECK(std::isfinite(w[1]));
  CHECK(ev.last_solve().residual.norm() > 1e-3);
  // the LS normal equations hold at the solution
  const auto& s = ev.last_solve();
  Eigen::VectorXd wd(2);
  wd << w[0], w[1];
  Eigen::VectorXd ne = s.A.transpose() * (s.A * wd - s.b);
  CHECK(ne.norm() <= 1e-10 * (s.A.transpose() * s.b).norm());
}

TEST_CASE("solve_frequencies: continuity under tiny perturbations") {
  HarmonicPotential sys(make_vec({1.0, 1.0}));
  ThetaGrid grid = ThetaGrid::regular(2, 16, false);
  TorusModel m = harmonic_torus(0.4, 0.9);
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> uni(-1e-8, 1e-8);
  Eigen::VectorXd x = m.flatten();
  for (int i = 0; i < x.size(); ++i) x[i] += uni(rng);
  m.unflatten(x);
  Vec w = solve_frequencies(m, grid, sys);
  CHECK(w[0] == Catch::Approx(1.0).margin(1e-6));
  CHECK(w[1] == Catch::Approx(1.0).margin(1e-6));
}

TEST_CASE("solve_frequencies: degenerate for collapsed models") {
  HarmonicPotential sys(make_vec({1.0, 1.0}));
  ThetaGrid grid = ThetaGrid::regular(2, 8, false);
  TorusModel z = TorusModel::zero(Family::box, 2, 2);
  CHECK_THROWS_AS(solve_frequencies(z, grid, sys), DegenerateTorusError);
}

TEST_CASE("solve_frequencies: time-scale equivariance") {
  HarmonicPotential base(make_vec({1.0, 1.3}));
  ScaledHamiltonian scaled(base, 2.5);
  ThetaGrid grid = ThetaGrid::regular(2, 12, false);
  std::mt19937 rng(17);
  TorusModel m = oracles::random_masked_model(Family::general, 2, 2, rng, 0.4);
  Vec w1 = solve_frequencies(m, grid, base);
  Vec w2 = solve_frequencies(m, grid, scaled);
  for (int i = 0; i < 2; ++i) CHECK(w2[i] == Catch::Approx(2.5 * w1[i]).margin(1e-12));
}

TEST_CASE("residuals: vanish on an exact invariant torus") {
  HarmonicPotential sys(make_vec({1.0, 1.0}));
  ThetaGrid grid = ThetaGrid::regular(2, 32, true);
  TorusModel m = harmonic_torus(0.35, 0.8);
  ObjectiveSpec spec = ObjectiveSpec::action_labelled(make_vec({0.35, 0.8}));
  spec.rho = consistency_rho(m);
  Eigen::VectorXd r = residuals(m, grid, sys, spec);
  CHECK(r.cwiseAbs().maxCoeff() < 1e-12);
  CHECK(sigma_h(m, grid, sys) < 1e-12);
  CHECK(consistency_metric(m, solve_frequencies(m, grid, sys)) < 1e-12);
}

TEST_CASE("residuals: isochrone unit-circle guess at fixed omega") {
  IsochronePotential sys(1.0, 0.15);
  ThetaGrid grid = ThetaGrid::regular(1, 64, false);
  TorusModel m = initial_guess(Family::odd1d, 8);
  ObjectiveSpec spec = ObjectiveSpec::frequency_labelled(make_vec({1.0}));
  Eigen::VectorXd r = residuals(m, grid, sys, spec);
  // blocks per point: [E1 (1), E2 (1)]
  bool e1_nonzero = false;
  for (int mth = 0; mth < grid.size(); ++mth) {
    double th = grid.theta[static_cast<size_t>(mth)][0];
    // E2 = omega q'(theta) - p = cos - cos = 0 identically
    CHECK(std::abs(r[2 * mth + 1]) < 1e-14);
    double phi_q = sys.phi_grad(make_vec({std::sin(th)}))[0];
    double e1_expected = -std::sin(th) + phi_q;
    CHECK(r[2 * mth] == Catch::Approx(e1_expected).margin(1e-13));
    e1_nonzero = e1_nonzero || std::abs(r[2 * mth]) > 1e-3;
  }
  CHECK(e1_nonzero);
}

TEST_CASE("residuals: E4 block is mean-centred") {
  LogarithmicPotential sys(0.9, 1.0);
  ThetaGrid grid = ThetaGrid::regular(2, 8, false);
  std::mt19937 rng(23);
  TorusModel m = oracles::random_masked_model(Family::box, 2, 2, rng, 0.5);
  ObjectiveSpec spec;  // unlabelled, E1..E4
  Eigen::VectorXd r = residuals(m, grid, sys, spec);
  // rows per point: E1(2) E2(2) E3(2) E4(1)
  double sum = 0.0;
  for (int mth = 0; mth < grid.size(); ++mth) sum += r[7 * mth + 6];
  CHECK(std::abs(sum) < 1e-10);
}

TEST_CASE("residual invariance under symmetry reduction") {
  LogarithmicPotential sys(0.9, 1.0);
  ThetaGrid full = ThetaGrid::regular(2, 8, false);
  ThetaGrid red = ThetaGrid::regular(2, 8, true);
  std::mt19937 rng(29);
  for (auto family : {Family::box, Family::loop}) {
    TorusModel m = oracles::random_masked_model(family, 3, 2, rng, 0.4);
    ObjectiveSpec spec;
    spec.lambda = {1.0, 1.0, 1.0, 1.0, 1.0};  // include mean-labelled E5
    double obj_full = residuals(m, full, sys, spec).squaredNorm();
    double obj_red = residuals(m, red, sys, spec).squaredNorm();
    CHECK(obj_full == Catch::Approx(4.0 * obj_red).epsilon(1e-12));
    Vec wf = solve_frequencies(m, full, sys);
    Vec wr = solve_frequencies(m, red, sys);
    for (int i = 0; i < 2; ++i) CHECK(wf[i] == Catch::Approx(wr[i]).margin(1e-12));
    CHECK(sigma_h(m, full, sys) == Catch::Approx(sigma_h(m, red, sys)).margin(1e-12));
  }
}

namespace {

void check_jacobian_fd(const Hamiltonian& sys, const ThetaGrid& grid,
                       const ObjectiveSpec& spec, const TorusModel& m, std::mt19937& rng,
                       int max_cols = 20) {
  ObjectiveEval ev(sys, grid, spec, m);
  Eigen::VectorXd x = m.flatten();
  Eigen::VectorXd r;
  Eigen::MatrixXd J;
  ev.eval(x, r, &J);

  std::vector<int> cols(static_cast<size_t>(x.size()));
  for (size_t i = 0; i < cols.size(); ++i) cols[i] = static_cast<int>(i);
  std::shuffle(cols.begin(), cols.end(), rng);
  int ncols = std::min<int>(max_cols, static_cast<int>(cols.size()));

  for (int t = 0; t < ncols; ++t) {
    int i = cols[static_cast<size_t>(t)];
    double h = 1e-6 * std::max(1.0, std::abs(x[i]));
    Eigen::VectorXd xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    Eigen::VectorXd rp, rm;
    ev.eval(xp, rp, nullptr);
    ev.eval(xm, rm, nullptr);
    Eigen::VectorXd fd = (rp - rm) / (2.0 * h);
    double scale = std::max(fd.norm(), 1.0);
    double err = (J.col(i) - fd).norm() / scale;
    CHECK(err < 1e-6);
  }
}

}  // namespace

TEST_CASE("jacobian matches finite differences for every spec combination") {
  std::mt19937 rng(101);
  LogarithmicPotential log2d(0.9, 1.0);
  PpsPotential pps(-1.0, -0.25, 1.0);
  IsochronePotential iso(1.0, 0.15);
  ThetaGrid grid2 = ThetaGrid::regular(2, 6, false);
  ThetaGrid grid1 = ThetaGrid::regular(1, 16, false);

  TorusModel box = oracles::random_masked_model(Family::box, 2, 2, rng, 0.45);
  // keep the leading harmonics dominant so the surfaces stay well-formed
  box.a(0, box.X.find(MultiIndex(1, 0))) = 1.0;
  box.a(1, box.X.find(MultiIndex(0, 1))) = 1.0;
  box.d(0, box.X.find(MultiIndex(1, 0))) = 1.0;
  box.d(1, box.X.find(MultiIndex(0, 1))) = 1.0;
  TorusModel loop = oracles::random_masked_model(Family::loop, 2, 2, rng, 0.3);
  TorusModel gen1 = oracles::random_masked_model(Family::general, 3, 1, rng, 0.4);

  SECTION("unlabelled E1-E4") {
    ObjectiveSpec spec;
    check_jacobian_fd(log2d, grid2, spec, box, rng);
    check_jacobian_fd(pps, grid2, spec, box, rng);
  }
  SECTION("unlabelled E1-E5, grid-mean label, consistency on") {
    ObjectiveSpec spec;
    spec.lambda = {1.0, 1.0, 1.0, 1.0, 1.0};
    spec.rho = consistency_rho(box);
    check_jacobian_fd(log2d, grid2, spec, box, rng);
  }
  SECTION("action-labelled with consistency") {
    ObjectiveSpec spec = ObjectiveSpec::action_labelled(make_vec({0.2, 0.3}));
    spec.rho = consistency_rho(loop);
    check_jacobian_fd(log2d, grid2, spec, loop, rng);
  }
  SECTION("frequency-labelled flow terms only") {
    ObjectiveSpec spec = ObjectiveSpec::frequency_labelled(make_vec({0.9}));
    check_jacobian_fd(iso, grid1, spec, gen1, rng);
  }
  SECTION("frequency-labelled, everything active") {
    ObjectiveSpec spec = ObjectiveSpec::frequency_labelled(make_vec({0.8, 1.1}));
    spec.lambda = {1.0, 1.0, 1.0, 1.0, 1.0};
    spec.rho = consistency_rho(box);
    check_jacobian_fd(log2d, grid2, spec, box, rng);
  }
  SECTION("non-uniform weights") {
    ObjectiveSpec spec;
    spec.lambda = {2.0, 0.5, 3.0, 0.25, 1.5};
    spec.rho = 0.02;
    check_jacobian_fd(log2d, grid2, spec, box, rng);
  }
  SECTION("1D unlabelled") {
    ObjectiveSpec spec;
    spec.lambda = {1.0, 1.0, 1.0, 1.0, 1.0};
    spec.rho = consistency_rho(gen1);
    check_jacobian_fd(iso, grid1, spec, gen1, rng);
  }
}

TEST_CASE("frequency response matches directional differences") {
  LogarithmicPotential sys(0.9, 1.0);
  ThetaGrid grid = ThetaGrid::regular(2, 6, false);
  std::mt19937 rng(37);
  TorusModel m = oracles::random_masked_model(Family::box, 2, 2, rng, 0.4);
  m.a(0, m.X.find(MultiIndex(1, 0))) = 1.0;
  m.a(1, m.X.find(MultiIndex(0, 1))) = 1.0;
  m.d(0, m.X.find(MultiIndex(1, 0))) = 1.0;
  m.d(1, m.X.find(MultiIndex(0, 1))) = 1.0;

  ObjectiveSpec spec;
  ObjectiveEval ev(sys, grid, spec, m);
  Eigen::VectorXd x = m.flatten();
  Eigen::VectorXd r;
  Eigen::MatrixXd J;
  ev.eval(x, r, &J);
  Eigen::MatrixXd dw = ev.last_frequency_response();

  std::uniform_int_distribution<int> pick(0, static_cast<int>(x.size()) - 1);
  for (int t = 0; t < 12; ++t) {
    int i = pick(rng);
    double h = 1e-6 * std::max(1.0, std::abs(x[i]));
    Eigen::VectorXd xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    Vec wp = ev.frequencies(xp), wm = ev.frequencies(xm);
    for (int l = 0; l < 2; ++l) {
      double fd = (wp[l] - wm[l]) / (2.0 * h);
      CHECK(dw(l, i) == Catch::Approx(fd).margin(1e-6));
    }
  }
}

TEST_CASE("sigma_h: zero on the exact torus") {
  HarmonicPotential sys(make_vec({1.0, 1.0}));
  ThetaGrid grid = ThetaGrid::regular(2, 32, true);
  CHECK(sigma_h(harmonic_torus(0.5, 0.2), grid, sys) < 1e-14);
}

TEST_CASE("objective spec validation") {
  ObjectiveSpec ok = ObjectiveSpec::action_labelled(make_vec({0.1, 0.2}));
  CHECK_NOTHROW(ok.validate(2));
  ObjectiveSpec bad = ok;
  bad.lambda[4] = 0.0;
  CHECK_THROWS_AS(bad.validate(2), ConfigError);
  ObjectiveSpec wrong_dim = ObjectiveSpec::frequency_labelled(make_vec({1.0}));
  CHECK_THROWS_AS(wrong_dim.validate(2), ConfigError);
  ObjectiveSpec none;
  none.lambda = {0, 0, 0, 0, 0};
  CHECK_THROWS_AS(none.validate(2), ConfigError);
  ObjectiveSpec neg;
  neg.rho = -1.0;
  CHECK_THROWS_AS(neg.validate(2), ConfigError);
}
