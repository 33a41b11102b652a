#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "oracles.hpp"
#include "torusfit/dynamics.hpp"

using namespace torusfit;

TEST_CASE("isochrone: values") {
  IsochronePotential sys(1.0, 0.15);
  CHECK(sys.value(make_vec({0.0}), make_vec({0.0})) == Catch::Approx(-10.0 / 3.0));
  CHECK(sys.phi_grad(make_vec({0.0}))[0] == Catch::Approx(0.0).margin(1e-15));
  CHECK_THROWS_AS(IsochronePotential(-1.0, 0.15), std::invalid_argument);
}

TEST_CASE("logarithmic: values") {
  LogarithmicPotential sys(0.9, 1.0);
  CHECK(sys.phi(make_vec({0.0, 0.0})) == Catch::Approx(0.0).margin(1e-15));
  CHECK(sys.phi(make_vec({1.0, 0.0})) == Catch::Approx(0.5 * std::log(2.0)));

  Vec q = make_vec({1.0, 0.9});
  Vec g = sys.phi_grad(q);
  for (int i = 0; i < 2; ++i) {
    double fd = oracles::central_diff(
        [&](double x) {
          Vec qq = q;
          qq[i] = x;
          return sys.phi(qq);
        },
        q[i], 1e-6);
    CHECK(std::abs(g[i] - fd) < 1e-8);
  }
}

TEST_CASE("elliptic coordinates") {
  double c1 = -1.0, c2 = -0.25;
  auto u0 = elliptic_coords(make_vec({0.0, 0.0}), c1, c2);
  CHECK(u0.u1 == Catch::Approx(1.0));
  CHECK(u0.u2 == Catch::Approx(0.25));

  // focal point: double root at u = -c1
  auto uf = elliptic_coords(make_vec({0.0, std::sqrt(0.75)}), c1, c2);
  CHECK(uf.u1 == Catch::Approx(1.0).margin(1e-9));
  CHECK(uf.u2 == Catch::Approx(1.0).margin(1e-9));

  auto u11 = elliptic_coords(make_vec({1.0, 1.0}), c1, c2);
  CHECK(u11.u1 + u11.u2 == Catch::Approx(3.25));
  CHECK(u11.u1 * u11.u2 == Catch::Approx(1.5));
  CHECK(u11.u2 >= -c2);
  CHECK(u11.u2 <= -c1);
  CHECK(u11.u1 >= -c1);

  CHECK_THROWS_AS(elliptic_coords(make_vec({0.0, 0.0}), -0.25, -1.0),
                  std::invalid_argument);
}

TEST_CASE("pps: value at the origin") {
  PpsPotential sys(-1.0, -0.25, 1.0);
  // hand evaluation: f(u1) -> 0 as u1 -> -c1; f(0.25) through the artanh form
  double f_u2 = -kTwoPi * (-0.75) * (-0.25) * std::sqrt(4.0 / 3.0) *
                std::atanh(std::sqrt(0.75));
  double expected = -(0.0 - f_u2) / 0.75;
  CHECK(sys.phi(make_vec({0.0, 0.0})) == Catch::Approx(expected).margin(1e-12));
  CHECK(expected == Catch::Approx(-2.3886).margin(1e-4));
}

TEST_CASE("pps: even and finite on the axes") {
  PpsPotential sys(-1.0, -0.25, 1.0);
  for (double x : {0.1, 0.9, 2.3}) {
    double v = sys.phi(make_vec({x, 0.0}));
    CHECK(std::isfinite(v));
    CHECK(sys.phi(make_vec({-x, 0.0})) == Catch::Approx(v).margin(1e-13));
  }
  for (double y : {0.3, 0.866, 1.7}) {
    double v = sys.phi(make_vec({0.0, y}));
    CHECK(std::isfinite(v));
    CHECK(sys.phi(make_vec({0.0, -y})) == Catch::Approx(v).margin(1e-13));
  }
  std::mt19937 rng(1);
  std::uniform_real_distribution<double> uni(-2.0, 2.0);
  for (int t = 0; t < 30; ++t) {
    Vec q = make_vec({uni(rng), uni(rng)});
    double v = sys.phi(q);
    CHECK(sys.phi(make_vec({-q[0], q[1]})) == Catch::Approx(v).margin(1e-13));
    CHECK(sys.phi(make_vec({q[0], -q[1]})) == Catch::Approx(v).margin(1e-13));
  }
}

TEST_CASE("pps: continuity across the singular sets") {
  PpsPotential sys(-1.0, -0.25, 1.0);
  // u1 -> -c1 happens on the inner q1 = 0 segment
  double mid = sys.phi(make_vec({0.0, 0.5}));
  CHECK(sys.phi(make_vec({1e-7, 0.5})) == Catch::Approx(mid).margin(1e-8));
  CHECK(sys.phi(make_vec({-1e-7, 0.5})) == Catch::Approx(mid).margin(1e-8));
  // focal point q = (0, sqrt(3)/2): approach from four sides
  double yf = std::sqrt(0.75);
  double at = sys.phi(make_vec({0.0, yf}));
  CHECK(std::isfinite(at));
  for (double eps : {1e-7, -1e-7}) {
    CHECK(sys.phi(make_vec({eps, yf})) == Catch::Approx(at).margin(1e-8));
    CHECK(sys.phi(make_vec({0.0, yf + eps})) == Catch::Approx(at).margin(1e-8));
  }
  // smooth through the series/closed-form switch radius
  for (double y = 0.80; y <= 0.94; y += 0.005) {
    double a = sys.phi(make_vec({1e-3, y}));
    double b = sys.phi(make_vec({1e-3, y + 2.5e-3}));
    CHECK(std::abs(a - b) < 1e-2);
  }
}

static void check_gradients(const Hamiltonian& sys, const Vec& q, const Vec& p) {
  Vec gq, gp, fq, fp;
  sys.gradients(q, p, gq, gp);
  oracles::fd_hamiltonian_grad(sys, q, p, fq, fp);
  for (int i = 0; i < sys.dim(); ++i) {
    double sq = std::max(1.0, std::abs(fq[i]));
    double sp = std::max(1.0, std::abs(fp[i]));
    CHECK(std::abs(gq[i] - fq[i]) / sq < 1e-6);
    CHECK(std::abs(gp[i] - fp[i]) / sp < 1e-6);
  }
}

static void check_hessians(const Hamiltonian& sys, const Vec& q, const Vec& p) {
  Mat Hqq, Hqp, Hpp;
  sys.hessians(q, p, Hqq, Hqp, Hpp);
  int n = sys.dim();
  for (int j = 0; j < n; ++j) {
    double h = 1e-6 * (1.0 + std::abs(q[j]));
    Vec qp_ = q, qm = q;
    qp_[j] += h;
    qm[j] -= h;
    Vec gqp, gpp, gqm, gpm;
    sys.gradients(qp_, p, gqp, gpp);
    sys.gradients(qm, p, gqm, gpm);
    for (int i = 0; i < n; ++i) {
      double fd = (gqp[i] - gqm[i]) / (2 * h);
      CHECK(std::abs(Hqq(i, j) - fd) / std::max(1.0, std::abs(fd)) < 2e-5);
      double fdqp = (gpp[i] - gpm[i]) / (2 * h);
      CHECK(std::abs(Hqp(i, j) - fdqp) < 1e-6);
    }
    // momentum block is exactly the identity for these systems
    for (int i = 0; i < n; ++i) CHECK(Hpp(i, j) == (i == j ? 1.0 : 0.0));
  }
}

TEST_CASE("gradient and hessian finite-difference sweep") {
  std::mt19937 rng(21);
  std::uniform_real_distribution<double> uq(-1.8, 1.8), up(-1.2, 1.2);

  IsochronePotential iso(1.0, 0.15);
  LogarithmicPotential log_(0.9, 1.0);
  PpsPotential pps(-1.0, -0.25, 1.0);
  HarmonicPotential harm(make_vec({1.0, 1.3}));

  for (int t = 0; t < 100; ++t) {
    Vec q1 = make_vec({uq(rng)}), p1 = make_vec({up(rng)});
    check_gradients(iso, q1, p1);
    check_hessians(iso, q1, p1);

    Vec q2 = make_vec({uq(rng), uq(rng)}), p2 = make_vec({up(rng), up(rng)});
    check_gradients(log_, q2, p2);
    check_hessians(log_, q2, p2);
    check_gradients(pps, q2, p2);
    check_hessians(pps, q2, p2);
    check_gradients(harm, q2, p2);
  }
}

TEST_CASE("pps: analytic derivatives near the singular sets") {
  PpsPotential pps(-1.0, -0.25, 1.0);
  double yf = std::sqrt(0.75);
  // points straddling the focal region and the axis segment
  for (Vec q : {make_vec({1e-4, yf}), make_vec({5e-3, yf + 2e-3}),
                make_vec({1e-5, 0.4}), make_vec({0.02, yf - 0.015}),
                make_vec({1e-3, 0.3}), make_vec({0.0, yf + 1e-4})}) {
    Vec p = make_vec({0.1, -0.2});
    check_gradients(pps, q, p);
    check_hessians(pps, q, p);
  }
}

TEST_CASE("pps: finite-difference fallback flag agrees with analytic path") {
  PpsPotential analytic(-1.0, -0.25, 1.0, false);
  PpsPotential fallback(-1.0, -0.25, 1.0, true);
  std::mt19937 rng(31);
  std::uniform_real_distribution<double> uni(-1.5, 1.5);
  for (int t = 0; t < 20; ++t) {
    Vec q = make_vec({uni(rng), uni(rng)});
    Vec ga = analytic.phi_grad(q), gf = fallback.phi_grad(q);
    for (int i = 0; i < 2; ++i)
      CHECK(std::abs(ga[i] - gf[i]) / std::max(1.0, std::abs(ga[i])) < 1e-6);
  }
}

TEST_CASE("H is even under p -> -p") {
  LogarithmicPotential sys(0.9, 1.0);
  Vec q = make_vec({0.4, -0.7}), p = make_vec({0.3, 0.9});
  CHECK(sys.value(q, p) == sys.value(q, -p));
}

TEST_CASE("system factory") {
  auto iso = make_system("isochrone", {{"c1", 1.0}, {"c2", 0.15}});
  CHECK(iso->dim() == 1);
  CHECK(iso->name() == "isochrone");
  auto pps = make_system("pps", {});
  CHECK(pps->dim() == 2);
  auto harm = make_system("harmonic", {{"n", 1.0}, {"omega1", 2.0}});
  CHECK(harm->dim() == 1);
  CHECK_THROWS_AS(make_system("nope", {}), ConfigError);
}
