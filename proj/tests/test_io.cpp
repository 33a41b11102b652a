#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <random>

#include "oracles.hpp"
#include "torusfit/io.hpp"
#include "torusfit/svg.hpp"

using namespace torusfit;

TEST_CASE("model JSON round trip is bit exact") {
  std::mt19937 rng(71);
  for (auto family : {Family::box, Family::loop, Family::odd1d, Family::general}) {
    int n = family_dimension(family);
    TorusModel m = oracles::random_masked_model(family, 4, n, rng, 3.0);
    // exercise awkward values
    Eigen::VectorXd x = m.flatten();
    x[0] = 1.0 / 3.0;
    x[1] = -0.0;
    x[2] = 1e-308;
    m.unflatten(x);
    json j = model_to_json(m);
    std::string text = j.dump();
    TorusModel back = model_from_json(json::parse(text));
    Eigen::VectorXd xb = back.flatten();
    REQUIRE(xb.size() == x.size());
    for (int i = 0; i < x.size(); ++i) {
      // bit-exact: compare representations, not values
      CHECK(std::memcmp(&xb[i], &x[i], sizeof(double)) == 0);
    }
    CHECK(back.family == m.family);
    CHECK(back.X == m.X);
  }
}

TEST_CASE("model JSON rejects corrupted documents") {
  TorusModel m = initial_guess(Family::box, 2);
  json j = model_to_json(m);
  json bad = j;
  bad["schema_version"] = 99;
  CHECK_THROWS_AS(model_from_json(bad), ConfigError);
  bad = j;
  bad["X"][0][0] = 7;  // index set no longer matches the family enumeration
  CHECK_THROWS_AS(model_from_json(bad), ConfigError);
  bad = j;
  bad["b"][0][0] = 0.5;  // outside the box mask
  CHECK_THROWS_AS(model_from_json(bad), ConfigError);
}

TEST_CASE("fit report JSON round trip") {
  HarmonicPotential sys(make_vec({1.0}));
  ThetaGrid grid = ThetaGrid::regular(1, 32, false);
  TorusModel init = initial_guess(Family::odd1d, 4, 0.9);
  ObjectiveSpec spec = ObjectiveSpec::frequency_labelled(make_vec({1.0}));
  SolverOptions opt;
  opt.max_iterations = 50;
  FitReport rep = fit(sys, grid, spec, init, opt);

  json j = report_to_json(rep);
  FitReport back = report_from_json(json::parse(j.dump()));
  CHECK(back.objective == rep.objective);
  CHECK(back.sigma_h == rep.sigma_h);
  CHECK(back.iterations == rep.iterations);
  CHECK(back.termination == rep.termination);
  CHECK(back.omega[0] == rep.omega[0]);
  CHECK(back.actions[0] == rep.actions[0]);
  CHECK(back.spec.mode == rep.spec.mode);
  CHECK(back.options.max_iterations == rep.options.max_iterations);
  Eigen::VectorXd a = rep.model.flatten(), b = back.model.flatten();
  for (int i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("csv formatting: 17 significant digits") {
  CsvWriter csv({"a", "b"});
  csv.field(1.0 / 3.0).field(2).end_row();
  CHECK(csv.str() == "a,b\n0.33333333333333331,2\n");
  CHECK(format_double(0.1) == "0.10000000000000001");
  double third = 1.0 / 3.0;
  CHECK(std::stod(format_double(third)) == third);
}

TEST_CASE("probe summary csv is ordered and complete") {
  ActionGrid grid = ActionGrid::regular(make_vec({0.1, 0.1}), {3, 3});
  auto oracle = [](const Vec& label, const TorusModel& seed) {
    FitReport rep;
    rep.model = seed;
    rep.omega = make_vec({1.0, 2.0});
    rep.actions = label;
    rep.consistency = 0.0;
    rep.termination = Termination::objective;
    rep.objective = label.norm() <= 0.25 ? 1e-9 : 1.0;
    return rep;
  };
  ProbeResult res =
      probe(grid, make_vec({0.1, 0.1}), TorusModel::zero(Family::box, 1, 2), oracle);
  std::string csv = probe_summary_csv(grid, res);
  size_t lines = std::count(csv.begin(), csv.end(), '\n');
  CHECK(lines == res.entries.size() + 1);
  CHECK(csv.rfind("m1,m2,J1,J2", 0) == 0);
}

TEST_CASE("svg output is deterministic") {
  SvgPlot a(0, 1, 0, 1);
  a.add_points({{0.5, 0.5}, {0.1, 0.9}}, 2.0, "black");
  a.add_polyline({{0, 0}, {1, 1}}, "gray");
  SvgPlot b(0, 1, 0, 1);
  b.add_points({{0.5, 0.5}, {0.1, 0.9}}, 2.0, "black");
  b.add_polyline({{0, 0}, {1, 1}}, "gray");
  CHECK(a.str() == b.str());
  CHECK(a.str().rfind("<svg", 0) == 0);
}
