#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <functional>
#include <future>
#include <map>
#include <set>
#include <thread>
#include <vector>

#include "torusfit/solver.hpp"

namespace torusfit {

using LatticeIndex = std::array<int, 2>;  // second component unused for n = 1

/// Rectangular lattice of action labels J_h = m_h * dJ_h, m_h = 0..max_index_h.
struct ActionGrid {
  int n = 0;
  Vec dJ;
  std::array<int, 2> max_index{0, 0};

  static ActionGrid regular(const Vec& dJ, const std::array<int, 2>& max_index) {
    ActionGrid g;
    g.n = static_cast<int>(dJ.size());
    for (int h = 0; h < g.n; ++h) {
      if (dJ[h] <= 0) throw ConfigError("probe.delta_j: spacing must be > 0");
      if (max_index[static_cast<size_t>(h)] < 0)
        throw ConfigError("probe.max_index: must be >= 0");
    }
    g.dJ = dJ;
    g.max_index = max_index;
    return g;
  }

  int count() const {
    int c = 1;
    for (int h = 0; h < n; ++h) c *= max_index[static_cast<size_t>(h)] + 1;
    return c;
  }

  Vec point(const LatticeIndex& m) const {
    Vec J(n);
    for (int h = 0; h < n; ++h) J[h] = m[static_cast<size_t>(h)] * dJ[h];
    return J;
  }

  bool contains(const LatticeIndex& m) const {
    for (int h = 0; h < n; ++h)
      if (m[static_cast<size_t>(h)] < 0 || m[static_cast<size_t>(h)] > max_index[static_cast<size_t>(h)])
        return false;
    return true;
  }

  /// Closest lattice index to J (clamped to the bounds); exact half-way ties
  /// round toward the smaller index, which is lexicographic for tuples.
  LatticeIndex nearest_point(const Vec& J) const {
    LatticeIndex m{0, 0};
    for (int h = 0; h < n; ++h) {
      double x = J[h] / dJ[h];
      double up = std::ceil(x - 0.5);  // rounds half-way cases down
      int i = static_cast<int>(up);
      i = std::max(0, std::min(max_index[static_cast<size_t>(h)], i));
      m[static_cast<size_t>(h)] = i;
    }
    return m;
  }

  /// Moore neighbourhood (adjacent and diagonally adjacent) within bounds.
  std::vector<LatticeIndex> adjacent_points(const LatticeIndex& m) const {
    std::vector<LatticeIndex> out;
    if (n == 1) {
      for (int d : {-1, 1}) {
        LatticeIndex k{m[0] + d, 0};
        if (contains(k)) out.push_back(k);
      }
      return out;
    }
    for (int d0 = -1; d0 <= 1; ++d0)
      for (int d1 = -1; d1 <= 1; ++d1) {
        if (d0 == 0 && d1 == 0) continue;
        LatticeIndex k{m[0] + d0, m[1] + d1};
        if (contains(k)) out.push_back(k);
      }
    return out;
  }
};

/// Constructs a torus for a lattice label, starting from the given seed
/// model. Implementations wrap the labelled fit; tests may substitute a
/// synthetic oracle.
using ProbeFitFn =
    std::function<FitReport(const Vec& label, const TorusModel& seed_model)>;

struct ProbeOptions {
  double threshold = 1e-6;  // accept when total objective <= threshold
  bool parallel = true;
};

struct ProbeEntry {
  FitReport report;
  bool accepted = false;
  int generation = -1;
  LatticeIndex parent{-1, -1};
  bool has_parent = false;
};

/// Wavefront expansion record: disjoint generations, one entry per fitted
/// lattice index (each index is fitted at most once).
struct ProbeResult {
  std::vector<std::vector<LatticeIndex>> generations;
  std::map<LatticeIndex, ProbeEntry> entries;

  int accepted_count() const {
    int c = 0;
    for (const auto& [m, e] : entries) c += e.accepted ? 1 : 0;
    return c;
  }
};

namespace detail {

inline bool probe_good(const FitReport& rep, double threshold) {
  return rep.termination != Termination::degenerate && std::isfinite(rep.objective) &&
         std::isfinite(rep.consistency) && rep.objective <= threshold;
}

}  // namespace detail

/// Labelled-fit callback for production probing: action label + consistency
/// term with rho = 0.01/#C, seeded from the parent torus. Any failure inside
/// a fit (collapse, non-finite residuals) comes back as a rejectable report.
inline ProbeFitFn make_labelled_probe_fit(const Hamiltonian& system, const ThetaGrid& grid,
                                          std::array<double, 5> lambda,
                                          const SolverOptions& options) {
  return [&system, &grid, lambda, options](const Vec& label, const TorusModel& seed) {
    FitReport rep;
    try {
      ObjectiveSpec spec = ObjectiveSpec::action_labelled(label);
      spec.lambda = lambda;
      spec.rho = consistency_rho(seed);
      rep = fit(system, grid, spec, seed, options);
    } catch (const std::exception&) {
      rep.model = seed;
      rep.termination = Termination::degenerate;
      rep.objective = std::numeric_limits<double>::infinity();
      rep.per_point_objective = rep.objective;
      rep.omega = Vec::Constant(seed.n, std::numeric_limits<double>::quiet_NaN());
      rep.actions = label;
      rep.consistency = std::numeric_limits<double>::quiet_NaN();
    }
    return rep;
  };
}

/// Expands an accepted region over the action lattice. The seed label is
/// mapped to its nearest lattice point and fitted from the seed model; each
/// following generation fits the still-unvisited neighbours of the previous
/// one, seeded by their parent torus. A point adjacent to several parents is
/// fitted from the parent with the lowest objective (ties: lexicographically
/// smaller parent index), so parallel and sequential runs agree exactly.
inline ProbeResult probe(const ActionGrid& grid, const Vec& seed_actions,
                         const TorusModel& seed_model, const ProbeFitFn& construct,
                         const ProbeOptions& options = {}) {
  ProbeResult res;
  std::set<LatticeIndex> visited;

  auto run_generation = [&](const std::vector<std::pair<LatticeIndex, const TorusModel*>>&
                                jobs) {
    std::vector<FitReport> reports(jobs.size());
    unsigned workers = options.parallel ? std::thread::hardware_concurrency() : 1;
    if (workers <= 1 || jobs.size() <= 1) {
      for (size_t i = 0; i < jobs.size(); ++i)
        reports[i] = construct(grid.point(jobs[i].first), *jobs[i].second);
    } else {
      std::atomic<size_t> next{0};
      auto worker = [&]() {
        for (size_t i = next.fetch_add(1); i < jobs.size(); i = next.fetch_add(1))
          reports[i] = construct(grid.point(jobs[i].first), *jobs[i].second);
      };
      std::vector<std::future<void>> futs;
      for (unsigned w = 0; w < std::min<size_t>(workers, jobs.size()); ++w)
        futs.push_back(std::async(std::launch::async, worker));
      for (auto& f : futs) f.get();
    }
    return reports;
  };

  // generation 0: the seed's nearest lattice point, fitted from the seed
  LatticeIndex k0 = grid.nearest_point(seed_actions);
  FitReport rep0 = construct(grid.point(k0), seed_model);
  visited.insert(k0);
  ProbeEntry e0;
  e0.accepted = detail::probe_good(rep0, options.threshold);
  e0.report = std::move(rep0);
  e0.generation = 0;
  res.generations.push_back(e0.accepted ? std::vector<LatticeIndex>{k0}
                                        : std::vector<LatticeIndex>{});
  res.entries.emplace(k0, std::move(e0));

  while (!res.generations.back().empty()) {
    const auto& current = res.generations.back();
    // assign each unvisited neighbour to its best parent
    std::map<LatticeIndex, LatticeIndex> parent_of;
    for (const LatticeIndex& m : current) {
      double mobj = res.entries.at(m).report.objective;
      for (const LatticeIndex& k : grid.adjacent_points(m)) {
        if (visited.count(k)) continue;
        auto it = parent_of.find(k);
        if (it == parent_of.end()) {
          parent_of.emplace(k, m);
        } else {
          double cur = res.entries.at(it->second).report.objective;
          if (mobj < cur || (mobj == cur && m < it->second)) it->second = m;
        }
      }
    }
    std::vector<std::pair<LatticeIndex, const TorusModel*>> jobs;
    for (const auto& [k, m] : parent_of)
      jobs.emplace_back(k, &res.entries.at(m).report.model);
    std::vector<FitReport> reports = run_generation(jobs);

    int gen = static_cast<int>(res.generations.size());
    std::vector<LatticeIndex> next_gen;
    size_t i = 0;
    for (const auto& [k, m] : parent_of) {
      visited.insert(k);
      ProbeEntry e;
      e.accepted = detail::probe_good(reports[i], options.threshold);
      e.report = std::move(reports[i]);
      e.generation = gen;
      e.parent = m;
      e.has_parent = true;
      if (e.accepted) next_gen.push_back(k);
      res.entries.emplace(k, std::move(e));
      ++i;
    }
    res.generations.push_back(std::move(next_gen));
  }
  if (res.generations.size() > 1) res.generations.pop_back();  // drop the empty tail
  return res;
}

}  // namespace torusfit
