#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "torusfit/dynamics.hpp"
#include "torusfit/model.hpp"

namespace torusfit {

struct Trajectory {
  std::vector<double> t;
  std::vector<Vec> q, p;
  std::vector<double> energy;

  int size() const { return static_cast<int>(t.size()); }

  double energy_sigma() const {
    double mean = 0.0;
    for (double e : energy) mean += e;
    mean /= energy.size();
    double var = 0.0;
    for (double e : energy) var += (e - mean) * (e - mean);
    return std::sqrt(var / energy.size());
  }
};

struct IntegratorOptions {
  double tolerance = 1e-13;  // absolute and relative
  double initial_step = 1e-2;
  double max_step = 0.5;
};

namespace detail {

// Gragg's smoothed modified midpoint: substeps with the endpoint average.
template <class Rhs>
void modified_midpoint(const Rhs& rhs, const Eigen::VectorXd& y0, double t0, double H,
                       int nstep, Eigen::VectorXd& out) {
  double h = H / nstep;
  Eigen::VectorXd zm = y0;
  Eigen::VectorXd z = y0 + h * rhs(t0, y0);
  Eigen::VectorXd f(y0.size());
  for (int m = 1; m < nstep; ++m) {
    f = rhs(t0 + m * h, z);
    Eigen::VectorXd znext = zm + 2.0 * h * f;
    zm = z;
    z = znext;
  }
  f = rhs(t0 + H, z);
  out = 0.5 * (z + zm + h * f);
}

/// Bulirsch-Stoer driver: midpoint sequence 2,4,6,... with polynomial
/// extrapolation in h^2; a step is accepted at the first column whose
/// extrapolation error passes the tolerance.
template <class Rhs>
class GbsStepper {
 public:
  GbsStepper(Rhs rhs, double tol) : rhs_(std::move(rhs)), tol_(tol) {}

  // advances y from t by at most h_try; returns the step actually taken and
  // suggests the next one
  void step(Eigen::VectorXd& y, double& t, double h_try, double& h_did, double& h_next) {
    constexpr int kmax = 9;
    double h = h_try;
    Eigen::VectorXd table[kmax];
    Eigen::VectorXd scale = (y.cwiseAbs().array() + 1.0).matrix();  // |y| + 1
    for (int attempt = 0; attempt < 60; ++attempt) {
      for (int k = 0; k < kmax; ++k) {
        int n = 2 * (k + 1);
        Eigen::VectorXd yk;
        modified_midpoint(rhs_, y, t, h, n, yk);
        table[k] = yk;
        // Aitken-Neville in (h/n)^2
        for (int j = k - 1; j >= 0; --j) {
          double nk = 2.0 * (k + 1), nj = 2.0 * (j + 1);
          double fac = (nk / nj) * (nk / nj) - 1.0;
          table[j] = table[j + 1] + (table[j + 1] - table[j]) / fac;
        }
        if (k >= 1) {
          double err = 0.0;
          for (int i = 0; i < y.size(); ++i)
            err = std::max(err, std::abs(table[0][i] - prev_[i]) / (tol_ * scale[i]));
          if (err <= 1.0) {
            y = table[0];
            t += h;
            h_did = h;
            double grow = 0.9 * std::pow(std::max(err, 1e-30), -1.0 / (2.0 * k + 1.0));
            h_next = h * std::min(5.0, std::max(0.2, grow));
            return;
          }
        }
        prev_ = table[0];
      }
      h *= 0.25;  // no column converged; retry with a smaller step
      if (std::abs(h) < 1e-14 * (std::abs(t) + 1.0))
        throw std::runtime_error("gbs: step size underflow at t = " + std::to_string(t));
    }
    throw std::runtime_error("gbs: step control failed at t = " + std::to_string(t));
  }

 private:
  Rhs rhs_;
  double tol_;
  Eigen::VectorXd prev_;
};

}  // namespace detail

/// Integrates Hamilton's equations with the Gragg-Bulirsch-Stoer extrapolation
/// scheme, recording every accepted step.
inline Trajectory integrate_orbit(const Hamiltonian& system, const Vec& q0, const Vec& p0,
                                  double t_end, const IntegratorOptions& opt = {}) {
  if (opt.tolerance <= 0) throw ConfigError("integrator.tolerance: must be > 0");
  const int n = system.dim();
  auto rhs = [&](double, const Eigen::VectorXd& y) {
    Vec q(n), p(n), dq(n), dp(n);
    for (int i = 0; i < n; ++i) {
      q[i] = y[i];
      p[i] = y[n + i];
    }
    system.gradients(q, p, dq, dp);
    Eigen::VectorXd dy(2 * n);
    for (int i = 0; i < n; ++i) {
      dy[i] = dp[i];        // qdot = dH/dp
      dy[n + i] = -dq[i];   // pdot = -dH/dq
    }
    return dy;
  };

  detail::GbsStepper<decltype(rhs)> stepper(rhs, opt.tolerance);
  Eigen::VectorXd y(2 * n);
  for (int i = 0; i < n; ++i) {
    y[i] = q0[i];
    y[n + i] = p0[i];
  }

  Trajectory traj;
  auto record = [&](double t) {
    Vec q(n), p(n);
    for (int i = 0; i < n; ++i) {
      q[i] = y[i];
      p[i] = y[n + i];
    }
    traj.t.push_back(t);
    traj.q.push_back(q);
    traj.p.push_back(p);
    traj.energy.push_back(system.value(q, p));
  };

  double t = 0.0;
  record(t);
  double h = std::min(opt.initial_step, opt.max_step);
  while (t < t_end) {
    double h_try = std::min(h, std::min(opt.max_step, t_end - t));
    double h_did, h_next;
    stepper.step(y, t, h_try, h_did, h_next);
    record(t);
    h = h_next;
  }
  return traj;
}

struct SectionPoint {
  double t;
  double x, xdot;  // (q1, p1) at the crossing
};

struct SectionSet {
  std::vector<SectionPoint> points;
  std::string source;  // "integrated" or "constructed"
};

namespace detail {

struct Hermite {
  // cubic Hermite interpolation of one component on [t0, t1]
  double t0, t1, y0, y1, d0, d1;
  double operator()(double t) const {
    double h = t1 - t0;
    double s = (t - t0) / h;
    double s2 = s * s, s3 = s2 * s;
    return (2 * s3 - 3 * s2 + 1) * y0 + (s3 - 2 * s2 + s) * h * d0 +
           (-2 * s3 + 3 * s2) * y1 + (s3 - s2) * h * d1;
  }
};

inline double bisect(const std::function<double(double)>& f, double a, double b,
                     double fa, int iters = 200) {
  // bisection with one sign known; stops at floating-point resolution
  for (int i = 0; i < iters; ++i) {
    double mid = 0.5 * (a + b);
    if (mid == a || mid == b) break;
    double fm = f(mid);
    if ((fm < 0) == (fa < 0)) {
      a = mid;
      fa = fm;
    } else {
      b = mid;
    }
  }
  return 0.5 * (a + b);
}

}  // namespace detail

/// Crossings of q2 = 0 with p2 > 0 along an integrated orbit. Each bracketing
/// step is refined on cubic Hermite interpolants (the stored p doubles as
/// dq/dt; dp/dt is re-evaluated from the system).
inline SectionSet section_from_orbit(const Hamiltonian& system, const Trajectory& traj) {
  if (system.dim() != 2)
    throw std::invalid_argument("section_from_orbit: sections are defined for n = 2");
  SectionSet out;
  out.source = "integrated";
  for (int i = 0; i + 1 < traj.size(); ++i) {
    double a = traj.q[static_cast<size_t>(i)][1];
    double b = traj.q[static_cast<size_t>(i + 1)][1];
    if (a == 0.0) continue;  // counted when it is the refined root below
    if ((a < 0) == (b < 0)) continue;
    // Hermite models for q2(t), then all components at the root
    auto grad_at = [&](int idx) {
      Vec dq(2), dp(2);
      system.gradients(traj.q[static_cast<size_t>(idx)], traj.p[static_cast<size_t>(idx)], dq,
                       dp);
      return std::pair<Vec, Vec>(dp, -dq);  // (qdot, pdot)
    };
    auto [qd0, pd0] = grad_at(i);
    auto [qd1, pd1] = grad_at(i + 1);
    double t0 = traj.t[static_cast<size_t>(i)], t1 = traj.t[static_cast<size_t>(i + 1)];
    detail::Hermite hq2{t0, t1, a, b, qd0[1], qd1[1]};
    double tc = detail::bisect([&](double t) { return hq2(t); }, t0, t1, a);
    detail::Hermite hp2{t0, t1, traj.p[static_cast<size_t>(i)][1],
                        traj.p[static_cast<size_t>(i + 1)][1], pd0[1], pd1[1]};
    if (hp2(tc) <= 0.0) continue;
    detail::Hermite hq1{t0, t1, traj.q[static_cast<size_t>(i)][0],
                        traj.q[static_cast<size_t>(i + 1)][0], qd0[0], qd1[0]};
    detail::Hermite hp1{t0, t1, traj.p[static_cast<size_t>(i)][0],
                        traj.p[static_cast<size_t>(i + 1)][0], pd0[0], pd1[0]};
    out.points.push_back({tc, hq1(tc), hp1(tc)});
  }
  return out;
}

/// Crossings of q2(theta0 + omega t) = 0 with dq2/dt > 0 on a constructed
/// torus, root-solved on the model itself.
inline SectionSet section_from_model(const TorusModel& model, const Vec& omega,
                                     const Vec& theta0, int crossings,
                                     double max_time = -1.0) {
  if (model.n != 2)
    throw std::invalid_argument("section_from_model: sections are defined for n = 2");
  SectionSet out;
  out.source = "constructed";
  double wmax = std::max(std::abs(omega[0]), std::abs(omega[1]));
  if (!(wmax > 0)) throw std::invalid_argument("section_from_model: zero frequencies");
  if (max_time < 0) max_time = crossings * 40.0 * kTwoPi / wmax;
  double dt = kTwoPi / (40.0 * wmax);

  auto q2_at = [&](double t) {
    Vec th = theta0 + t * omega;
    return eval(model, th).q[1];
  };
  double t = 0.0, prev = q2_at(0.0);
  double budget_used = 0.0;
  while (static_cast<int>(out.points.size()) < crossings && budget_used < max_time) {
    double tn = t + dt;
    double cur = q2_at(tn);
    if ((prev < 0) != (cur < 0) && prev != 0.0) {
      double tc = detail::bisect(q2_at, t, tn, prev);
      Vec th = theta0 + tc * omega;
      auto dd = eval_derivs(model, th);
      double q2dot = dd.dq(1, 0) * omega[0] + dd.dq(1, 1) * omega[1];
      if (q2dot > 0.0) {
        auto pp = eval(model, th);
        out.points.push_back({tc, pp.q[0], pp.p[0]});
      }
    }
    t = tn;
    prev = cur;
    budget_used = tn;
  }
  if (static_cast<int>(out.points.size()) < crossings)
    throw std::runtime_error("section_from_model: crossing budget exhausted (found " +
                             std::to_string(out.points.size()) + ")");
  return out;
}

struct SectionDistance {
  double hausdorff = 0.0;
  double mean_nn = 0.0;
};

/// Symmetric Hausdorff and mean nearest-neighbour distances between two
/// crossing sets in the (x, xdot) plane.
inline SectionDistance compare_sections(const SectionSet& a, const SectionSet& b) {
  if (a.points.empty() || b.points.empty())
    throw std::invalid_argument("compare_sections: empty section set");
  auto directed = [](const SectionSet& from, const SectionSet& to, double& sum) {
    double sup = 0.0;
    for (const auto& p : from.points) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : to.points) {
        double dx = p.x - q.x, dy = p.xdot - q.xdot;
        best = std::min(best, dx * dx + dy * dy);
      }
      best = std::sqrt(best);
      sup = std::max(sup, best);
      sum += best;
    }
    return sup;
  };
  double sum = 0.0;
  double dab = directed(a, b, sum);
  double dba = directed(b, a, sum);
  SectionDistance d;
  d.hausdorff = std::max(dab, dba);
  d.mean_nn = sum / (a.points.size() + b.points.size());
  return d;
}

/// Upward crossing times of one coordinate along a trajectory (Hermite
/// refined). Used for period extraction in 1D systems.
inline std::vector<double> crossing_times(const Hamiltonian& system, const Trajectory& traj,
                                          int coord) {
  std::vector<double> out;
  for (int i = 0; i + 1 < traj.size(); ++i) {
    double a = traj.q[static_cast<size_t>(i)][coord];
    double b = traj.q[static_cast<size_t>(i + 1)][coord];
    if (a == 0.0 || (a < 0) == (b < 0)) continue;
    if (!(a < 0 && b >= 0)) continue;  // upward only
    Vec dq(system.dim()), dp(system.dim());
    system.gradients(traj.q[static_cast<size_t>(i)], traj.p[static_cast<size_t>(i)], dq, dp);
    double d0 = dp[coord];
    system.gradients(traj.q[static_cast<size_t>(i + 1)], traj.p[static_cast<size_t>(i + 1)],
                     dq, dp);
    double d1 = dp[coord];
    detail::Hermite h{traj.t[static_cast<size_t>(i)], traj.t[static_cast<size_t>(i + 1)], a, b,
                      d0, d1};
    out.push_back(detail::bisect([&](double t) { return h(t); },
                                 traj.t[static_cast<size_t>(i)],
                                 traj.t[static_cast<size_t>(i + 1)], a));
  }
  return out;
}

}  // namespace torusfit
