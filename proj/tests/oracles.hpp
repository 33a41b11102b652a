// Test-only oracles: finite differences, contour integrals, random models.
// These stay independent of the implementation paths they check.
#pragma once

#include <functional>
#include <random>

#include "torusfit/dynamics.hpp"
#include "torusfit/model.hpp"

namespace oracles {

using torusfit::Mat;
using torusfit::TorusModel;
using torusfit::Vec;

/// Central difference of a scalar function of one phase-space coordinate.
inline double central_diff(const std::function<double(double)>& f, double x,
                           double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

/// Contour integral J_h = (1/2pi) sum_j int p_j dq_j/dtheta_h dtheta_h by the
/// trapezoid rule on an equally spaced grid (exact for band-limited
/// integrands given enough points).
inline double contour_action(const TorusModel& m, const Vec& theta_base, int h,
                             int samples) {
  double acc = 0.0;
  double step = torusfit::kTwoPi / samples;
  for (int s = 0; s < samples; ++s) {
    Vec th = theta_base;
    th[h] = s * step;
    auto pp = torusfit::eval(m, th);
    auto dd = torusfit::eval_derivs(m, th);
    double integrand = 0.0;
    for (int j = 0; j < m.n; ++j) integrand += pp.p[j] * dd.dq(j, h);
    acc += integrand;
  }
  return acc * step / torusfit::kTwoPi;
}

/// Fills the free slots of a zero model with uniform random coefficients.
inline TorusModel random_masked_model(torusfit::Family family, int N, int n,
                                      std::mt19937& rng, double amplitude = 1.0) {
  TorusModel m = TorusModel::zero(family, N, n);
  std::uniform_real_distribution<double> uni(-amplitude, amplitude);
  Eigen::VectorXd x(m.free_count());
  for (int i = 0; i < x.size(); ++i) x[i] = uni(rng);
  m.unflatten(x);
  return m;
}

inline Vec random_theta(int n, std::mt19937& rng) {
  std::uniform_real_distribution<double> uni(0.0, torusfit::kTwoPi);
  Vec th(n);
  for (int i = 0; i < n; ++i) th[i] = uni(rng);
  return th;
}

/// Gradient of H by central differences, step scaled per coordinate.
inline void fd_hamiltonian_grad(const torusfit::Hamiltonian& sys, const Vec& q,
                                const Vec& p, Vec& dHdq, Vec& dHdp) {
  int n = sys.dim();
  dHdq.resize(n);
  dHdp.resize(n);
  for (int i = 0; i < n; ++i) {
    double hq = 1e-6 * (1.0 + std::abs(q[i]));
    Vec qp = q, qm = q;
    qp[i] += hq;
    qm[i] -= hq;
    dHdq[i] = (sys.value(qp, p) - sys.value(qm, p)) / (2.0 * hq);
    double hp = 1e-6 * (1.0 + std::abs(p[i]));
    Vec pp = p, pm = p;
    pp[i] += hp;
    pm[i] -= hp;
    dHdp[i] = (sys.value(q, pp) - sys.value(q, pm)) / (2.0 * hp);
  }
}

}  // namespace oracles
