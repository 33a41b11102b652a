#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "torusfit/common.hpp"

namespace torusfit {

/// Autonomous Hamiltonian H(q,p) with analytic first and second derivatives.
class Hamiltonian {
 public:
  virtual ~Hamiltonian() = default;

  int dim() const { return n_; }
  const std::string& name() const { return name_; }
  const std::vector<std::pair<std::string, double>>& params() const { return params_; }

  virtual double value(const Vec& q, const Vec& p) const = 0;
  virtual void gradients(const Vec& q, const Vec& p, Vec& dHdq, Vec& dHdp) const = 0;
  virtual void hessians(const Vec& q, const Vec& p, Mat& Hqq, Mat& Hqp, Mat& Hpp) const = 0;

 protected:
  Hamiltonian(int n, std::string name, std::vector<std::pair<std::string, double>> params)
      : n_(n), name_(std::move(name)), params_(std::move(params)) {}

 private:
  int n_;
  std::string name_;
  std::vector<std::pair<std::string, double>> params_;
};

/// Kinetic-plus-potential form H = p.p/2 + phi(q); dH/dp = p exactly.
class PotentialHamiltonian : public Hamiltonian {
 public:
  using Hamiltonian::Hamiltonian;

  virtual double phi(const Vec& q) const = 0;
  virtual Vec phi_grad(const Vec& q) const = 0;
  virtual Mat phi_hess(const Vec& q) const = 0;

  double value(const Vec& q, const Vec& p) const final {
    return 0.5 * p.squaredNorm() + phi(q);
  }
  void gradients(const Vec& q, const Vec& p, Vec& dHdq, Vec& dHdp) const final {
    dHdq = phi_grad(q);
    dHdp = p;
  }
  void hessians(const Vec& q, const Vec&, Mat& Hqq, Mat& Hqp, Mat& Hpp) const final {
    Hqq = phi_hess(q);
    Hqp = Mat::Zero(dim(), dim());
    Hpp = Mat::Identity(dim(), dim());
  }
};

/// 1D isochrone well: phi(q) = -c1 / (c2 + sqrt(c2^2 + q^2)).
class IsochronePotential final : public PotentialHamiltonian {
 public:
  IsochronePotential(double c1, double c2)
      : PotentialHamiltonian(1, "isochrone", {{"c1", c1}, {"c2", c2}}), c1_(c1), c2_(c2) {
    if (c1 <= 0 || c2 <= 0) throw std::invalid_argument("isochrone: c1, c2 must be > 0");
  }

  double phi(const Vec& q) const override {
    double s = std::sqrt(c2_ * c2_ + q[0] * q[0]);
    return -c1_ / (c2_ + s);
  }
  Vec phi_grad(const Vec& q) const override {
    double s = std::sqrt(c2_ * c2_ + q[0] * q[0]);
    double t = c2_ + s;
    return make_vec({c1_ * q[0] / (s * t * t)});
  }
  Mat phi_hess(const Vec& q) const override {
    double x = q[0];
    double s = std::sqrt(c2_ * c2_ + x * x);
    double t = c2_ + s;
    Mat h(1, 1);
    h(0, 0) = c1_ * (1.0 / (s * t * t) - x * x / (s * s * s * t * t) -
                     2.0 * x * x / (s * s * t * t * t));
    return h;
  }

 private:
  double c1_, c2_;
};

/// Uncoupled harmonic potential, phi = sum_i Omega_i^2 q_i^2 / 2.
class HarmonicPotential final : public PotentialHamiltonian {
 public:
  explicit HarmonicPotential(Vec freq)
      : PotentialHamiltonian(static_cast<int>(freq.size()), "harmonic", named(freq)),
        freq_(std::move(freq)) {}

  double phi(const Vec& q) const override {
    double s = 0.0;
    for (int i = 0; i < dim(); ++i) s += freq_[i] * freq_[i] * q[i] * q[i];
    return 0.5 * s;
  }
  Vec phi_grad(const Vec& q) const override {
    Vec g(dim());
    for (int i = 0; i < dim(); ++i) g[i] = freq_[i] * freq_[i] * q[i];
    return g;
  }
  Mat phi_hess(const Vec&) const override {
    Mat h = Mat::Zero(dim(), dim());
    for (int i = 0; i < dim(); ++i) h(i, i) = freq_[i] * freq_[i];
    return h;
  }

 private:
  static std::vector<std::pair<std::string, double>> named(const Vec& f) {
    std::vector<std::pair<std::string, double>> p;
    for (int i = 0; i < f.size(); ++i) p.emplace_back("omega" + std::to_string(i + 1), f[i]);
    return p;
  }
  Vec freq_;
};

/// Planar logarithmic potential, phi = (1/2) ln(q1^2 + q2^2/c1^2 + c2^2).
class LogarithmicPotential final : public PotentialHamiltonian {
 public:
  LogarithmicPotential(double c1, double c2)
      : PotentialHamiltonian(2, "logarithmic", {{"c1", c1}, {"c2", c2}}), c1_(c1), c2_(c2) {
    if (c1 <= 0 || c2 <= 0) throw std::invalid_argument("logarithmic: c1, c2 must be > 0");
  }

  double phi(const Vec& q) const override { return 0.5 * std::log(arg(q)); }
  Vec phi_grad(const Vec& q) const override {
    double s = arg(q);
    return make_vec({q[0] / s, q[1] / (c1_ * c1_ * s)});
  }
  Mat phi_hess(const Vec& q) const override {
    double s = arg(q);
    double s2 = s * s, b = c1_ * c1_;
    Mat h(2, 2);
    h(0, 0) = (s - 2.0 * q[0] * q[0]) / s2;
    h(0, 1) = h(1, 0) = -2.0 * q[0] * q[1] / (b * s2);
    h(1, 1) = (s - 2.0 * q[1] * q[1] / b) / (b * s2);
    return h;
  }

 private:
  double arg(const Vec& q) const {
    return q[0] * q[0] + q[1] * q[1] / (c1_ * c1_) + c2_ * c2_;
  }
  double c1_, c2_;
};

/// Elliptic coordinates u1 >= -c1 >= u2 >= -c2 for c1 < c2 < 0, defined by
///   u1 + u2 = -c1 - c2 + q1^2 + q2^2,  u1 u2 = c1 c2 - c2 q1^2 - c1 q2^2.
struct EllipticCoords {
  double u1, u2;
};

inline EllipticCoords elliptic_coords(const Vec& q, double c1, double c2) {
  if (!(c1 < c2 && c2 < 0))
    throw std::invalid_argument("elliptic_coords: requires c1 < c2 < 0");
  double sum = -c1 - c2 + q[0] * q[0] + q[1] * q[1];
  double prod = c1 * c2 - c2 * q[0] * q[0] - c1 * q[1] * q[1];
  double disc = sum * sum - 4.0 * prod;
  if (disc < 0.0) {
    if (disc < -1e-14) throw std::invalid_argument("elliptic_coords: negative discriminant");
    disc = 0.0;
  }
  double root = std::sqrt(disc);
  EllipticCoords u;
  u.u1 = 0.5 * (sum + root);  // sum >= -c1-c2 > 0, no cancellation here
  u.u2 = (u.u1 != 0.0) ? prod / u.u1 : 0.5 * (sum - root);
  // round-off can push the roots just past the legal band
  u.u1 = std::max(u.u1, -c1);
  u.u2 = std::min(std::max(u.u2, -c2), -c1);
  return u;
}

namespace detail {

// The Staeckel f of the perfect prolate spheroid. Both closed forms (arctan
// for u > -c1, artanh for u < -c1) continue the same analytic function
//   f(u) = g * sum_{j>=1} (-1)^{j+1} eps^j / ((2j-1) (-c1)^(j-1)),
// eps = u + c1, g = -2 pi c2 c3. Near eps = 0 the closed forms degenerate to
// 0 * inf; the series takes over there.
struct PpsF {
  double g;        // -2 pi c2 c3
  double m2;       // -c1 > 0
  double r_point;  // series switch radius

  struct Value {
    double f, fp, fpp;
  };

  Value eval(double eps) const {
    if (std::abs(eps) < r_point) return series(eps);
    if (eps > 0) {
      double x = std::sqrt(eps / m2);
      double x2 = x * x;
      double T = std::atan(x);
      Value v;
      v.f = g * m2 * x * T;
      v.fp = g * (T + x / (1.0 + x2)) / (2.0 * x);
      v.fpp = g * (2.0 * x / ((1.0 + x2) * (1.0 + x2)) - T - x / (1.0 + x2)) /
              (4.0 * m2 * x * x2);
      return v;
    }
    double y = std::sqrt(-eps / m2);
    double y2 = y * y;
    double T = std::atanh(y);
    Value v;
    v.f = -g * m2 * y * T;
    v.fp = g * (T + y / (1.0 - y2)) / (2.0 * y);
    v.fpp = -g * (2.0 * y / ((1.0 - y2) * (1.0 - y2)) - T - y / (1.0 - y2)) /
            (4.0 * m2 * y * y2);
    return v;
  }

  double coeff(int j) const {
    double c = g / (2.0 * j - 1.0);
    if (j % 2 == 0) c = -c;
    return c / std::pow(m2, j - 1);
  }

  static constexpr int kTerms = 14;

  Value series(double eps) const {
    Value v{0.0, 0.0, 0.0};
    double ep = 1.0;  // eps^(j-1)
    double e2 = 1.0;  // eps^(j-2), from j = 2
    for (int j = 1; j <= kTerms; ++j) {
      double cj = coeff(j);
      v.f += cj * ep * eps;
      v.fp += cj * j * ep;
      if (j >= 2) {
        v.fpp += cj * j * (j - 1) * e2;
        e2 *= eps;
      }
      ep *= eps;
    }
    return v;
  }
};

}  // namespace detail

/// Perfect prolate spheroid: phi = -(f(u1) - f(u2)) / (u1 - u2) through
/// elliptic coordinates. Derivatives are analytic; near the focal points
/// (u1, u2 -> -c1) everything is evaluated through the symmetric functions
/// e1 = eps1 + eps2, e2 = eps1 eps2, which are polynomial in q.
class PpsPotential final : public PotentialHamiltonian {
 public:
  PpsPotential(double c1, double c2, double c3, bool fd_derivatives = false)
      : PotentialHamiltonian(2, "pps", {{"c1", c1}, {"c2", c2}, {"c3", c3}}),
        c1_(c1), c2_(c2), c3_(c3), fd_(fd_derivatives) {
    if (!(c1 < c2 && c2 < 0 && c3 > 0))
      throw std::invalid_argument("pps: requires c1 < c2 < 0 and c3 > 0");
    f_.g = -kTwoPi * c2 * c3;
    f_.m2 = -c1;
    f_.r_point = 0.01 * f_.m2;
  }

  double phi(const Vec& q) const override {
    Divided dd = divided(q);
    return -dd.D;
  }

  Vec phi_grad(const Vec& q) const override {
    if (fd_) return fd_grad(q);
    Grad g = grad_terms(q);
    return make_vec({g.gx, g.gy});
  }

  Mat phi_hess(const Vec& q) const override {
    if (fd_) return fd_hess(q);
    return hess_terms(q);
  }

 private:
  struct Divided {
    // divided difference D = (f(u1)-f(u2))/(u1-u2) and partials w.r.t. u
    double D, D1, D2, D11, D12, D22;
    bool symmetric;  // evaluated through (e1, e2)
    double De1, De2, De1e1, De1e2, De2e2;
    double u1, u2;
  };

  struct Grad {
    double gx, gy;
  };

  // series in the complete homogeneous symmetric polynomials h_r(eps1, eps2)
  // with h_r = e1 h_{r-1} - e2 h_{r-2}
  Divided divided_symmetric(double e1, double e2) const {
    constexpr int J = detail::PpsF::kTerms;
    double h[J], he1[J], he2[J], he11[J], he12[J], he22[J];
    for (int r = 0; r < J; ++r) {
      auto prev = [&](double* arr, int i) { return i >= 0 ? arr[i] : 0.0; };
      if (r == 0) {
        h[0] = 1.0;
        he1[0] = he2[0] = he11[0] = he12[0] = he22[0] = 0.0;
        continue;
      }
      h[r] = e1 * h[r - 1] - e2 * prev(h, r - 2);
      he1[r] = h[r - 1] + e1 * he1[r - 1] - e2 * prev(he1, r - 2);
      he2[r] = -prev(h, r - 2) + e1 * he2[r - 1] - e2 * prev(he2, r - 2);
      he11[r] = 2.0 * he1[r - 1] + e1 * he11[r - 1] - e2 * prev(he11, r - 2);
      he12[r] = he2[r - 1] - prev(he1, r - 2) + e1 * he12[r - 1] - e2 * prev(he12, r - 2);
      he22[r] = -2.0 * prev(he2, r - 2) + e1 * he22[r - 1] - e2 * prev(he22, r - 2);
    }
    Divided dd{};
    dd.symmetric = true;
    for (int j = 1; j <= J; ++j) {
      double cj = f_.coeff(j);
      dd.D += cj * h[j - 1];
      dd.De1 += cj * he1[j - 1];
      dd.De2 += cj * he2[j - 1];
      dd.De1e1 += cj * he11[j - 1];
      dd.De1e2 += cj * he12[j - 1];
      dd.De2e2 += cj * he22[j - 1];
    }
    return dd;
  }

  Divided divided(const Vec& q) const {
    EllipticCoords u = elliptic_coords(q, c1_, c2_);
    double eps1 = u.u1 + c1_;
    double eps2 = u.u2 + c1_;  // <= 0
    double r = f_.r_point;
    if (eps1 < r && -eps2 < r) {
      double sum = -c1_ - c2_ + q[0] * q[0] + q[1] * q[1];
      double prod = c1_ * c2_ - c2_ * q[0] * q[0] - c1_ * q[1] * q[1];
      Divided dd = divided_symmetric(sum + 2.0 * c1_, prod + c1_ * sum + c1_ * c1_);
      dd.u1 = u.u1;
      dd.u2 = u.u2;
      return dd;
    }
    auto f1 = f_.eval(eps1);
    auto f2 = f_.eval(eps2);
    double du = u.u1 - u.u2;  // >= r here, divided differences stay stable
    Divided dd{};
    dd.symmetric = false;
    dd.u1 = u.u1;
    dd.u2 = u.u2;
    dd.D = (f1.f - f2.f) / du;
    dd.D1 = (f1.fp - dd.D) / du;
    dd.D2 = (dd.D - f2.fp) / du;
    dd.D11 = (f1.fpp - 2.0 * dd.D1) / du;
    dd.D12 = (dd.D1 - dd.D2) / du;
    dd.D22 = (2.0 * dd.D2 - f2.fpp) / du;
    return dd;
  }

  Grad grad_terms(const Vec& q) const {
    Divided dd = divided(q);
    if (dd.symmetric) {
      // e1(q) = sum + 2 c1, e2(q) = prod + c1 sum + c1^2
      double s1 = 2.0 * q[0], s2 = 2.0 * q[1];
      double p1 = -2.0 * c2_ * q[0], p2 = -2.0 * c1_ * q[1];
      double e1x = s1, e1y = s2;
      double e2x = p1 + c1_ * s1, e2y = p2 + c1_ * s2;
      return {-(dd.De1 * e1x + dd.De2 * e2x), -(dd.De1 * e1y + dd.De2 * e2y)};
    }
    double du = dd.u1 - dd.u2;
    auto du_dq = [&](double u, double w) {
      return Vec(make_vec({2.0 * q[0] * (u + c2_) / w, 2.0 * q[1] * (u + c1_) / w}));
    };
    Vec u1g = du_dq(dd.u1, du);
    Vec u2g = du_dq(dd.u2, -du);
    return {-(dd.D1 * u1g[0] + dd.D2 * u2g[0]), -(dd.D1 * u1g[1] + dd.D2 * u2g[1])};
  }

  Mat hess_terms(const Vec& q) const {
    Divided dd = divided(q);
    Mat H(2, 2);
    if (dd.symmetric) {
      double e1d[2] = {2.0 * q[0], 2.0 * q[1]};
      double e2d[2] = {-2.0 * c2_ * q[0] + 2.0 * c1_ * q[0],
                       -2.0 * c1_ * q[1] + 2.0 * c1_ * q[1]};
      // second derivatives of e1, e2 (diagonal, constant)
      double e1dd[2] = {2.0, 2.0};
      double e2dd[2] = {-2.0 * c2_ + 2.0 * c1_, -2.0 * c1_ + 2.0 * c1_};
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
          double v = dd.De1e1 * e1d[i] * e1d[j] +
                     dd.De1e2 * (e1d[i] * e2d[j] + e2d[i] * e1d[j]) +
                     dd.De2e2 * e2d[i] * e2d[j];
          if (i == j) v += dd.De1 * e1dd[i] + dd.De2 * e2dd[i];
          H(i, j) = -v;
        }
      return H;
    }
    double du = dd.u1 - dd.u2;
    double sd[2] = {2.0 * q[0], 2.0 * q[1]};
    double pd[2] = {-2.0 * c2_ * q[0], -2.0 * c1_ * q[1]};
    double sdd[2] = {2.0, 2.0};
    double pdd[2] = {-2.0 * c2_, -2.0 * c1_};
    double u1d[2], u2d[2];
    for (int i = 0; i < 2; ++i) {
      u1d[i] = (dd.u1 * sd[i] - pd[i]) / du;
      u2d[i] = (dd.u2 * sd[i] - pd[i]) / (-du);
    }
    // u_ij = [ u_j s_i + u s_ij - p_ij - u_i (2 u_j - s_j) ] / (2u - sum)
    double u1dd[2][2], u2dd[2][2];
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        double s_ij = (i == j) ? sdd[i] : 0.0;
        double p_ij = (i == j) ? pdd[i] : 0.0;
        u1dd[i][j] = (u1d[j] * sd[i] + dd.u1 * s_ij - p_ij - u1d[i] * (2.0 * u1d[j] - sd[j])) / du;
        u2dd[i][j] = (u2d[j] * sd[i] + dd.u2 * s_ij - p_ij - u2d[i] * (2.0 * u2d[j] - sd[j])) / (-du);
      }
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        double v = dd.D11 * u1d[i] * u1d[j] + dd.D12 * (u1d[i] * u2d[j] + u2d[i] * u1d[j]) +
                   dd.D22 * u2d[i] * u2d[j] + dd.D1 * u1dd[i][j] + dd.D2 * u2dd[i][j];
        H(i, j) = -v;
      }
    return H;
  }

  Vec fd_grad(const Vec& q) const {
    Vec g(2);
    for (int i = 0; i < 2; ++i) {
      double h = 1e-6 * (1.0 + std::abs(q[i]));
      Vec qp = q, qm = q;
      qp[i] += h;
      qm[i] -= h;
      g[i] = (phi(qp) - phi(qm)) / (2.0 * h);
    }
    return g;
  }

  Mat fd_hess(const Vec& q) const {
    Mat H(2, 2);
    for (int j = 0; j < 2; ++j) {
      double h = 1e-5 * (1.0 + std::abs(q[j]));
      Vec qp = q, qm = q;
      qp[j] += h;
      qm[j] -= h;
      Vec gp = fd_grad(qp), gm = fd_grad(qm);
      for (int i = 0; i < 2; ++i) H(i, j) = (gp[i] - gm[i]) / (2.0 * h);
    }
    // symmetrise
    double off = 0.5 * (H(0, 1) + H(1, 0));
    H(0, 1) = H(1, 0) = off;
    return H;
  }

  double c1_, c2_, c3_;
  bool fd_;
  detail::PpsF f_;
};

/// System factory used by the CLI config: name + parameter record.
inline std::unique_ptr<Hamiltonian> make_system(const std::string& name,
                                                const std::map<std::string, double>& params) {
  auto get = [&](const std::string& key, double dflt) {
    auto it = params.find(key);
    return it == params.end() ? dflt : it->second;
  };
  if (name == "isochrone")
    return std::make_unique<IsochronePotential>(get("c1", 1.0), get("c2", 0.15));
  if (name == "logarithmic")
    return std::make_unique<LogarithmicPotential>(get("c1", 0.9), get("c2", 1.0));
  if (name == "pps")
    return std::make_unique<PpsPotential>(get("c1", -1.0), get("c2", -0.25), get("c3", 1.0));
  if (name == "harmonic") {
    int n = static_cast<int>(get("n", 2));
    Vec w(n);
    for (int i = 0; i < n; ++i) w[i] = get("omega" + std::to_string(i + 1), 1.0);
    return std::make_unique<HarmonicPotential>(w);
  }
  throw ConfigError("system.name: unknown system '" + name + "'");
}

}  // namespace torusfit
