#pragma once

#include <cmath>
#include <vector>

#include "torusfit/common.hpp"
#include "torusfit/fourier.hpp"

namespace torusfit {

/// Fourier torus surface in trigonometric form:
///   p_j(theta) = sum_{k in X} a_{j,k} cos(k.theta) + b_{j,k} sin(k.theta)
///   q_j(theta) = sum_{l in Y} c_{j,l} cos(l.theta) + d_{j,l} sin(l.theta)
/// Coefficients outside the family mask stay identically zero.
struct TorusModel {
  int n = 0;
  int N = 0;
  Family family = Family::general;
  IndexSet X, Y;
  CoeffMask mask;
  // dense tables, (component, index position)
  Eigen::MatrixXd a, b;  // n x |X|
  Eigen::MatrixXd c, d;  // n x |Y|

  static TorusModel zero(Family family, int N, int n) {
    TorusModel m;
    m.n = n;
    m.N = N;
    m.family = family;
    MaskResult mk = make_mask(family, N, n);
    m.X = std::move(mk.X);
    m.Y = std::move(mk.Y);
    m.mask = std::move(mk.mask);
    m.a = Eigen::MatrixXd::Zero(n, m.X.size());
    m.b = Eigen::MatrixXd::Zero(n, m.X.size());
    m.c = Eigen::MatrixXd::Zero(n, m.Y.size());
    m.d = Eigen::MatrixXd::Zero(n, m.Y.size());
    return m;
  }

  Eigen::MatrixXd& table(Table t) {
    switch (t) {
      case Table::a: return a;
      case Table::b: return b;
      case Table::c: return c;
      default: return d;
    }
  }
  const Eigen::MatrixXd& table(Table t) const {
    return const_cast<TorusModel*>(this)->table(t);
  }

  const IndexSet& index_set(Table t) const {
    return (t == Table::a || t == Table::b) ? X : Y;
  }

  int free_count() const { return mask.count(); }

  /// Packs the free slots into a flat parameter vector. Order: tables a,b,c,d;
  /// within a table components 0..n-1; within a component the sorted index
  /// positions. Stable across runs, documented in the README.
  Eigen::VectorXd flatten() const {
    Eigen::VectorXd x(free_count());
    int at = 0;
    for (int ti = 0; ti < 4; ++ti) {
      Table t = static_cast<Table>(ti);
      const Eigen::MatrixXd& tab = table(t);
      int sz = index_set(t).size();
      for (int comp = 0; comp < n; ++comp)
        for (int pos = 0; pos < sz; ++pos)
          if (mask.is_free(t, comp, pos, sz)) x[at++] = tab(comp, pos);
    }
    return x;
  }

  void unflatten(const Eigen::VectorXd& x) {
    int at = 0;
    for (int ti = 0; ti < 4; ++ti) {
      Table t = static_cast<Table>(ti);
      Eigen::MatrixXd& tab = table(t);
      int sz = index_set(t).size();
      for (int comp = 0; comp < n; ++comp)
        for (int pos = 0; pos < sz; ++pos)
          if (mask.is_free(t, comp, pos, sz)) tab(comp, pos) = x[at++];
    }
    if (at != x.size())
      throw std::invalid_argument("unflatten: parameter vector size mismatch");
  }

  /// True when every masked-out slot is exactly zero.
  bool respects_mask() const {
    for (int ti = 0; ti < 4; ++ti) {
      Table t = static_cast<Table>(ti);
      const Eigen::MatrixXd& tab = table(t);
      int sz = index_set(t).size();
      for (int comp = 0; comp < n; ++comp)
        for (int pos = 0; pos < sz; ++pos)
          if (!mask.is_free(t, comp, pos, sz) && tab(comp, pos) != 0.0) return false;
    }
    return true;
  }
};

struct PhasePoint {
  Vec q, p;
};

struct PhaseDerivs {
  Mat dq, dp;  // dq(i,l) = dq_i/dtheta_l
};

inline PhasePoint eval(const TorusModel& m, const Vec& theta) {
  PhasePoint out;
  out.q = Vec::Zero(m.n);
  out.p = Vec::Zero(m.n);
  for (int i = 0; i < m.X.size(); ++i) {
    double ang = m.X.idx[static_cast<size_t>(i)].dot(theta);
    double co = std::cos(ang), si = std::sin(ang);
    for (int j = 0; j < m.n; ++j) out.p[j] += m.a(j, i) * co + m.b(j, i) * si;
  }
  for (int i = 0; i < m.Y.size(); ++i) {
    double ang = m.Y.idx[static_cast<size_t>(i)].dot(theta);
    double co = std::cos(ang), si = std::sin(ang);
    for (int j = 0; j < m.n; ++j) out.q[j] += m.c(j, i) * co + m.d(j, i) * si;
  }
  return out;
}

inline PhaseDerivs eval_derivs(const TorusModel& m, const Vec& theta) {
  PhaseDerivs out;
  out.dq = Mat::Zero(m.n, m.n);
  out.dp = Mat::Zero(m.n, m.n);
  for (int i = 0; i < m.X.size(); ++i) {
    const MultiIndex& k = m.X.idx[static_cast<size_t>(i)];
    double ang = k.dot(theta);
    double co = std::cos(ang), si = std::sin(ang);
    for (int j = 0; j < m.n; ++j) {
      double amp = -m.a(j, i) * si + m.b(j, i) * co;
      for (int l = 0; l < m.n; ++l) out.dp(j, l) += k[l] * amp;
    }
  }
  for (int i = 0; i < m.Y.size(); ++i) {
    const MultiIndex& k = m.Y.idx[static_cast<size_t>(i)];
    double ang = k.dot(theta);
    double co = std::cos(ang), si = std::sin(ang);
    for (int j = 0; j < m.n; ++j) {
      double amp = -m.c(j, i) * si + m.d(j, i) * co;
      for (int l = 0; l < m.n; ++l) out.dq(j, l) += k[l] * amp;
    }
  }
  return out;
}

/// Index pairs contributing to the bilinear action formula. For direction h,
/// the pairs run over (k,l) in X x (Y u -Y) with l_h = -k_h; sign records
/// whether l is the stored index or its negation (cos unchanged, sin flips).
struct ActionPairTable {
  struct Pair {
    int xi, yi;
    int sign;  // +1: l = Y[yi], -1: l = -Y[yi]
    int kh;
  };
  std::vector<std::vector<Pair>> per_h;  // size n
};

inline ActionPairTable build_action_pairs(const IndexSet& X, const IndexSet& Y, int n) {
  ActionPairTable t;
  t.per_h.resize(static_cast<size_t>(n));
  for (int h = 0; h < n; ++h) {
    auto& pairs = t.per_h[static_cast<size_t>(h)];
    for (int xi = 0; xi < X.size(); ++xi) {
      int kh = X.idx[static_cast<size_t>(xi)][h];
      if (kh == 0) continue;  // factor k_h kills the term
      for (int yi = 0; yi < Y.size(); ++yi) {
        int lh = Y.idx[static_cast<size_t>(yi)][h];
        if (lh == -kh) pairs.push_back({xi, yi, +1, kh});
        if (-lh == -kh) pairs.push_back({xi, yi, -1, kh});
      }
    }
  }
  return t;
}

namespace detail {

// J_h(theta) from cached per-index cos/sin values (cx,sx over X; cy,sy over Y).
inline double action_component(const TorusModel& m, const ActionPairTable& pairs, int h,
                               const double* cx, const double* sx, const double* cy,
                               const double* sy) {
  double acc = 0.0;
  for (const auto& pr : pairs.per_h[static_cast<size_t>(h)]) {
    double cl = cy[pr.yi];
    double sl = pr.sign * sy[pr.yi];
    // angle addition for cos/sin((k+l).theta)
    double ckl = cx[pr.xi] * cl - sx[pr.xi] * sl;
    double skl = sx[pr.xi] * cl + cx[pr.xi] * sl;
    for (int j = 0; j < m.n; ++j) {
      double aj = m.a(j, pr.xi), bj = m.b(j, pr.xi);
      double cj = m.c(j, pr.yi), dj = pr.sign * m.d(j, pr.yi);
      acc += pr.kh * ((aj * dj + bj * cj) * ckl + (bj * dj - aj * cj) * skl);
    }
  }
  return -0.5 * acc;
}

}  // namespace detail

/// Model actions J(theta); J_h never depends on theta_h. Agrees with the
/// contour integral (1/2pi) oint p . dq along the theta_h path.
inline Vec model_actions(const TorusModel& m, const Vec& theta,
                         const ActionPairTable& pairs) {
  std::vector<double> cx(static_cast<size_t>(m.X.size())), sx(cx.size());
  std::vector<double> cy(static_cast<size_t>(m.Y.size())), sy(cy.size());
  for (int i = 0; i < m.X.size(); ++i) {
    double ang = m.X.idx[static_cast<size_t>(i)].dot(theta);
    cx[static_cast<size_t>(i)] = std::cos(ang);
    sx[static_cast<size_t>(i)] = std::sin(ang);
  }
  for (int i = 0; i < m.Y.size(); ++i) {
    double ang = m.Y.idx[static_cast<size_t>(i)].dot(theta);
    cy[static_cast<size_t>(i)] = std::cos(ang);
    sy[static_cast<size_t>(i)] = std::sin(ang);
  }
  Vec J(m.n);
  for (int h = 0; h < m.n; ++h)
    J[h] = detail::action_component(m, pairs, h, cx.data(), sx.data(), cy.data(), sy.data());
  return J;
}

inline Vec model_actions(const TorusModel& m, const Vec& theta) {
  return model_actions(m, theta, build_action_pairs(m.X, m.Y, m.n));
}

/// Consistency of the independent momentum and coordinate series with
/// p = dq/dt:  sum_{k in X^Y} |alpha_k - i (k.omega) beta_k|^2 in the complex
/// coefficient view, summed over components.
inline double consistency_metric(const TorusModel& m, const Vec& omega) {
  double total = 0.0;
  int yi = 0;
  for (int xi = 0; xi < m.X.size(); ++xi) {
    const MultiIndex& k = m.X.idx[static_cast<size_t>(xi)];
    while (yi < m.Y.size() && m.Y.idx[static_cast<size_t>(yi)] < k) ++yi;
    if (yi >= m.Y.size() || !(m.Y.idx[static_cast<size_t>(yi)] == k)) continue;
    double kw = k.dot(omega);
    for (int j = 0; j < m.n; ++j) {
      double re = 0.5 * (m.a(j, xi) - kw * m.d(j, yi));
      double im = -0.5 * (m.b(j, xi) + kw * m.c(j, yi));
      total += re * re + im * im;
    }
  }
  return total;
}

/// Size of X^Y (the canonical intersection set entering the consistency term).
inline int consistency_set_size(const TorusModel& m) {
  int count = 0, yi = 0;
  for (int xi = 0; xi < m.X.size(); ++xi) {
    const MultiIndex& k = m.X.idx[static_cast<size_t>(xi)];
    while (yi < m.Y.size() && m.Y.idx[static_cast<size_t>(yi)] < k) ++yi;
    if (yi < m.Y.size() && m.Y.idx[static_cast<size_t>(yi)] == k) ++count;
  }
  return count;
}

/// Fixed initial tori: the 1D unit circle (scaled), the two-oscillator box,
/// and the loop guess whose momenta follow from omega = (1/2, 1/2).
inline TorusModel initial_guess(Family family, int N, double scale = 1.0) {
  switch (family) {
    case Family::odd1d: {
      TorusModel m = TorusModel::zero(family, N, 1);
      int pos = m.X.find(MultiIndex(1));
      m.a(0, pos) = scale;
      m.d(0, pos) = scale;
      return m;
    }
    case Family::box: {
      TorusModel m = TorusModel::zero(family, N, 2);
      int p10 = m.X.find(MultiIndex(1, 0));
      int p01 = m.X.find(MultiIndex(0, 1));
      m.a(0, p10) = 1.0;  // p1 = cos theta1
      m.a(1, p01) = 1.0;  // p2 = cos theta2
      m.d(0, p10) = 1.0;  // q1 = sin theta1
      m.d(1, p01) = 1.0;  // q2 = sin theta2
      return m;
    }
    case Family::loop: {
      TorusModel m = TorusModel::zero(family, N, 2);
      int p01 = m.Y.find(MultiIndex(0, 1));
      int p21 = m.Y.find(MultiIndex(2, 1));
      int p2m1 = m.Y.find(MultiIndex(2, -1));
      // q1 = cos t2 + (1/20) cos(2t1+t2) - (1/2) cos(-2t1+t2)
      m.c(0, p01) = 1.0;
      m.c(0, p21) = 1.0 / 20.0;
      m.c(0, p2m1) = -0.5;
      // q2 = (3/2) sin t2 + (1/10) sin(2t1+t2) - (1/2) sin(-2t1+t2)
      m.d(1, p01) = 1.5;
      m.d(1, p21) = 1.0 / 10.0;
      m.d(1, p2m1) = 0.5;  // sin(-2t1+t2) = -sin((2,-1).theta)
      // p = (dq/dtheta) . omega with omega = (1/2, 1/2):
      // a_{j,l} += (l.omega) d_{j,l},  b_{j,l} -= (l.omega) c_{j,l}
      Vec w = make_vec({0.5, 0.5});
      for (int i = 0; i < m.Y.size(); ++i) {
        double lw = m.Y.idx[static_cast<size_t>(i)].dot(w);
        if (lw == 0.0) continue;
        for (int j = 0; j < 2; ++j) {
          double da = lw * m.d(j, i);
          double db = -lw * m.c(j, i);
          if (da != 0.0) m.a(j, i) += da;
          if (db != 0.0) m.b(j, i) += db;
        }
      }
      return m;
    }
    default:
      throw std::invalid_argument("initial_guess: no canned guess for family '" +
                                  to_string(family) + "'");
  }
}

/// Regular grid of angle tuples. With `reduced`, only theta in [0,pi)^n is
/// kept; family-masked models repeat (up to sign) on the other quadrants.
struct ThetaGrid {
  int n = 0;
  int points_per_dim = 0;
  bool reduced = false;
  std::vector<Vec> theta;

  int size() const { return static_cast<int>(theta.size()); }

  static ThetaGrid regular(int n, int points_per_dim, bool reduced) {
    if (n < 1 || n > 2) throw std::invalid_argument("ThetaGrid: n must be 1 or 2");
    if (points_per_dim < 1) throw std::invalid_argument("ThetaGrid: points_per_dim >= 1");
    if (reduced && points_per_dim % 2 != 0)
      throw std::invalid_argument("ThetaGrid: symmetry reduction needs an even grid");
    ThetaGrid g;
    g.n = n;
    g.points_per_dim = points_per_dim;
    g.reduced = reduced;
    int limit = reduced ? points_per_dim / 2 : points_per_dim;
    double step = kTwoPi / points_per_dim;
    if (n == 1) {
      for (int i = 0; i < limit; ++i) g.theta.push_back(make_vec({i * step}));
    } else {
      for (int i = 0; i < limit; ++i)
        for (int j = 0; j < limit; ++j) g.theta.push_back(make_vec({i * step, j * step}));
    }
    return g;
  }
};

}  // namespace torusfit
