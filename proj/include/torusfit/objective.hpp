#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "torusfit/common.hpp"
#include "torusfit/dynamics.hpp"
#include "torusfit/model.hpp"

namespace torusfit {

enum class LabelMode { unlabelled, action, frequency };

inline std::string to_string(LabelMode m) {
  switch (m) {
    case LabelMode::unlabelled: return "unlabelled";
    case LabelMode::action: return "action";
    case LabelMode::frequency: return "frequency";
  }
  return "?";
}

inline LabelMode label_mode_from_string(const std::string& s) {
  if (s == "unlabelled") return LabelMode::unlabelled;
  if (s == "action") return LabelMode::action;
  if (s == "frequency") return LabelMode::frequency;
  throw ConfigError("objective.mode: unknown label mode '" + s + "'");
}

/// Which error functions are active (weights), how the torus is labelled,
/// and the weight of the coefficient-consistency supplement.
struct ObjectiveSpec {
  std::array<double, 5> lambda{1.0, 1.0, 1.0, 1.0, 0.0};
  LabelMode mode = LabelMode::unlabelled;
  Vec action_label;     // J-bar when mode == action
  Vec frequency_label;  // omega when mode == frequency
  double rho = 0.0;     // 0 disables the consistency rows

  bool active(int i) const { return lambda[static_cast<size_t>(i)] > 0.0; }

  static ObjectiveSpec unlabelled() { return ObjectiveSpec{}; }

  static ObjectiveSpec action_labelled(const Vec& label, double rho = 0.0) {
    ObjectiveSpec s;
    s.lambda = {1.0, 1.0, 1.0, 1.0, 1.0};
    s.mode = LabelMode::action;
    s.action_label = label;
    s.rho = rho;
    return s;
  }

  static ObjectiveSpec frequency_labelled(const Vec& omega) {
    ObjectiveSpec s;
    s.lambda = {1.0, 1.0, 0.0, 0.0, 0.0};
    s.mode = LabelMode::frequency;
    s.frequency_label = omega;
    return s;
  }

  void validate(int n) const {
    bool any = false;
    for (double l : lambda) {
      if (l < 0.0) throw ConfigError("objective.lambda: weights must be >= 0");
      any = any || l > 0.0;
    }
    if (!any) throw ConfigError("objective.lambda: at least one error function must be active");
    if (rho < 0.0) throw ConfigError("objective.rho: must be >= 0");
    if (mode == LabelMode::action) {
      if (!active(4))
        throw ConfigError("objective.lambda[5]: the action label requires an active E5 term");
      if (action_label.size() != n)
        throw ConfigError("objective.action_label: needs " + std::to_string(n) + " components");
    }
    if (mode == LabelMode::frequency && frequency_label.size() != n)
      throw ConfigError("objective.frequency_label: needs " + std::to_string(n) + " components");
  }
};

/// rho = 0.01 / #C with C = X ^ Y, the probing default.
inline double consistency_rho(const TorusModel& m) {
  int c = consistency_set_size(m);
  return c > 0 ? 0.01 / c : 0.0;
}

namespace detail {

constexpr double kDegenerateCondition = 1e12;

// trig tables over a grid: value (index, point)
struct GridTrig {
  Eigen::MatrixXd cos_, sin_;               // |set| x M
  std::array<Eigen::MatrixXd, 2> cos_k, sin_k;  // rows scaled by k_i[l]

  void build(const IndexSet& set, const ThetaGrid& grid) {
    int S = set.size(), M = grid.size(), n = grid.n;
    cos_.resize(S, M);
    sin_.resize(S, M);
    for (int i = 0; i < S; ++i)
      for (int m = 0; m < M; ++m) {
        double ang = set.idx[static_cast<size_t>(i)].dot(grid.theta[static_cast<size_t>(m)]);
        cos_(i, m) = std::cos(ang);
        sin_(i, m) = std::sin(ang);
      }
    for (int l = 0; l < n; ++l) {
      cos_k[static_cast<size_t>(l)] = cos_;
      sin_k[static_cast<size_t>(l)] = sin_;
      for (int i = 0; i < S; ++i) {
        double k = set.idx[static_cast<size_t>(i)][l];
        cos_k[static_cast<size_t>(l)].row(i) *= k;
        sin_k[static_cast<size_t>(l)].row(i) *= k;
      }
    }
  }
};

struct Slot {
  Table table;
  int comp;
  int pos;
};

}  // namespace detail

/// Least-squares frequency estimate and the pieces of the solve reused by the
/// Jacobian coupling.
struct FrequencySolve {
  Vec omega;
  double condition = 0.0;
  Mat ata_inv;               // (A^T A)^{-1}
  Eigen::MatrixXd A;         // 2nM x n, rows [dp/dtheta; dq/dtheta] per point
  Eigen::VectorXd b;         // rows [-dH/dq; +dH/dp]
  Eigen::VectorXd residual;  // b - A omega
};

/// Evaluates residual vectors and analytic Jacobians for a fixed
/// (system, grid, spec, model structure). One instance serves one fit; not
/// thread-safe per instance, independent instances may run concurrently.
class ObjectiveEval {
 public:
  ObjectiveEval(const Hamiltonian& system, const ThetaGrid& grid, ObjectiveSpec spec,
                const TorusModel& structure)
      : sys_(system), grid_(grid), spec_(std::move(spec)), model_(structure) {
    n_ = structure.n;
    if (grid.n != n_) throw std::invalid_argument("objective: grid/model dimension mismatch");
    if (system.dim() != n_)
      throw std::invalid_argument("objective: system/model dimension mismatch");
    spec_.validate(n_);
    M_ = grid.size();
    trig_x_.build(model_.X, grid);
    trig_y_.build(model_.Y, grid);
    pairs_ = build_action_pairs(model_.X, model_.Y, n_);
    build_slots();
    build_consistency_set();
    build_layout();
  }

  ObjectiveEval(const ObjectiveEval&) = delete;
  ObjectiveEval& operator=(const ObjectiveEval&) = delete;

  int parameter_count() const { return static_cast<int>(slots_.size()); }
  int residual_count() const { return rows_; }
  int grid_size() const { return M_; }
  const ObjectiveSpec& spec() const { return spec_; }

  TorusModel to_model(const Eigen::VectorXd& x) const {
    TorusModel m = model_;
    m.unflatten(x);
    return m;
  }

  /// Residuals (and optionally the Jacobian) at coefficients x. Throws
  /// DegenerateTorusError when the frequency solve loses rank.
  void eval(const Eigen::VectorXd& x, Eigen::VectorXd& r, Eigen::MatrixXd* J) {
    model_.unflatten(x);
    evaluate_surfaces();
    evaluate_system();
    if (spec_.mode == LabelMode::frequency) {
      omega_ = spec_.frequency_label;
    } else {
      solve_frequency();
    }
    combine_flow_derivatives();
    fill_residuals(r);
    if (J) fill_jacobian(*J);
  }

  struct Diagnostics {
    double objective = 0.0;
    double per_point_objective = 0.0;
    double sigma_h = 0.0;
    Vec omega;
    Vec actions;  // grid mean of the model actions
    double consistency = 0.0;
    bool degenerate = false;
  };

  /// Recomputes every report quantity from scratch at x.
  Diagnostics diagnostics(const Eigen::VectorXd& x) {
    Diagnostics d;
    Eigen::VectorXd r;
    try {
      eval(x, r, nullptr);
      d.objective = r.squaredNorm();
      d.per_point_objective = d.objective / M_;
      d.omega = omega_;
      d.consistency = consistency_metric(model_, omega_);
    } catch (const DegenerateTorusError&) {
      d.degenerate = true;
      d.objective = std::numeric_limits<double>::infinity();
      d.per_point_objective = d.objective;
      d.omega = Vec::Constant(n_, std::numeric_limits<double>::quiet_NaN());
      d.consistency = std::numeric_limits<double>::quiet_NaN();
      model_.unflatten(x);
      evaluate_surfaces();
      evaluate_system();
    }
    double mean = Hval_.mean();
    d.sigma_h = std::sqrt((Hval_.array() - mean).square().sum() / M_);
    Vec jm = Vec::Zero(n_);
    for (int m = 0; m < M_; ++m) jm += actions_at(m);
    d.actions = jm / M_;
    return d;
  }

  /// The frequency solve on its own (shares the cached structure).
  Vec frequencies(const Eigen::VectorXd& x) {
    model_.unflatten(x);
    evaluate_surfaces();
    evaluate_system();
    solve_frequency();
    return omega_;
  }

  const FrequencySolve& last_solve() const { return solve_; }

  /// d omega / d x for every parameter, from the last Jacobian evaluation
  /// (zero in frequency-labelled mode).
  const Eigen::MatrixXd& last_frequency_response() const { return domega_; }

 private:
  void build_slots() {
    for (int ti = 0; ti < 4; ++ti) {
      Table t = static_cast<Table>(ti);
      int sz = model_.index_set(t).size();
      for (int comp = 0; comp < n_; ++comp)
        for (int pos = 0; pos < sz; ++pos)
          if (model_.mask.is_free(t, comp, pos, sz)) slots_.push_back({t, comp, pos});
    }
    // reverse lookup used by the action-block scatter
    for (int ti = 0; ti < 4; ++ti) {
      Table t = static_cast<Table>(ti);
      int sz = model_.index_set(t).size();
      slot_of_[static_cast<size_t>(ti)].assign(static_cast<size_t>(n_ * sz), -1);
    }
    for (int s = 0; s < static_cast<int>(slots_.size()); ++s) {
      const auto& sl = slots_[static_cast<size_t>(s)];
      int sz = model_.index_set(sl.table).size();
      slot_of_[static_cast<size_t>(sl.table)][static_cast<size_t>(sl.comp * sz + sl.pos)] = s;
    }
  }

  void build_consistency_set() {
    int yi = 0;
    for (int xi = 0; xi < model_.X.size(); ++xi) {
      const MultiIndex& k = model_.X.idx[static_cast<size_t>(xi)];
      while (yi < model_.Y.size() && model_.Y.idx[static_cast<size_t>(yi)] < k) ++yi;
      if (yi < model_.Y.size() && model_.Y.idx[static_cast<size_t>(yi)] == k)
        cset_.push_back({xi, yi});
    }
  }

  void build_layout() {
    int off = 0;
    for (int i = 0; i < 5; ++i) {
      if (spec_.active(i)) {
        off_[static_cast<size_t>(i)] = off;
        off += (i == 3) ? 1 : n_;  // E4 is scalar
      } else {
        off_[static_cast<size_t>(i)] = -1;
      }
    }
    block_ = off;
    rows_ = M_ * block_;
    if (spec_.rho > 0.0) {
      cons_row0_ = rows_;
      rows_ += 2 * n_ * static_cast<int>(cset_.size());
    } else {
      cons_row0_ = -1;
    }
    for (int i = 0; i < 5; ++i)
      sqrt_lambda_[static_cast<size_t>(i)] =
          spec_.active(i) ? std::sqrt(spec_.lambda[static_cast<size_t>(i)]) : 0.0;
    sqrt_rho_ = spec_.rho > 0.0 ? std::sqrt(spec_.rho) : 0.0;
  }

  int row_of(int term, int m, int comp = 0) const {
    return m * block_ + off_[static_cast<size_t>(term)] + comp;
  }
  int arow_p(int m, int r) const { return m * 2 * n_ + r; }
  int arow_q(int m, int r) const { return m * 2 * n_ + n_ + r; }

  void evaluate_surfaces() {
    p_ = model_.a * trig_x_.cos_ + model_.b * trig_x_.sin_;
    q_ = model_.c * trig_y_.cos_ + model_.d * trig_y_.sin_;
    for (int l = 0; l < n_; ++l) {
      dP_[static_cast<size_t>(l)] = -model_.a * trig_x_.sin_k[static_cast<size_t>(l)] +
                                    model_.b * trig_x_.cos_k[static_cast<size_t>(l)];
      dQ_[static_cast<size_t>(l)] = -model_.c * trig_y_.sin_k[static_cast<size_t>(l)] +
                                    model_.d * trig_y_.cos_k[static_cast<size_t>(l)];
    }
  }

  void evaluate_system() {
    Hval_.resize(M_);
    g_.resize(n_, M_);
    h_.resize(n_, M_);
    hqq_.resize(static_cast<size_t>(M_));
    hqp_.resize(static_cast<size_t>(M_));
    hpp_.resize(static_cast<size_t>(M_));
    Vec q(n_), p(n_), gq(n_), gp(n_);
    for (int m = 0; m < M_; ++m) {
      q = q_.col(m);
      p = p_.col(m);
      Hval_[m] = sys_.value(q, p);
      sys_.gradients(q, p, gq, gp);
      g_.col(m) = gq;
      h_.col(m) = gp;
      sys_.hessians(q, p, hqq_[static_cast<size_t>(m)], hqp_[static_cast<size_t>(m)],
                    hpp_[static_cast<size_t>(m)]);
    }
  }

  void solve_frequency() {
    auto& A = solve_.A;
    auto& b = solve_.b;
    A.resize(2 * n_ * M_, n_);
    b.resize(2 * n_ * M_);
    for (int m = 0; m < M_; ++m)
      for (int r = 0; r < n_; ++r) {
        for (int l = 0; l < n_; ++l) {
          A(arow_p(m, r), l) = dP_[static_cast<size_t>(l)](r, m);
          A(arow_q(m, r), l) = dQ_[static_cast<size_t>(l)](r, m);
        }
        b[arow_p(m, r)] = -g_(r, m);
        b[arow_q(m, r)] = h_(r, m);
      }
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(A);
    Eigen::MatrixXd R = qr.matrixQR().topRows(n_).template triangularView<Eigen::Upper>();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(R);
    double smax = svd.singularValues()[0];
    double smin = svd.singularValues()[n_ - 1];
    solve_.condition = (smin > 0.0) ? smax / smin : std::numeric_limits<double>::infinity();
    if (!(smax > 0.0) || solve_.condition > detail::kDegenerateCondition ||
        !std::isfinite(smax))
      throw DegenerateTorusError("frequency solve: normal equations are rank deficient (cond=" +
                                 std::to_string(solve_.condition) + ")");
    Eigen::VectorXd w = qr.solve(b);
    omega_.resize(n_);
    for (int l = 0; l < n_; ++l) omega_[l] = w[l];
    Eigen::MatrixXd Rinv =
        R.template triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(n_, n_));
    Eigen::MatrixXd G = Rinv * Rinv.transpose();
    solve_.ata_inv = G;
    solve_.omega = omega_;
    solve_.residual = b - A * w;
  }

  // omega-contracted derivative tables: Pw(j,m) = sum_l dP[l](j,m) omega_l,
  // plus the index-major contractions used for single-slot columns.
  void combine_flow_derivatives() {
    Pw_.setZero(n_, M_);
    Qw_.setZero(n_, M_);
    for (int l = 0; l < n_; ++l) {
      Pw_ += omega_[l] * dP_[static_cast<size_t>(l)];
      Qw_ += omega_[l] * dQ_[static_cast<size_t>(l)];
    }
    sin_xw_ = omega_[0] * trig_x_.sin_k[0];
    cos_xw_ = omega_[0] * trig_x_.cos_k[0];
    sin_yw_ = omega_[0] * trig_y_.sin_k[0];
    cos_yw_ = omega_[0] * trig_y_.cos_k[0];
    for (int l = 1; l < n_; ++l) {
      sin_xw_ += omega_[l] * trig_x_.sin_k[static_cast<size_t>(l)];
      cos_xw_ += omega_[l] * trig_x_.cos_k[static_cast<size_t>(l)];
      sin_yw_ += omega_[l] * trig_y_.sin_k[static_cast<size_t>(l)];
      cos_yw_ += omega_[l] * trig_y_.cos_k[static_cast<size_t>(l)];
    }
  }

  Vec actions_at(int m) const {
    Vec J(n_);
    for (int h = 0; h < n_; ++h)
      J[h] = detail::action_component(model_, pairs_, h, trig_x_.cos_.col(m).data(),
                                      trig_x_.sin_.col(m).data(), trig_y_.cos_.col(m).data(),
                                      trig_y_.sin_.col(m).data());
    return J;
  }

  void fill_residuals(Eigen::VectorXd& r) {
    r.resize(rows_);
    double hbar = Hval_.mean();
    Vec jbar;
    if (spec_.active(4)) {
      if (spec_.mode == LabelMode::action) {
        jbar = spec_.action_label;
      } else {
        jbar = Vec::Zero(n_);
        actions_grid_.resize(n_, M_);
        for (int m = 0; m < M_; ++m) {
          actions_grid_.col(m) = actions_at(m);
          jbar += Vec(actions_grid_.col(m));
        }
        jbar /= M_;
      }
    }
    for (int m = 0; m < M_; ++m) {
      if (spec_.active(0))
        for (int i = 0; i < n_; ++i)
          r[row_of(0, m, i)] = sqrt_lambda_[0] * (Pw_(i, m) + g_(i, m));
      if (spec_.active(1))
        for (int i = 0; i < n_; ++i)
          r[row_of(1, m, i)] = sqrt_lambda_[1] * (Qw_(i, m) - h_(i, m));
      if (spec_.active(2))
        for (int l = 0; l < n_; ++l) {
          double acc = 0.0;
          for (int j = 0; j < n_; ++j)
            acc += g_(j, m) * dQ_[static_cast<size_t>(l)](j, m) +
                   h_(j, m) * dP_[static_cast<size_t>(l)](j, m);
          r[row_of(2, m, l)] = sqrt_lambda_[2] * acc;
        }
      if (spec_.active(3)) r[row_of(3, m)] = sqrt_lambda_[3] * (Hval_[m] - hbar);
      if (spec_.active(4)) {
        Vec J = (spec_.mode == LabelMode::action) ? actions_at(m) : Vec(actions_grid_.col(m));
        for (int i = 0; i < n_; ++i)
          r[row_of(4, m, i)] = sqrt_lambda_[4] * (J[i] - jbar[i]);
      }
    }
    if (spec_.rho > 0.0) {
      int row = cons_row0_;
      for (const auto& ck : cset_) {
        const MultiIndex& k = model_.X.idx[static_cast<size_t>(ck.xi)];
        double kw = k.dot(omega_);
        for (int j = 0; j < n_; ++j) {
          double re = 0.5 * (model_.a(j, ck.xi) - kw * model_.d(j, ck.yi));
          double im = -0.5 * (model_.b(j, ck.xi) + kw * model_.c(j, ck.yi));
          r[row++] = sqrt_rho_ * re;
          r[row++] = sqrt_rho_ * im;
        }
      }
    }
  }

  void fill_jacobian(Eigen::MatrixXd& J) {
    const int P = parameter_count();
    J.setZero(rows_, P);
    const bool coupled = spec_.mode != LabelMode::frequency;
    domega_.setZero(n_, P);
    Eigen::MatrixXd& domega = domega_;

    std::vector<double> dH(static_cast<size_t>(M_));
    for (int col = 0; col < P; ++col) {
      const auto& sl = slots_[static_cast<size_t>(col)];
      const bool momentum = (sl.table == Table::a || sl.table == Table::b);
      const detail::GridTrig& trig = momentum ? trig_x_ : trig_y_;
      const bool is_cos = (sl.table == Table::a || sl.table == Table::c);
      const auto& phi = is_cos ? trig.cos_ : trig.sin_;
      // d(basis)/dtheta_l contracted with omega
      const Eigen::MatrixXd& dphiw =
          momentum ? (is_cos ? sin_xw_ : cos_xw_) : (is_cos ? sin_yw_ : cos_yw_);
      const double dphiw_sign = is_cos ? -1.0 : 1.0;
      const int j = sl.comp, i = sl.pos;

      Vec dw = Vec::Zero(n_);
      if (coupled) {
        // Column response of the least-squares frequencies:
        //   dw = G [ dA^T (b - A w) + A^T (db - dA w) ]
        Vec t(n_);
        t.setZero();
        for (int m = 0; m < M_; ++m) {
          const Mat& hqq = hqq_[static_cast<size_t>(m)];
          const Mat& hqp = hqp_[static_cast<size_t>(m)];
          const Mat& hpp = hpp_[static_cast<size_t>(m)];
          double ph = phi(i, m);
          double daw = dphiw_sign * dphiw(i, m);  // (dA w) at the (block, j) row
          // dA^T (b - A w): only the (block, j) rows of dA are nonzero
          int own_row = momentum ? arow_p(m, j) : arow_q(m, j);
          double rown = solve_.residual[own_row];
          for (int l = 0; l < n_; ++l) {
            double dbasis = is_cos ? -trig.sin_k[static_cast<size_t>(l)](i, m)
                                   : trig.cos_k[static_cast<size_t>(l)](i, m);
            t[l] += dbasis * rown;
          }
          // A^T (db - dA w): db rows follow the chain rule through H
          for (int rr = 0; rr < n_; ++rr) {
            double db_p = momentum ? -hqp(rr, j) * ph : -hqq(rr, j) * ph;
            double db_q = momentum ? hpp(rr, j) * ph : hqp(j, rr) * ph;
            double v_p = db_p - ((momentum && rr == j) ? daw : 0.0);
            double v_q = db_q - ((!momentum && rr == j) ? daw : 0.0);
            if (v_p != 0.0)
              for (int l = 0; l < n_; ++l) t[l] += dP_[static_cast<size_t>(l)](rr, m) * v_p;
            if (v_q != 0.0)
              for (int l = 0; l < n_; ++l) t[l] += dQ_[static_cast<size_t>(l)](rr, m) * v_q;
          }
        }
        dw = solve_.ata_inv * t;
        domega.col(col) = dw;
      }

      double dH_mean = 0.0;
      for (int m = 0; m < M_; ++m) {
        const Mat& hqq = hqq_[static_cast<size_t>(m)];
        const Mat& hqp = hqp_[static_cast<size_t>(m)];
        const Mat& hpp = hpp_[static_cast<size_t>(m)];
        double ph = phi(i, m);
        double daw = dphiw_sign * dphiw(i, m);

        if (spec_.active(0)) {
          for (int rr = 0; rr < n_; ++rr) {
            double v = (momentum && rr == j) ? daw : 0.0;  // (dP) w
            if (coupled)
              for (int l = 0; l < n_; ++l) v += dP_[static_cast<size_t>(l)](rr, m) * dw[l];
            v += momentum ? hqp(rr, j) * ph : hqq(rr, j) * ph;  // dg
            J(row_of(0, m, rr), col) = sqrt_lambda_[0] * v;
          }
        }
        if (spec_.active(1)) {
          for (int rr = 0; rr < n_; ++rr) {
            double v = (!momentum && rr == j) ? daw : 0.0;  // (dQ) w
            if (coupled)
              for (int l = 0; l < n_; ++l) v += dQ_[static_cast<size_t>(l)](rr, m) * dw[l];
            v -= momentum ? hpp(rr, j) * ph : hqp(j, rr) * ph;  // dh
            J(row_of(1, m, rr), col) = sqrt_lambda_[1] * v;
          }
        }
        if (spec_.active(2)) {
          for (int l = 0; l < n_; ++l) {
            double dbasis = is_cos ? -trig.sin_k[static_cast<size_t>(l)](i, m)
                                   : trig.cos_k[static_cast<size_t>(l)](i, m);
            double v = 0.0;
            for (int rr = 0; rr < n_; ++rr) {
              double dg = momentum ? hqp(rr, j) * ph : hqq(rr, j) * ph;
              double dh = momentum ? hpp(rr, j) * ph : hqp(j, rr) * ph;
              v += dg * dQ_[static_cast<size_t>(l)](rr, m) +
                   dh * dP_[static_cast<size_t>(l)](rr, m);
            }
            v += momentum ? h_(j, m) * dbasis : g_(j, m) * dbasis;
            J(row_of(2, m, l), col) = sqrt_lambda_[2] * v;
          }
        }
        double dHm = momentum ? h_(j, m) * ph : g_(j, m) * ph;
        dH[static_cast<size_t>(m)] = dHm;
        dH_mean += dHm;
      }
      if (spec_.active(3)) {
        dH_mean /= M_;
        for (int m = 0; m < M_; ++m)
          J(row_of(3, m), col) = sqrt_lambda_[3] * (dH[static_cast<size_t>(m)] - dH_mean);
      }
    }

    if (spec_.active(4)) fill_action_block(J);
    if (spec_.rho > 0.0) fill_consistency_block(J, domega);
  }

  // dJ_h(theta_m)/dx scattered over the four coefficients of each index pair
  void fill_action_block(Eigen::MatrixXd& J) {
    const int sx = model_.X.size(), sy = model_.Y.size();
    for (int m = 0; m < M_; ++m) {
      const double* cx = trig_x_.cos_.col(m).data();
      const double* sxv = trig_x_.sin_.col(m).data();
      const double* cy = trig_y_.cos_.col(m).data();
      const double* syv = trig_y_.sin_.col(m).data();
      for (int h = 0; h < n_; ++h) {
        int row = row_of(4, m, h);
        for (const auto& pr : pairs_.per_h[static_cast<size_t>(h)]) {
          double cl = cy[pr.yi], slv = pr.sign * syv[pr.yi];
          double ckl = cx[pr.xi] * cl - sxv[pr.xi] * slv;
          double skl = sxv[pr.xi] * cl + cx[pr.xi] * slv;
          double f = -0.5 * pr.kh;
          for (int j = 0; j < n_; ++j) {
            double aj = model_.a(j, pr.xi), bj = model_.b(j, pr.xi);
            double cj = model_.c(j, pr.yi), djs = pr.sign * model_.d(j, pr.yi);
            int ca = slot_of_[0][static_cast<size_t>(j * sx + pr.xi)];
            int cb = slot_of_[1][static_cast<size_t>(j * sx + pr.xi)];
            int cc = slot_of_[2][static_cast<size_t>(j * sy + pr.yi)];
            int cd = slot_of_[3][static_cast<size_t>(j * sy + pr.yi)];
            if (ca >= 0) J(row, ca) += f * (djs * ckl - cj * skl);
            if (cb >= 0) J(row, cb) += f * (cj * ckl + djs * skl);
            if (cc >= 0) J(row, cc) += f * (bj * ckl - aj * skl);
            if (cd >= 0) J(row, cd) += f * pr.sign * (aj * ckl + bj * skl);
          }
        }
      }
    }
    // grid-mean label: subtract the column mean of each h-block
    if (spec_.mode != LabelMode::action) {
      for (int col = 0; col < parameter_count(); ++col)
        for (int h = 0; h < n_; ++h) {
          double mean = 0.0;
          for (int m = 0; m < M_; ++m) mean += J(row_of(4, m, h), col);
          mean /= M_;
          for (int m = 0; m < M_; ++m) J(row_of(4, m, h), col) -= mean;
        }
    }
    if (sqrt_lambda_[4] != 1.0)
      for (int m = 0; m < M_; ++m)
        for (int h = 0; h < n_; ++h) J.row(row_of(4, m, h)) *= sqrt_lambda_[4];
  }

  void fill_consistency_block(Eigen::MatrixXd& J, const Eigen::MatrixXd& domega) {
    const bool coupled = spec_.mode != LabelMode::frequency;
    const int sx = model_.X.size(), sy = model_.Y.size();
    int row = cons_row0_;
    for (const auto& ck : cset_) {
      const MultiIndex& k = model_.X.idx[static_cast<size_t>(ck.xi)];
      double kw = k.dot(omega_);
      for (int j = 0; j < n_; ++j) {
        int re_row = row++;
        int im_row = row++;
        int ca = slot_of_[0][static_cast<size_t>(j * sx + ck.xi)];
        int cb = slot_of_[1][static_cast<size_t>(j * sx + ck.xi)];
        int cc = slot_of_[2][static_cast<size_t>(j * sy + ck.yi)];
        int cd = slot_of_[3][static_cast<size_t>(j * sy + ck.yi)];
        if (ca >= 0) J(re_row, ca) += sqrt_rho_ * 0.5;
        if (cd >= 0) J(re_row, cd) -= sqrt_rho_ * 0.5 * kw;
        if (cb >= 0) J(im_row, cb) -= sqrt_rho_ * 0.5;
        if (cc >= 0) J(im_row, cc) -= sqrt_rho_ * 0.5 * kw;
        if (coupled) {
          double dcoef = model_.d(j, ck.yi);
          double ccoef = model_.c(j, ck.yi);
          for (int col = 0; col < parameter_count(); ++col) {
            double kdw = 0.0;
            for (int l = 0; l < n_; ++l) kdw += k[l] * domega(l, col);
            if (kdw == 0.0) continue;
            J(re_row, col) -= sqrt_rho_ * 0.5 * dcoef * kdw;
            J(im_row, col) -= sqrt_rho_ * 0.5 * ccoef * kdw;
          }
        }
      }
    }
  }

  const Hamiltonian& sys_;
  const ThetaGrid& grid_;
  ObjectiveSpec spec_;
  TorusModel model_;  // mutable scratch carrying the structure
  int n_ = 0, M_ = 0;

  detail::GridTrig trig_x_, trig_y_;
  ActionPairTable pairs_;
  std::vector<detail::Slot> slots_;
  std::array<std::vector<int>, 4> slot_of_;
  struct CPair {
    int xi, yi;
  };
  std::vector<CPair> cset_;

  std::array<int, 5> off_{};
  int block_ = 0, rows_ = 0, cons_row0_ = -1;
  std::array<double, 5> sqrt_lambda_{};
  double sqrt_rho_ = 0.0;

  // per-eval state
  Eigen::MatrixXd p_, q_;
  std::array<Eigen::MatrixXd, 2> dP_, dQ_;
  Eigen::VectorXd Hval_;
  Eigen::MatrixXd g_, h_;
  std::vector<Mat> hqq_, hqp_, hpp_;
  Vec omega_;
  FrequencySolve solve_;
  Eigen::MatrixXd Pw_, Qw_, actions_grid_, domega_;
  Eigen::MatrixXd sin_xw_, cos_xw_, sin_yw_, cos_yw_;
};

/// Least-squares frequencies of a model over a grid (the 2nM stacked flow
/// equations). Throws DegenerateTorusError on rank deficiency.
inline Vec solve_frequencies(const TorusModel& model, const ThetaGrid& grid,
                             const Hamiltonian& system) {
  ObjectiveSpec spec;  // E-function selection is irrelevant to the solve
  ObjectiveEval ev(system, grid, spec, model);
  return ev.frequencies(model.flatten());
}

/// Residual vector at the model itself (one-shot convenience).
inline Eigen::VectorXd residuals(const TorusModel& model, const ThetaGrid& grid,
                                 const Hamiltonian& system, const ObjectiveSpec& spec) {
  ObjectiveEval ev(system, grid, spec, model);
  Eigen::VectorXd r;
  ev.eval(model.flatten(), r, nullptr);
  return r;
}

inline Eigen::MatrixXd jacobian(const TorusModel& model, const ThetaGrid& grid,
                                const Hamiltonian& system, const ObjectiveSpec& spec) {
  ObjectiveEval ev(system, grid, spec, model);
  Eigen::VectorXd r;
  Eigen::MatrixXd J;
  ev.eval(model.flatten(), r, &J);
  return J;
}

/// Population standard deviation of H over the grid.
inline double sigma_h(const TorusModel& model, const ThetaGrid& grid,
                      const Hamiltonian& system) {
  int M = grid.size();
  Eigen::VectorXd H(M);
  for (int m = 0; m < M; ++m) {
    auto pp = eval(model, grid.theta[static_cast<size_t>(m)]);
    H[m] = system.value(pp.q, pp.p);
  }
  double mean = H.mean();
  return std::sqrt((H.array() - mean).square().sum() / M);
}

}  // namespace torusfit
