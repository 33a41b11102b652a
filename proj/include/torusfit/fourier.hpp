#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "torusfit/common.hpp"

namespace torusfit {

/// Multi-index k in Z^n, n <= 2.
class MultiIndex {
 public:
  MultiIndex() = default;
  explicit MultiIndex(int k0) : k_{k0, 0}, n_(1) {}
  MultiIndex(int k0, int k1) : k_{k0, k1}, n_(2) {}

  static MultiIndex zero(int n) {
    MultiIndex m;
    m.n_ = n;
    return m;
  }

  int dim() const { return n_; }
  int operator[](int i) const { return k_[static_cast<size_t>(i)]; }
  int& operator[](int i) { return k_[static_cast<size_t>(i)]; }

  MultiIndex operator-() const {
    MultiIndex m = *this;
    for (int i = 0; i < n_; ++i) m.k_[static_cast<size_t>(i)] = -m.k_[static_cast<size_t>(i)];
    return m;
  }

  bool is_zero() const {
    for (int i = 0; i < n_; ++i)
      if (k_[static_cast<size_t>(i)] != 0) return false;
    return true;
  }

  // Canonical representative of the pair {k, -k}: zero, or first nonzero
  // component positive.
  bool is_canonical() const {
    for (int i = 0; i < n_; ++i) {
      if (k_[static_cast<size_t>(i)] > 0) return true;
      if (k_[static_cast<size_t>(i)] < 0) return false;
    }
    return true;
  }

  double dot(const Vec& theta) const {
    double s = 0.0;
    for (int i = 0; i < n_; ++i) s += k_[static_cast<size_t>(i)] * theta[i];
    return s;
  }

  friend bool operator==(const MultiIndex& a, const MultiIndex& b) {
    return a.n_ == b.n_ && a.k_ == b.k_;
  }
  friend bool operator<(const MultiIndex& a, const MultiIndex& b) {
    for (int i = 0; i < a.n_; ++i) {
      if (a.k_[static_cast<size_t>(i)] != b.k_[static_cast<size_t>(i)])
        return a.k_[static_cast<size_t>(i)] < b.k_[static_cast<size_t>(i)];
    }
    return false;
  }

 private:
  std::array<int, 2> k_{0, 0};
  int n_ = 0;
};

/// Set of canonical multi-indices, lexicographically sorted. Never contains
/// both k and -k.
struct IndexSet {
  std::vector<MultiIndex> idx;

  int size() const { return static_cast<int>(idx.size()); }

  int find(const MultiIndex& k) const {
    auto it = std::lower_bound(idx.begin(), idx.end(), k);
    if (it != idx.end() && *it == k) return static_cast<int>(it - idx.begin());
    return -1;
  }

  void sort() { std::sort(idx.begin(), idx.end()); }

  friend bool operator==(const IndexSet& a, const IndexSet& b) { return a.idx == b.idx; }
};

enum class Family { box, loop, odd1d, general };

inline std::string to_string(Family f) {
  switch (f) {
    case Family::box: return "box";
    case Family::loop: return "loop";
    case Family::odd1d: return "1d-odd";
    case Family::general: return "general";
  }
  return "?";
}

inline Family family_from_string(const std::string& s) {
  if (s == "box") return Family::box;
  if (s == "loop") return Family::loop;
  if (s == "1d-odd" || s == "odd1d") return Family::odd1d;
  if (s == "general") return Family::general;
  throw std::invalid_argument("unknown torus family: " + s);
}

inline int family_dimension(Family f) { return f == Family::odd1d ? 1 : 2; }

// Coefficient tables of the trigonometric model: a,b multiply cos,sin in the
// momentum series (indexed by X); c,d in the coordinate series (indexed by Y).
enum class Table : int { a = 0, b = 1, c = 2, d = 3 };

/// Which (table, component, index) slots the orbit family leaves free.
struct CoeffMask {
  // flat per table: free[table][comp * set_size + pos]
  std::array<std::vector<std::uint8_t>, 4> free;

  bool is_free(Table t, int comp, int pos, int set_size) const {
    return free[static_cast<size_t>(t)][static_cast<size_t>(comp * set_size + pos)] != 0;
  }

  int count() const {
    int total = 0;
    for (const auto& v : free)
      for (auto f : v) total += f ? 1 : 0;
    return total;
  }
};

struct MaskResult {
  IndexSet X, Y;
  CoeffMask mask;
};

namespace detail {

inline bool parity_match(const MultiIndex& k, int odd_comp) {
  // odd_comp-th component odd, the other even
  for (int i = 0; i < k.dim(); ++i) {
    bool odd = (k[i] % 2) != 0;
    if ((i == odd_comp) != odd) return false;
  }
  return true;
}

template <class Pred>
inline std::vector<MultiIndex> canonical_indices_2d(int N, Pred keep) {
  std::vector<MultiIndex> out;
  for (int k0 = -N; k0 <= N; ++k0)
    for (int k1 = -N; k1 <= N; ++k1) {
      MultiIndex k(k0, k1);
      if (!k.is_canonical()) continue;
      if (keep(k)) out.push_back(k);
    }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace detail

/// Builds the per-family index sets and coefficient mask. |k_i| <= N for all
/// retained indices.
inline MaskResult make_mask(Family family, int N, int n) {
  if (N < 1) throw std::invalid_argument("make_mask: N must be >= 1");
  if (n != family_dimension(family) && family != Family::general)
    throw std::invalid_argument("make_mask: family '" + to_string(family) +
                                "' requires n = " + std::to_string(family_dimension(family)));
  if (n < 1 || n > 2) throw std::invalid_argument("make_mask: n must be 1 or 2");

  MaskResult r;
  auto init_mask = [&](int sx, int sy) {
    r.mask.free[0].assign(static_cast<size_t>(n * sx), 0);
    r.mask.free[1].assign(static_cast<size_t>(n * sx), 0);
    r.mask.free[2].assign(static_cast<size_t>(n * sy), 0);
    r.mask.free[3].assign(static_cast<size_t>(n * sy), 0);
  };
  auto set_free = [&](Table t, int comp, int pos, int set_size) {
    r.mask.free[static_cast<size_t>(t)][static_cast<size_t>(comp * set_size + pos)] = 1;
  };

  switch (family) {
    case Family::odd1d: {
      if (n != 1) throw std::invalid_argument("make_mask: 1d-odd requires n = 1");
      if (N % 2 != 0 || N < 2)
        throw std::invalid_argument("make_mask: 1d-odd requires even N >= 2");
      for (int k = 1; k <= N - 1; k += 2) r.X.idx.push_back(MultiIndex(k));
      r.Y = r.X;
      init_mask(r.X.size(), r.Y.size());
      for (int i = 0; i < r.X.size(); ++i) {
        set_free(Table::a, 0, i, r.X.size());
        set_free(Table::d, 0, i, r.Y.size());
      }
      break;
    }
    case Family::box: {
      // momenta: a_{1,k} for k=(odd,even), a_{2,k} for k=(even,odd);
      // coordinates: d with the same patterns. b and c vanish.
      auto idx = detail::canonical_indices_2d(N, [](const MultiIndex& k) {
        return detail::parity_match(k, 0) || detail::parity_match(k, 1);
      });
      r.X.idx = idx;
      r.Y.idx = idx;
      init_mask(r.X.size(), r.Y.size());
      for (int i = 0; i < r.X.size(); ++i) {
        int comp = detail::parity_match(r.X.idx[static_cast<size_t>(i)], 0) ? 0 : 1;
        set_free(Table::a, comp, i, r.X.size());
        set_free(Table::d, comp, i, r.Y.size());
      }
      break;
    }
    case Family::loop: {
      // all four tables live on k=(even,odd): b_1, a_2, c_1, d_2.
      auto idx = detail::canonical_indices_2d(
          N, [](const MultiIndex& k) { return detail::parity_match(k, 1); });
      r.X.idx = idx;
      r.Y.idx = idx;
      init_mask(r.X.size(), r.Y.size());
      for (int i = 0; i < r.X.size(); ++i) {
        set_free(Table::b, 0, i, r.X.size());
        set_free(Table::a, 1, i, r.X.size());
        set_free(Table::c, 0, i, r.Y.size());
        set_free(Table::d, 1, i, r.Y.size());
      }
      break;
    }
    case Family::general: {
      // every canonical index including zero; sine amplitudes at k=0 excluded
      // (sin(0) carries no information).
      if (n == 1) {
        for (int k = 0; k <= N; ++k) r.X.idx.push_back(MultiIndex(k));
      } else {
        r.X.idx = detail::canonical_indices_2d(N, [](const MultiIndex&) { return true; });
      }
      r.Y = r.X;
      init_mask(r.X.size(), r.Y.size());
      for (int i = 0; i < r.X.size(); ++i) {
        bool zero = r.X.idx[static_cast<size_t>(i)].is_zero();
        for (int comp = 0; comp < n; ++comp) {
          set_free(Table::a, comp, i, r.X.size());
          set_free(Table::c, comp, i, r.Y.size());
          if (!zero) {
            set_free(Table::b, comp, i, r.X.size());
            set_free(Table::d, comp, i, r.Y.size());
          }
        }
      }
      break;
    }
  }
  return r;
}

}  // namespace torusfit
