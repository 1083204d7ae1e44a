#pragma once

// Square 2-D assignment: pick a permutation tau maximizing
// sum_o cost(o, tau(o)). Rows are measurements (or "persons"), columns are
// objects.

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace sepcal {

using Permutation = std::vector<int>;

struct AssignmentSolution {
  Permutation perm;            // perm[o] = m
  double total_logcost = 0.0;  // sum_o cost(o, perm[o])
  double epsilon = 0.0;        // final auction epsilon; 0 for exact solvers
};

inline bool is_permutation(const Permutation& p) {
  std::vector<char> seen(p.size(), 0);
  for (int v : p) {
    if (v < 0 || static_cast<std::size_t>(v) >= p.size() || seen[v]) return false;
    seen[v] = 1;
  }
  return true;
}

inline Permutation inverse_permutation(const Permutation& p) {
  Permutation inv(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) inv[p[i]] = static_cast<int>(i);
  return inv;
}

/// (a ∘ b)(x) = a(b(x))
inline Permutation compose(const Permutation& a, const Permutation& b) {
  if (a.size() != b.size()) throw std::invalid_argument("compose: size mismatch");
  Permutation out(b.size());
  for (std::size_t i = 0; i < b.size(); ++i) out[i] = a[b[i]];
  return out;
}

inline Permutation identity_permutation(std::size_t n) {
  Permutation p(n);
  std::iota(p.begin(), p.end(), 0);
  return p;
}

inline double assignment_cost(const Eigen::MatrixXd& cost, const Permutation& perm) {
  double s = 0.0;
  for (std::size_t o = 0; o < perm.size(); ++o) s += cost(static_cast<Eigen::Index>(o), perm[o]);
  return s;
}

namespace detail {

inline void require_square_finite(const Eigen::MatrixXd& cost, const char* what) {
  if (cost.rows() != cost.cols()) throw std::invalid_argument(std::string(what) + ": non-square cost matrix");
  if (cost.rows() == 0) throw std::invalid_argument(std::string(what) + ": empty cost matrix");
  if (!cost.allFinite()) throw std::invalid_argument(std::string(what) + ": non-finite cost entry");
}

}  // namespace detail

/// Forward auction with epsilon scaling. Epsilon starts at range/M and is
/// divided by 4 until it drops below 1e-6/M; the phase run at that value is
/// the last one. Prices carry over between phases. Bidders are served first-in first-out starting from row 0, and a
/// bidder facing equal net values picks the lowest column. The result is
/// within M * epsilon of the optimum.
inline AssignmentSolution auction_assign(const Eigen::MatrixXd& cost) {
  detail::require_square_finite(cost, "auction_assign");
  const int n = static_cast<int>(cost.rows());
  AssignmentSolution sol;
  if (n == 1) {
    sol.perm = {0};
    sol.total_logcost = cost(0, 0);
    return sol;
  }

  const double final_eps = 1e-6 / n;
  const double range = cost.maxCoeff() - cost.minCoeff();
  double eps = range / n;
  if (!(eps >= final_eps)) eps = 0.5 * final_eps;

  std::vector<double> price(n, 0.0);
  std::vector<int> owner(n, -1);
  Permutation assigned(n, -1);

  while (true) {
    std::fill(owner.begin(), owner.end(), -1);
    std::fill(assigned.begin(), assigned.end(), -1);
    std::deque<int> queue(n);
    std::iota(queue.begin(), queue.end(), 0);

    while (!queue.empty()) {
      const int o = queue.front();
      queue.pop_front();
      int best = -1;
      double v1 = -std::numeric_limits<double>::infinity();
      double v2 = -std::numeric_limits<double>::infinity();
      for (int m = 0; m < n; ++m) {
        const double v = cost(o, m) - price[m];
        if (v > v1) {
          v2 = v1;
          v1 = v;
          best = m;
        } else if (v > v2) {
          v2 = v;
        }
      }
      price[best] += v1 - v2 + eps;
      if (owner[best] >= 0) {
        assigned[owner[best]] = -1;
        queue.push_back(owner[best]);
      }
      owner[best] = o;
      assigned[o] = best;
    }

    if (eps < final_eps) break;
    eps = eps / 4.0;
  }

  sol.perm = assigned;
  sol.total_logcost = assignment_cost(cost, assigned);
  sol.epsilon = eps;
  return sol;
}

inline constexpr int kBruteForceMaxSize = 8;

/// Exhaustive search over all M! permutations in lexicographic order; the
/// first maximizer wins.
inline AssignmentSolution brute_force_assign(const Eigen::MatrixXd& cost) {
  detail::require_square_finite(cost, "brute_force_assign");
  if (cost.rows() > kBruteForceMaxSize) throw std::invalid_argument("brute_force_assign: matrix too large");
  Permutation p = identity_permutation(static_cast<std::size_t>(cost.rows()));
  AssignmentSolution best;
  best.total_logcost = -std::numeric_limits<double>::infinity();
  do {
    const double c = assignment_cost(cost, p);
    if (c > best.total_logcost) {
      best.total_logcost = c;
      best.perm = p;
    }
  } while (std::next_permutation(p.begin(), p.end()));
  return best;
}

}  // namespace sepcal
