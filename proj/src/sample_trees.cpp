// Exact sampling from P(T|W).
//
// Wilson's RandomTreeWithRoot: every concept j proposes a parent i with
// probability W_ij / sum_i W_ij; loop-erased walks are attached to the growing
// tree until every node reaches the root. The product of the proposal
// probabilities along a tree equals prod W_ij up to a constant, so the
// result is distributed exactly as P(T|W).
//
// Walks can take astronomically long when clamped weights create a nearly
// closed cycle (two mutually dominant edges). When a single tree exceeds the
// step budget it is redrawn by sequential conditioning on exact edge
// marginals instead, which is slower per tree but insensitive to the cycle.

#include <algorithm>
#include <vector>

#include "laplacian.hpp"
#include "taxon/random.hpp"
#include "taxon/tree_dist.hpp"

namespace taxon {
namespace {

// Cumulative proposal table: row j holds the running sums over parents 0..n.
class ParentProposals {
 public:
  explicit ParentProposals(const Eigen::MatrixXd& linear)
      : n_(static_cast<int>(linear.rows()) - 1), cumulative_((n_ + 1) * (n_ + 1), 0.0) {
    for (int j = 1; j <= n_; ++j) {
      double run = 0.0;
      double* row = &cumulative_[j * (n_ + 1)];
      for (int i = 0; i <= n_; ++i) {
        if (i != j) run += linear(i, j);
        row[i] = run;
      }
      for (int i = 0; i <= n_; ++i) row[i] /= run;
      // Pin the top so u < 1 never falls past the last admissible parent.
      const int last = (j == n_) ? n_ - 1 : n_;
      for (int i = last; i <= n_; ++i) row[i] = 1.0;
    }
  }

  int draw(int j, Rng& rng) const {
    const double* row = &cumulative_[j * (n_ + 1)];
    const double u = uniform01(rng);
    // The diagonal slot has zero width, so upper_bound never lands on it.
    return static_cast<int>(std::upper_bound(row, row + n_ + 1, u) - row);
  }

 private:
  int n_;
  std::vector<double> cumulative_;
};

// Returns false if the walk exceeded `budget` steps.
bool wilson_tree(const ParentProposals& proposals, int n, Rng& rng, std::size_t budget,
                 std::vector<int>& next, std::vector<char>& in_tree, std::vector<int>& parents) {
  std::fill(in_tree.begin(), in_tree.end(), 0);
  in_tree[0] = 1;
  std::size_t steps = 0;
  for (int start = 1; start <= n; ++start) {
    int u = start;
    while (!in_tree[u]) {
      next[u] = proposals.draw(u, rng);
      u = next[u];
      if (++steps > budget) return false;
    }
    for (u = start; !in_tree[u]; u = next[u]) in_tree[u] = 1;
  }
  for (int j = 1; j <= n; ++j) parents[j - 1] = next[j];
  return true;
}

// Draws parents one concept at a time from exact conditional marginals.
void conditional_tree(Eigen::MatrixXd linear, Rng& rng, std::vector<int>& parents) {
  const int n = static_cast<int>(linear.rows()) - 1;
  for (int j = 1; j <= n; ++j) {
    const EdgeMarginals marg = detail::LaplacianMinor(linear).marginals();
    const double u = uniform01(rng) * marg.column_sum(j);
    int chosen = -1;
    double run = 0.0;
    for (int i = 0; i <= n && chosen < 0; ++i) {
      if (i == j || marg(i, j) <= 0.0) continue;
      run += marg(i, j);
      if (u < run) chosen = i;
    }
    if (chosen < 0) {
      for (int i = n; i >= 0 && chosen < 0; --i)
        if (i != j && marg(i, j) > 0.0) chosen = i;
    }
    for (int i = 0; i <= n; ++i)
      if (i != chosen) linear(i, j) = 0.0;
    linear(chosen, j) = 1.0;
    parents[j - 1] = chosen;
  }
}

}  // namespace

EmpiricalTreeDistribution sample_trees(const WeightMatrix& w, std::size_t m, std::uint64_t seed) {
  const int n = w.n();
  const auto scaled = detail::scale_columns(w);
  const ParentProposals proposals(scaled.linear);
  Rng rng(seed);

  const std::size_t budget = 100000 + 1000 * static_cast<std::size_t>(n) * n;
  std::vector<int> next(n + 1, 0), parents(n, 0);
  std::vector<char> in_tree(n + 1, 0);

  EmpiricalTreeDistribution out(n);
  out.reserve(m);
  const double weight = 1.0 / static_cast<double>(m);
  for (std::size_t k = 0; k < m; ++k) {
    if (!wilson_tree(proposals, n, rng, budget, next, in_tree, parents))
      conditional_tree(scaled.linear, rng, parents);
    out.add(parents, weight);
  }
  return out;
}

}  // namespace taxon
