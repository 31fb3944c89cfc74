#pragma once

// Log-linear distribution over rooted directed trees (arborescences).
//
// Nodes are indexed 0..N where 0 is a synthetic root and 1..N are concepts.
// A tree T has probability  P(T|W) = prod_{(i,j) in T} W_ij / Z(W),  and all
// weights are stored in the log domain (Lambda = log W). Exact quantities come
// from the directed Matrix-Tree theorem on the in-degree Laplacian with the
// root row and column deleted.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace taxon {

// Log-weights are kept inside [-kLogWeightBound, +kLogWeightBound].
inline constexpr double kLogWeightBound = 30.0;

// Reciprocal-condition threshold below which the Laplacian minor is reported
// as ill-conditioned (condition number above 1e12).
inline constexpr double kConditionWarning = 1e12;

// Largest n accepted by enumerate_trees.
inline constexpr int kMaxEnumerationSize = 7;

// Calls f(i, j) for every admissible edge i -> j: i in 0..n, j in 1..n, i != j.
template <typename F>
void for_each_edge(int n, F&& f) {
  for (int j = 1; j <= n; ++j)
    for (int i = 0; i <= n; ++i)
      if (i != j) f(i, j);
}

inline int num_edges(int n) { return n * n; }

class ConceptDomain {
 public:
  static constexpr std::string_view kRootLabel = "ROOT";

  ConceptDomain() = default;
  explicit ConceptDomain(std::vector<std::string> labels);

  int size() const { return static_cast<int>(labels_.size()); }
  // Label of node i; node 0 is kRootLabel.
  const std::string& label(int i) const;
  // Node index of a label (kRootLabel maps to 0); -1 when unknown.
  int index_of(std::string_view label) const;
  bool contains(std::string_view label) const { return index_of(label) >= 0; }
  const std::vector<std::string>& labels() const { return labels_; }

  // Appends a concept at index N+1 and returns that index.
  int add(std::string label);

  bool operator==(const ConceptDomain& other) const { return labels_ == other.labels_; }

 private:
  std::vector<std::string> labels_;
  std::unordered_map<std::string, int> index_;
};

class WeightMatrix {
 public:
  WeightMatrix() = default;
  // Uniform weights (all log-weights 0) over n concepts.
  explicit WeightMatrix(int n);

  // Takes an (n+1)x(n+1) table; column 0 and the diagonal are ignored.
  // Throws InvalidArgument on non-finite admissible entries.
  static WeightMatrix from_log_weights(const Eigen::MatrixXd& table);

  int n() const { return n_; }
  double operator()(int i, int j) const { return lambda_(i, j); }
  // Stores v clamped to the log-weight bound.
  void set(int i, int j, double v);
  void add(int i, int j, double dv) { set(i, j, lambda_(i, j) + dv); }

  // Dense (n+1)x(n+1) table, zero outside admissible entries.
  const Eigen::MatrixXd& table() const { return lambda_; }

  double l1_norm() const;
  double max_abs_difference(const WeightMatrix& other) const;

  bool operator==(const WeightMatrix& other) const;

 private:
  int n_ = 0;
  Eigen::MatrixXd lambda_;
};

class Arborescence {
 public:
  Arborescence() = default;
  // parents[j-1] is the parent of concept j. Throws InvalidArgument unless
  // the assignment forms a tree rooted at 0.
  explicit Arborescence(std::vector<int> parents);

  static Arborescence star(int n) { return Arborescence(std::vector<int>(n, 0)); }

  int n() const { return static_cast<int>(parents_.size()); }
  int parent(int j) const { return parents_[j - 1]; }
  std::span<const int> parents() const { return parents_; }
  bool has_edge(int i, int j) const { return j >= 1 && j <= n() && parents_[j - 1] == i; }

  auto operator<=>(const Arborescence&) const = default;

 private:
  std::vector<int> parents_;
};

// True iff the parent array (parents[j-1] = parent of j) is a tree rooted at 0.
bool is_arborescence(std::span<const int> parents);

// Weighted multiset of trees over n concepts, stored as a flat parent buffer.
class EmpiricalTreeDistribution {
 public:
  EmpiricalTreeDistribution() = default;
  explicit EmpiricalTreeDistribution(int n) : n_(n) {}

  int n() const { return n_; }
  std::size_t size() const { return weights_.size(); }
  bool empty() const { return weights_.empty(); }

  std::span<const int> parents(std::size_t k) const {
    return {parents_.data() + k * static_cast<std::size_t>(n_), static_cast<std::size_t>(n_)};
  }
  Arborescence tree(std::size_t k) const;
  double weight(std::size_t k) const { return weights_[k]; }
  std::span<const double> weights() const { return weights_; }
  void set_weight(std::size_t k, double w) { weights_[k] = w; }

  void add(std::span<const int> parents, double weight);
  void add(const Arborescence& t, double weight) { add(t.parents(), weight); }
  void reserve(std::size_t m);

  double total_weight() const;
  // Scales weights to sum to one. Throws DegeneratePosterior when all vanish.
  void normalize();
  // 1 / sum w_k^2 of the normalized weights.
  double effective_sample_size() const;
  // Merges identical trees (summing weights); entries sorted by parent array.
  EmpiricalTreeDistribution grouped() const;

 private:
  int n_ = 0;
  std::vector<int> parents_;
  std::vector<double> weights_;
};

class EdgeMarginals {
 public:
  EdgeMarginals() = default;
  explicit EdgeMarginals(int n) : n_(n), probs_(Eigen::MatrixXd::Zero(n + 1, n + 1)) {}

  int n() const { return n_; }
  double operator()(int i, int j) const { return probs_(i, j); }
  double& operator()(int i, int j) { return probs_(i, j); }
  const Eigen::MatrixXd& table() const { return probs_; }

  double column_sum(int j) const;
  double max_abs_difference(const EdgeMarginals& other) const;

 private:
  int n_ = 0;
  Eigen::MatrixXd probs_;
};

// log Z(W) via the determinant of the root-deleted Laplacian.
// Throws NumericalDegeneracy if the determinant is not positive and finite.
double log_partition(const WeightMatrix& w);

// P(e_ij | W) from the inverse of the root-deleted Laplacian.
EdgeMarginals edge_marginals(const WeightMatrix& w);

// log Z(W) and edge marginals from one factorization.
struct PartitionResult {
  double log_z;
  EdgeMarginals marginals;
};
PartitionResult partition_and_marginals(const WeightMatrix& w);

// Maximum-weight arborescence under scores Lambda (Chu-Liu/Edmonds).
// Equal scores prefer the lexicographically smaller (i, j).
Arborescence map_tree(const WeightMatrix& w);

// m i.i.d. trees from P(T|W) by Wilson's cycle-popping walk; weights 1/m.
EmpiricalTreeDistribution sample_trees(const WeightMatrix& w, std::size_t m, std::uint64_t seed);

// Sum of Lambda over the edges of the tree.
double tree_score(const WeightMatrix& w, std::span<const int> parents);

// log P(T|W). Throws ShapeError on size mismatch.
double tree_log_prob(const WeightMatrix& w, const Arborescence& t);

// True iff i is an ancestor of j in the tree.
bool contains_path(std::span<const int> parents, int i, int j);
inline bool contains_path(const Arborescence& t, int i, int j) {
  return contains_path(t.parents(), i, j);
}

// All (n+1)^(n-1) arborescences on n concepts. Throws RefusalError for n > 7.
std::vector<Arborescence> enumerate_trees(int n);

// Graphviz rendering, one edge per parent link.
std::string to_dot(const Arborescence& t, const ConceptDomain& domain,
                   const std::vector<int>& highlight = {});

}  // namespace taxon
