#include "taxon/tree_dist.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "laplacian.hpp"
#include "taxon/error.hpp"

namespace taxon {

// ---------------------------------------------------------------------------
// ConceptDomain

ConceptDomain::ConceptDomain(std::vector<std::string> labels) {
  if (labels.empty()) throw InvalidArgument("concept domain needs at least one concept");
  for (auto& label : labels) add(std::move(label));
}

const std::string& ConceptDomain::label(int i) const {
  static const std::string root(kRootLabel);
  if (i == 0) return root;
  if (i < 0 || i > size()) throw InvalidArgument("node index out of range: " + std::to_string(i));
  return labels_[i - 1];
}

int ConceptDomain::index_of(std::string_view label) const {
  if (label == kRootLabel) return 0;
  auto it = index_.find(std::string(label));
  return it == index_.end() ? -1 : it->second;
}

int ConceptDomain::add(std::string label) {
  if (label.empty()) throw InvalidArgument("concept label must be non-empty");
  if (label == kRootLabel) throw ConflictError("label is reserved for the root: " + label);
  if (index_.count(label)) throw ConflictError("duplicate concept label: " + label);
  labels_.push_back(label);
  const int idx = size();
  index_.emplace(std::move(label), idx);
  return idx;
}

// ---------------------------------------------------------------------------
// WeightMatrix

WeightMatrix::WeightMatrix(int n) : n_(n), lambda_(Eigen::MatrixXd::Zero(n + 1, n + 1)) {
  if (n < 1) throw InvalidArgument("weight matrix needs n >= 1");
}

WeightMatrix WeightMatrix::from_log_weights(const Eigen::MatrixXd& table) {
  if (table.rows() != table.cols() || table.rows() < 2)
    throw ShapeError("log-weight table must be square with n >= 1");
  WeightMatrix w(static_cast<int>(table.rows()) - 1);
  for_each_edge(w.n_, [&](int i, int j) {
    if (!std::isfinite(table(i, j)))
      throw InvalidArgument("non-finite log-weight at (" + std::to_string(i) + "," +
                            std::to_string(j) + ")");
    w.set(i, j, table(i, j));
  });
  return w;
}

void WeightMatrix::set(int i, int j, double v) {
  if (i == j || j == 0) throw InvalidArgument("edge does not exist");
  if (!std::isfinite(v)) throw InvalidArgument("non-finite log-weight");
  lambda_(i, j) = std::clamp(v, -kLogWeightBound, kLogWeightBound);
}

double WeightMatrix::l1_norm() const {
  double s = 0.0;
  for_each_edge(n_, [&](int i, int j) { s += std::abs(lambda_(i, j)); });
  return s;
}

double WeightMatrix::max_abs_difference(const WeightMatrix& other) const {
  if (other.n_ != n_) throw ShapeError("weight matrix size mismatch");
  return (lambda_ - other.lambda_).cwiseAbs().maxCoeff();
}

bool WeightMatrix::operator==(const WeightMatrix& other) const {
  return n_ == other.n_ && lambda_ == other.lambda_;
}

// ---------------------------------------------------------------------------
// Arborescence

bool is_arborescence(std::span<const int> parents) {
  const int n = static_cast<int>(parents.size());
  for (int j = 1; j <= n; ++j) {
    const int p = parents[j - 1];
    if (p < 0 || p > n || p == j) return false;
  }
  // 0 = unvisited, 1 = on current chain, 2 = reaches the root
  std::vector<char> state(n + 1, 0);
  state[0] = 2;
  for (int j = 1; j <= n; ++j) {
    int u = j;
    while (state[u] == 0) {
      state[u] = 1;
      u = parents[u - 1];
    }
    if (state[u] == 1) return false;
    for (u = j; state[u] == 1; u = parents[u - 1]) state[u] = 2;
  }
  return true;
}

Arborescence::Arborescence(std::vector<int> parents) : parents_(std::move(parents)) {
  if (!is_arborescence(parents_)) throw InvalidArgument("parent array is not a rooted tree");
}

// ---------------------------------------------------------------------------
// EmpiricalTreeDistribution

Arborescence EmpiricalTreeDistribution::tree(std::size_t k) const {
  auto p = parents(k);
  return Arborescence(std::vector<int>(p.begin(), p.end()));
}

void EmpiricalTreeDistribution::add(std::span<const int> parents, double weight) {
  if (static_cast<int>(parents.size()) != n_) throw ShapeError("tree size mismatch");
  if (!(weight >= 0.0) || !std::isfinite(weight))
    throw InvalidArgument("sample weight must be finite and non-negative");
  parents_.insert(parents_.end(), parents.begin(), parents.end());
  weights_.push_back(weight);
}

void EmpiricalTreeDistribution::reserve(std::size_t m) {
  parents_.reserve(m * static_cast<std::size_t>(n_));
  weights_.reserve(m);
}

double EmpiricalTreeDistribution::total_weight() const {
  return std::accumulate(weights_.begin(), weights_.end(), 0.0);
}

void EmpiricalTreeDistribution::normalize() {
  const double total = total_weight();
  if (!(total > 0.0) || !std::isfinite(total))
    throw DegeneratePosterior("all sample weights are zero");
  for (double& w : weights_) w /= total;
}

double EmpiricalTreeDistribution::effective_sample_size() const {
  const double total = total_weight();
  if (!(total > 0.0)) return 0.0;
  double sq = 0.0;
  for (double w : weights_) sq += (w / total) * (w / total);
  return 1.0 / sq;
}

EmpiricalTreeDistribution EmpiricalTreeDistribution::grouped() const {
  std::vector<std::size_t> order(size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto less = [&](std::size_t a, std::size_t b) {
    auto pa = parents(a), pb = parents(b);
    return std::lexicographical_compare(pa.begin(), pa.end(), pb.begin(), pb.end());
  };
  std::sort(order.begin(), order.end(), less);
  EmpiricalTreeDistribution out(n_);
  for (std::size_t k : order) {
    auto p = parents(k);
    if (!out.empty()) {
      auto last = out.parents(out.size() - 1);
      if (std::equal(p.begin(), p.end(), last.begin())) {
        out.weights_.back() += weights_[k];
        continue;
      }
    }
    out.add(p, weights_[k]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// EdgeMarginals

double EdgeMarginals::column_sum(int j) const {
  double s = 0.0;
  for (int i = 0; i <= n_; ++i)
    if (i != j) s += probs_(i, j);
  return s;
}

double EdgeMarginals::max_abs_difference(const EdgeMarginals& other) const {
  if (other.n_ != n_) throw ShapeError("marginal table size mismatch");
  return (probs_ - other.probs_).cwiseAbs().maxCoeff();
}

// ---------------------------------------------------------------------------
// Exact computations

double log_partition(const WeightMatrix& w) {
  const auto scaled = detail::scale_columns(w);
  detail::LaplacianMinor minor(scaled.linear);
  return scaled.offsets.sum() + minor.log_det();
}

EdgeMarginals edge_marginals(const WeightMatrix& w) {
  const auto scaled = detail::scale_columns(w);
  detail::LaplacianMinor minor(scaled.linear);
  minor.log_det();  // rejects singular minors
  return minor.marginals();
}

PartitionResult partition_and_marginals(const WeightMatrix& w) {
  const auto scaled = detail::scale_columns(w);
  detail::LaplacianMinor minor(scaled.linear);
  const double log_z = scaled.offsets.sum() + minor.log_det();
  return {log_z, minor.marginals()};
}

double tree_score(const WeightMatrix& w, std::span<const int> parents) {
  if (static_cast<int>(parents.size()) != w.n()) throw ShapeError("tree size mismatch");
  double s = 0.0;
  for (int j = 1; j <= w.n(); ++j) s += w(parents[j - 1], j);
  return s;
}

double tree_log_prob(const WeightMatrix& w, const Arborescence& t) {
  if (t.n() != w.n())
    throw ShapeError("tree has " + std::to_string(t.n()) + " concepts, weights have " +
                     std::to_string(w.n()));
  return tree_score(w, t.parents()) - log_partition(w);
}

bool contains_path(std::span<const int> parents, int i, int j) {
  const int n = static_cast<int>(parents.size());
  if (i == j || j < 1 || j > n || i < 0 || i > n) return false;
  // A path has at most n edges.
  for (int u = parents[j - 1], steps = 0; steps < n; u = parents[u - 1], ++steps) {
    if (u == i) return true;
    if (u == 0) return false;
  }
  return false;
}

std::vector<Arborescence> enumerate_trees(int n) {
  if (n > kMaxEnumerationSize)
    throw RefusalError("refusing to enumerate trees for n=" + std::to_string(n) +
                       " (limit " + std::to_string(kMaxEnumerationSize) + ")");
  if (n < 1) throw InvalidArgument("enumerate_trees needs n >= 1");
  std::vector<Arborescence> out;
  // Odometer over parent choices {0..n} \ {j} for each concept j.
  std::vector<int> parents(n, 0);
  auto next_choice = [&](int j, int p) {
    ++p;
    if (p == j) ++p;
    return p;
  };
  while (true) {
    if (is_arborescence(parents)) out.emplace_back(parents);
    int k = n - 1;
    for (; k >= 0; --k) {
      const int p = next_choice(k + 1, parents[k]);
      if (p <= n) {
        parents[k] = p;
        break;
      }
      parents[k] = 0;
    }
    if (k < 0) break;
  }
  return out;
}

namespace {

std::string dot_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
  return out;
}

}  // namespace

std::string to_dot(const Arborescence& t, const ConceptDomain& domain,
                   const std::vector<int>& highlight) {
  if (t.n() != domain.size()) throw ShapeError("tree and domain sizes differ");
  std::ostringstream os;
  os << "digraph hierarchy {\n";
  for (int i = 0; i <= t.n(); ++i) {
    const bool red = std::find(highlight.begin(), highlight.end(), i) != highlight.end();
    os << "  n" << i << " [label=\"" << dot_escape(domain.label(i)) << '"'
       << (red ? ", style=filled, fillcolor=red" : "") << "];\n";
  }
  for (int j = 1; j <= t.n(); ++j) os << "  n" << t.parent(j) << " -> n" << j << ";\n";
  os << "}\n";
  return os.str();
}

}  // namespace taxon
