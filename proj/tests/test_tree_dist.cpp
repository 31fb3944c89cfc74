#include <doctest.h>

#include <cmath>
#include <map>

#include "oracle.hpp"
#include "taxon/error.hpp"
#include "taxon/log.hpp"
#include "taxon/tree_dist.hpp"

using namespace taxon;

namespace {

struct QuietWarnings {
  WarningSink previous = set_warning_sink(nullptr);
  ~QuietWarnings() { set_warning_sink(previous); }
};

}  // namespace

TEST_CASE("enumerate_trees counts (n+1)^(n-1) arborescences") {
  CHECK(enumerate_trees(2).size() == 3);
  CHECK(enumerate_trees(3).size() == 16);
  CHECK(enumerate_trees(5).size() == 1296);
  for (const auto& t : enumerate_trees(4)) CHECK(is_arborescence(t.parents()));
  CHECK_THROWS_AS(enumerate_trees(8), RefusalError);
}

TEST_CASE("arborescence validation") {
  CHECK(is_arborescence(std::vector<int>{0, 1, 2}));
  CHECK_FALSE(is_arborescence(std::vector<int>{2, 1}));      // 1 <-> 2 cycle
  CHECK_FALSE(is_arborescence(std::vector<int>{1, 0}));      // self loop on 1
  CHECK_FALSE(is_arborescence(std::vector<int>{0, 4, 0}));   // out of range
  CHECK_THROWS_AS(Arborescence(std::vector<int>{3, 1, 2}), InvalidArgument);
}

TEST_CASE("concept domain") {
  ConceptDomain d({"fruit", "apple"});
  CHECK(d.size() == 2);
  CHECK(d.index_of("apple") == 2);
  CHECK(d.index_of("ROOT") == 0);
  CHECK(d.index_of("pear") == -1);
  CHECK(d.label(0) == "ROOT");
  CHECK_THROWS_AS(d.add("fruit"), ConflictError);
  CHECK_THROWS_AS(d.add(""), InvalidArgument);
  CHECK_THROWS_AS(ConceptDomain(std::vector<std::string>{}), InvalidArgument);
  CHECK(d.add("pear") == 3);
}

TEST_CASE("weight matrix clamps and rejects non-finite entries") {
  WeightMatrix w(3);
  w.set(0, 1, 100.0);
  CHECK(w(0, 1) == kLogWeightBound);
  w.add(2, 1, -75.0);
  CHECK(w(2, 1) == -kLogWeightBound);
  CHECK_THROWS_AS(w.set(1, 1, 0.0), InvalidArgument);
  CHECK_THROWS_AS(w.set(1, 0, 0.0), InvalidArgument);
  CHECK_THROWS_AS(w.set(0, 1, NAN), InvalidArgument);
}

TEST_CASE("log_partition examples") {
  CHECK(log_partition(WeightMatrix(2)) == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  CHECK(log_partition(WeightMatrix(5)) == doctest::Approx(std::log(1296.0)).epsilon(1e-12));
  const auto trees = enumerate_trees(4);
  const auto w = oracle::random_weights(4, 11);
  CHECK(std::abs(log_partition(w) - oracle::log_partition(w, trees)) < 1e-9);
}

TEST_CASE("edge_marginals of two concepts under uniform weights") {
  const auto m = edge_marginals(WeightMatrix(2));
  CHECK(m(0, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(m(0, 2) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(m(1, 2) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(m(2, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("map_tree examples") {
  WeightMatrix w(3);
  for (int j = 1; j <= 3; ++j) w.set(0, j, 1.0);
  CHECK(map_tree(w) == Arborescence::star(3));
  CHECK(map_tree(WeightMatrix(5)) == Arborescence::star(5));

  // A chain 0 -> 1 -> 2 -> 3 dominates.
  WeightMatrix chain(3);
  chain.set(0, 1, 2.0);
  chain.set(1, 2, 2.0);
  chain.set(2, 3, 2.0);
  CHECK(map_tree(chain) == Arborescence({0, 1, 2}));

  // Mutually preferred pair forces a contraction: 1 <-> 2 is a cycle of best edges.
  WeightMatrix cyc(3);
  cyc.set(1, 2, 5.0);
  cyc.set(2, 1, 5.0);
  cyc.set(0, 1, 1.0);
  const auto t = map_tree(cyc);
  CHECK(t == Arborescence({0, 1, 0}));
}

TEST_CASE("tree_log_prob examples") {
  for (const auto& t : enumerate_trees(2))
    CHECK(tree_log_prob(WeightMatrix(2), t) == doctest::Approx(std::log(1.0 / 3.0)));
  CHECK(tree_log_prob(WeightMatrix(5), Arborescence::star(5)) ==
        doctest::Approx(-std::log(1296.0)));
  const auto w = oracle::random_weights(3, 5);
  double total = 0.0;
  for (const auto& t : enumerate_trees(3)) total += std::exp(tree_log_prob(w, t));
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(tree_log_prob(w, Arborescence::star(4)), ShapeError);
}

TEST_CASE("contains_path examples") {
  const Arborescence chain({0, 1});
  CHECK(contains_path(chain, 1, 2));
  CHECK_FALSE(contains_path(chain, 2, 1));
  for (const auto& t : enumerate_trees(4)) {
    for (int j = 1; j <= 4; ++j) CHECK(contains_path(t, 0, j));
    for (int i = 1; i <= 4; ++i)
      for (int j = 1; j <= 4; ++j)
        if (i != j) CHECK(contains_path(t, i, j) == oracle::is_ancestor(t, i, j));
  }
}

TEST_CASE("exact computations agree with enumeration for N <= 4") {
  for (int n = 2; n <= 4; ++n) {
    const auto trees = enumerate_trees(n);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto w = oracle::random_weights(n, 1000 * n + seed);
      const double log_z = oracle::log_partition(w, trees);
      CHECK(std::abs(log_partition(w) - log_z) < 1e-9 * std::max(1.0, std::abs(log_z)));

      const auto probs = oracle::tree_probs(w, trees);
      const auto expected = oracle::marginals(n, trees, probs);
      CHECK((edge_marginals(w).table() - expected).cwiseAbs().maxCoeff() < 1e-9);

      const auto best = std::max_element(probs.begin(), probs.end()) - probs.begin();
      CHECK(map_tree(w) == trees[best]);

      for (std::size_t k = 0; k < trees.size(); k += 7)
        CHECK(std::abs(tree_log_prob(w, trees[k]) - std::log(probs[k])) < 1e-9);
    }
  }
}

TEST_CASE("edge marginal columns sum to one up to N = 50") {
  for (int n : {5, 10, 20, 35, 50}) {
    const auto m = edge_marginals(oracle::random_weights(n, 77 + n));
    double total = 0.0;
    for (int j = 1; j <= n; ++j) {
      CHECK(std::abs(m.column_sum(j) - 1.0) < 1e-9);
      total += m.column_sum(j);
    }
    CHECK(std::abs(total - n) < 1e-8);
  }
}

TEST_CASE("adding a constant to every log-weight") {
  const double c = 1.7;
  for (int n : {3, 6}) {
    const auto w = oracle::random_weights(n, 900 + n);
    Eigen::MatrixXd shifted = w.table();
    for_each_edge(n, [&](int i, int j) { shifted(i, j) += c; });
    const auto ws = WeightMatrix::from_log_weights(shifted);
    CHECK(std::abs(log_partition(ws) - log_partition(w) - n * c) < 1e-9);
    CHECK(edge_marginals(ws).max_abs_difference(edge_marginals(w)) < 1e-9);
    CHECK(map_tree(ws) == map_tree(w));
    const auto t = map_tree(w);
    CHECK(std::abs(tree_log_prob(ws, t) - tree_log_prob(w, t)) < 1e-9);
  }
}

TEST_CASE("large log-weights stay finite for N = 200") {
  QuietWarnings quiet;
  const auto w = oracle::random_weights(200, 3, 10.0);
  const double log_z = log_partition(w);
  CHECK(std::isfinite(log_z));
  CHECK(std::abs(edge_marginals(w).column_sum(17) - 1.0) < 1e-8);
}

TEST_CASE("sample_trees reproduces the uniform distribution over 16 trees") {
  const auto trees = enumerate_trees(3);
  const std::size_t m = 160000;
  const auto samples = sample_trees(WeightMatrix(3), m, 42);
  REQUIRE(samples.size() == m);
  std::map<Arborescence, double> freq;
  for (std::size_t k = 0; k < m; ++k) freq[samples.tree(k)] += samples.weight(k);
  double tv = 0.0;
  for (const auto& t : trees) tv += std::abs(freq[t] - 1.0 / 16.0);
  CHECK(freq.size() == 16);
  CHECK(0.5 * tv < 0.01);
}

TEST_CASE("sample_trees respects a dominant edge") {
  WeightMatrix w(4);
  w.set(0, 1, 20.0);
  const auto samples = sample_trees(w, 2000, 3);
  std::size_t hits = 0;
  for (std::size_t k = 0; k < samples.size(); ++k) hits += samples.parents(k)[0] == 0;
  CHECK(hits >= 0.99 * samples.size());
}

TEST_CASE("sample_trees is deterministic under a seed") {
  const auto w = oracle::random_weights(6, 8);
  const auto a = sample_trees(w, 500, 99);
  const auto b = sample_trees(w, 500, 99);
  const auto c = sample_trees(w, 500, 100);
  bool same = true, differs = false;
  for (std::size_t k = 0; k < a.size(); ++k) {
    same = same && a.tree(k) == b.tree(k);
    differs = differs || a.tree(k) != c.tree(k);
  }
  CHECK(same);
  CHECK(differs);
}

TEST_CASE("sampled edge frequencies converge to exact marginals") {
  for (int n : {2, 4, 6}) {
    const auto w = oracle::random_weights(n, 40 + n);
    const auto samples = sample_trees(w, 100000, 7 + n);
    EdgeMarginals freq(n);
    for (std::size_t k = 0; k < samples.size(); ++k) {
      auto p = samples.parents(k);
      for (int j = 1; j <= n; ++j) freq(p[j - 1], j) += samples.weight(k);
    }
    CHECK(freq.max_abs_difference(edge_marginals(w)) < 0.01);
  }
}

TEST_CASE("sampler survives a nearly closed cycle") {
  QuietWarnings quiet;
  // 1 and 2 strongly prefer each other; a plain walk would loop ~e^60 times.
  WeightMatrix w(3);
  w.set(1, 2, 30.0);
  w.set(2, 1, 30.0);
  for (int j = 1; j <= 3; ++j) w.set(0, j, -30.0);
  w.set(0, 3, 0.0);
  const auto samples = sample_trees(w, 200, 5);
  const auto exact = edge_marginals(w);
  EdgeMarginals freq(3);
  for (std::size_t k = 0; k < samples.size(); ++k) {
    CHECK(is_arborescence(samples.parents(k)));
    auto p = samples.parents(k);
    for (int j = 1; j <= 3; ++j) freq(p[j - 1], j) += samples.weight(k);
  }
  CHECK(freq.max_abs_difference(exact) < 0.12);
}

TEST_CASE("empirical distribution bookkeeping") {
  EmpiricalTreeDistribution d(2);
  d.add(Arborescence({0, 0}), 1.0);
  d.add(Arborescence({0, 1}), 1.0);
  d.add(Arborescence({0, 0}), 2.0);
  CHECK(d.effective_sample_size() == doctest::Approx(16.0 / 6.0));
  d.normalize();
  CHECK(d.total_weight() == doctest::Approx(1.0));
  const auto g = d.grouped();
  REQUIRE(g.size() == 2);
  CHECK(g.tree(0) == Arborescence({0, 0}));
  CHECK(g.weight(0) == doctest::Approx(0.75));
  EmpiricalTreeDistribution zero(2);
  zero.add(Arborescence({0, 0}), 0.0);
  CHECK_THROWS_AS(zero.normalize(), DegeneratePosterior);
}

TEST_CASE("dot export") {
  ConceptDomain d({"fruit", "apple"});
  const auto dot = to_dot(Arborescence({0, 1}), d);
  CHECK(dot.find("n0 -> n1;") != std::string::npos);
  CHECK(dot.find("n1 -> n2;") != std::string::npos);
  CHECK(dot.find("label=\"apple\"") != std::string::npos);
}
