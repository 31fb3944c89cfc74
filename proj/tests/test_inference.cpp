#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "oracle.hpp"
#include "taxon/error.hpp"
#include "taxon/inference.hpp"
#include "taxon/log.hpp"

using namespace taxon;

namespace {

struct QuietWarnings {
  WarningSink previous = set_warning_sink(nullptr);
  ~QuietWarnings() { set_warning_sink(previous); }
};

AnswerRecord edge_answer(int i, int j, int a, double gamma) {
  return {{QuestionKind::Edge, i, j}, {}, a, gamma, ""};
}

AnswerRecord path_answer(int i, int j, int a, double gamma) {
  return {{QuestionKind::Path, i, j}, {}, a, gamma, ""};
}

// Every enumerated tree at weight P(T|W).
EmpiricalTreeDistribution exact_distribution(const WeightMatrix& w) {
  const auto trees = enumerate_trees(w.n());
  const auto probs = oracle::tree_probs(w, trees);
  EmpiricalTreeDistribution d(w.n());
  for (std::size_t k = 0; k < trees.size(); ++k) d.add(trees[k], probs[k]);
  return d;
}

Eigen::MatrixXd exact_posterior_marginals(const WeightMatrix& w, const AnswerRecord& rec) {
  const auto trees = enumerate_trees(w.n());
  const auto post = oracle::bayes(oracle::tree_probs(w, trees), trees, [&](const Arborescence& t) {
    const bool holds = rec.question.kind == QuestionKind::Edge
                           ? t.parent(rec.question.j) == rec.question.i
                           : oracle::is_ancestor(t, rec.question.i, rec.question.j);
    return oracle::answer_likelihood(holds, rec.answer, rec.gamma);
  });
  return oracle::marginals(w.n(), trees, post);
}

// Dirichlet(1) columns, i.e. normalized exponential draws.
WeightMatrix dirichlet_weights(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> expo(1.0);
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(n + 1, n + 1);
  for (int j = 1; j <= n; ++j) {
    double s = 0.0;
    for (int i = 0; i <= n; ++i)
      if (i != j) s += t(i, j) = expo(rng);
    for (int i = 0; i <= n; ++i)
      if (i != j) t(i, j) = std::log(t(i, j) / s);
  }
  return WeightMatrix::from_log_weights(t);
}

double mean_log_likelihood(const WeightMatrix& w, const EmpiricalTreeDistribution& test) {
  const double log_z = log_partition(w);
  double s = 0.0;
  for (std::size_t k = 0; k < test.size(); ++k) s += tree_score(w, test.parents(k)) - log_z;
  return s / static_cast<double>(test.size());
}

}  // namespace

TEST_CASE("question validation") {
  CHECK_NOTHROW(validate(Question{QuestionKind::Edge, 0, 2}, 3));
  CHECK_THROWS_AS(validate(Question{QuestionKind::Path, 0, 2}, 3), InvalidArgument);
  CHECK_THROWS_AS(validate(Question{QuestionKind::Path, 2, 2}, 3), InvalidArgument);
  CHECK_THROWS_AS(validate(Question{QuestionKind::Edge, 1, 0}, 3), InvalidArgument);
  CHECK_THROWS_AS(validate(Question{QuestionKind::Edge, 1, 4}, 3), InvalidArgument);
}

TEST_CASE("update_edge_question examples") {
  const WeightMatrix w(3);
  CHECK(update_edge_question(w, edge_answer(1, 2, 1, 0.1))(1, 2) ==
        doctest::Approx(std::log(9.0)).epsilon(1e-12));
  CHECK(update_edge_question(w, edge_answer(1, 2, 0, 0.1))(1, 2) ==
        doctest::Approx(-std::log(9.0)).epsilon(1e-12));
  const auto up = update_edge_question(w, edge_answer(1, 2, 1, 0.1));
  CHECK(up(2, 1) == 0.0);
  CHECK(up(0, 2) == 0.0);
  QuietWarnings quiet;
  CHECK(update_edge_question(w, edge_answer(1, 2, 1, 0.5)) == w);
  CHECK_THROWS_AS(update_edge_question(w, path_answer(1, 2, 1, 0.1)), InvalidArgument);
}

TEST_CASE("edge answers match brute-force Bayes") {
  const auto trees3 = enumerate_trees(3);
  const WeightMatrix uniform(3);
  const auto rec = edge_answer(2, 3, 1, 0.2);
  const auto post = update_edge_question(uniform, rec);
  const auto expected = oracle::bayes(oracle::tree_probs(uniform, trees3), trees3,
                                      [&](const Arborescence& t) {
                                        return oracle::answer_likelihood(t.parent(3) == 2, 1, 0.2);
                                      });
  for (std::size_t k = 0; k < trees3.size(); ++k)
    CHECK(std::abs(std::exp(tree_log_prob(post, trees3[k])) - expected[k]) < 1e-9);

  // Random sequences of edge answers for N <= 4.
  std::mt19937_64 rng(5);
  for (int n = 2; n <= 4; ++n) {
    const auto trees = enumerate_trees(n);
    for (int rep = 0; rep < 5; ++rep) {
      WeightMatrix w = oracle::random_weights(n, 300 + rep);
      auto probs = oracle::tree_probs(w, trees);
      for (int step = 0; step < 10; ++step) {
        const int j = 1 + static_cast<int>(rng() % n);
        int i = static_cast<int>(rng() % (n + 1));
        if (i == j) i = 0;
        const int a = static_cast<int>(rng() % 2);
        const double gamma = 0.05 + 0.4 * (rng() % 100) / 100.0;
        w = update_edge_question(w, edge_answer(i, j, a, gamma));
        probs = oracle::bayes(probs, trees, [&](const Arborescence& t) {
          return oracle::answer_likelihood(t.parent(j) == i, a, gamma);
        });
      }
      for (std::size_t k = 0; k < trees.size(); ++k)
        CHECK(std::abs(std::exp(tree_log_prob(w, trees[k])) - probs[k]) < 1e-9);
    }
  }
}

TEST_CASE("path_likelihood examples") {
  const Arborescence chain({0, 1, 2});
  CHECK(path_likelihood(chain, path_answer(1, 3, 1, 0.05)) == doctest::Approx(0.95));
  CHECK(path_likelihood(chain, path_answer(3, 1, 1, 0.05)) == doctest::Approx(0.05));
  CHECK(path_likelihood(chain, path_answer(3, 1, 0, 0.05)) == doctest::Approx(0.95));
  for (const auto& t : enumerate_trees(3)) {
    CHECK(path_likelihood(t, path_answer(1, 2, 1, 0.5)) == 0.5);
    CHECK(path_likelihood(t, path_answer(1, 2, 0, 0.5)) == 0.5);
  }
}

TEST_CASE("reweight_posterior examples") {
  EmpiricalTreeDistribution two(2);
  two.add(Arborescence({0, 1}), 0.5);  // contains 1 -> 2
  two.add(Arborescence({0, 0}), 0.5);
  const auto post = reweight_posterior(two, path_answer(1, 2, 1, 0.1));
  CHECK(post.weight(0) == doctest::Approx(0.9));
  CHECK(post.weight(1) == doctest::Approx(0.1));

  const auto same = reweight_posterior(two, path_answer(1, 2, 1, 0.5));
  CHECK(same.weight(0) == 0.5);
  CHECK(same.weight(1) == 0.5);

  const WeightMatrix uniform(3);
  const auto rec = path_answer(2, 1, 1, 0.1);
  const auto exact = reweight_posterior(exact_distribution(uniform), rec);
  const auto expected = exact_posterior_marginals(uniform, rec);
  CHECK((empirical_edge_marginals(exact).table() - expected).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("a yes answer never lowers the queried pair's direct edge") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto w = oracle::random_weights(5, seed);
    const auto samples = sample_trees(w, 500, seed);
    const auto before = empirical_edge_marginals(samples);
    for (int i = 1; i <= 5; ++i)
      for (int j = 1; j <= 5; ++j) {
        if (i == j) continue;
        const auto after = empirical_edge_marginals(reweight_posterior(samples, path_answer(i, j, 1, 0.2)));
        CHECK(after(i, j) >= before(i, j) - 1e-12);
      }
  }
}

TEST_CASE("empirical_edge_marginals examples") {
  EmpiricalTreeDistribution single(3);
  single.add(Arborescence({0, 1, 1}), 1.0);
  const auto m = empirical_edge_marginals(single);
  CHECK(m(0, 1) == 1.0);
  CHECK(m(1, 2) == 1.0);
  CHECK(m(1, 3) == 1.0);
  CHECK(m(0, 2) == 0.0);

  const auto uniform = empirical_edge_marginals(exact_distribution(WeightMatrix(3)));
  CHECK(uniform.max_abs_difference(edge_marginals(WeightMatrix(3))) < 1e-12);

  const auto samples = sample_trees(oracle::random_weights(6, 1), 300, 2);
  const auto sm = empirical_edge_marginals(samples);
  for (int j = 1; j <= 6; ++j) CHECK(std::abs(sm.column_sum(j) - 1.0) < 1e-12);
}

TEST_CASE("regularized_loss examples") {
  const auto w = oracle::random_weights(3, 17);
  const auto exact = exact_distribution(w);
  std::vector<double> probs(exact.weights().begin(), exact.weights().end());
  CHECK(regularized_loss(w, exact, 0.0) == doctest::Approx(oracle::entropy(probs)).epsilon(1e-10));

  const WeightMatrix zero(3);
  CHECK(regularized_loss(zero, exact, 0.01) == doctest::Approx(std::log(16.0)).epsilon(1e-12));

  // Tree-by-tree and marginal forms agree.
  const auto samples = sample_trees(w, 200, 4);
  CHECK(regularized_loss(w, samples, 0.03) ==
        doctest::Approx(regularized_loss(w, empirical_edge_marginals(samples), 0.03)).epsilon(1e-12));
}

TEST_CASE("delta_step examples") {
  const auto w = oracle::random_weights(4, 2);
  const auto model = edge_marginals(w);
  const auto at_optimum = delta_step(w, model, model, 0.0);
  CHECK(at_optimum.max_abs() < 1e-12);

  // No empirical mass on an edge at lambda = 0 pushes it down (third candidate).
  const WeightMatrix zero(3);
  EmpiricalTreeDistribution point(3);
  point.add(Arborescence({0, 0, 0}), 1.0);
  const auto pm = edge_marginals(zero);
  const auto step = delta_step(zero, empirical_edge_marginals(point), pm, 0.01);
  CHECK(step.deltas(1, 2) < 0.0);
  CHECK(step.deltas(1, 2) == doctest::Approx(std::log(0.01 / pm(1, 2)) / 3.0));
  CHECK(step.deltas(0, 1) > 0.0);
}

TEST_CASE("delta_step attains the grid minimum of the bound") {
  const int n = 4;
  const auto w = oracle::random_weights(n, 23);
  const auto samples = sample_trees(oracle::random_weights(n, 24), 400, 1);
  const auto emp = empirical_edge_marginals(samples);
  const auto model = edge_marginals(w);
  const double beta = 0.02;
  const auto step = delta_step(w, emp, model, beta);

  // Independent restatement of the bound term.
  auto f = [&](double d, int i, int j) {
    return -d * emp(i, j) + model(i, j) / n * (std::exp(n * d) - 1.0) +
           beta * (std::abs(w(i, j) + d) - std::abs(w(i, j)));
  };
  for_each_edge(n, [&](int i, int j) {
    double grid_min = f(0.0, i, j);
    for (double d = -4.0; d <= 4.0; d += 1e-4) grid_min = std::min(grid_min, f(d, i, j));
    // Include the kink, which the grid may straddle.
    grid_min = std::min(grid_min, f(-w(i, j), i, j));
    CHECK(f(step.deltas(i, j), i, j) <= grid_min + 1e-12);
  });
}

TEST_CASE("auto_beta examples") {
  CHECK(auto_beta(10, 10000, 0.1) == doctest::Approx(std::sqrt(std::log(100.0) / 10000.0)));
  CHECK(auto_beta(10, 10000, 0.1) == doctest::Approx(0.02146).epsilon(1e-3));
  CHECK(auto_beta(20, 10000, 0.05) == doctest::Approx(0.02448).epsilon(1e-3));
  CHECK(auto_beta(10, 40000, 0.1) == doctest::Approx(auto_beta(10, 10000, 0.1) / 2));
  CHECK_THROWS_AS(auto_beta(10, 0, 0.1), InvalidArgument);
}

TEST_CASE("config validation") {
  InferenceConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.beta = Beta::fixed(0.0);
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg = InferenceConfig{};
  cfg.gamma_min = 0.2;
  cfg.gamma_default = 0.1;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg = InferenceConfig{};
  cfg.beta = Beta::automatic_with_confidence(0.1);
  CHECK(cfg.beta.resolve(10, 10000) == doctest::Approx(auto_beta(10, 10000, 0.1)));
}

TEST_CASE("fit_weights on the exact uniform distribution") {
  InferenceConfig cfg;
  cfg.beta = Beta::fixed(1e-6);
  const auto fit = fit_weights(WeightMatrix(3), exact_distribution(WeightMatrix(3)), cfg);
  CHECK(edge_marginals(fit.weights).max_abs_difference(edge_marginals(WeightMatrix(3))) < 1e-3);
}

TEST_CASE("fit_weights on a point mass recovers the tree as MAP") {
  const Arborescence target({0, 1, 1, 3, 0});
  EmpiricalTreeDistribution point(5);
  point.add(target, 1.0);
  const auto fit = fit_weights(WeightMatrix(5), point, InferenceConfig{});
  CHECK(map_tree(fit.weights) == target);
  CHECK(edge_marginals(fit.weights)(3, 4) > 0.95);
}

TEST_CASE("fit_weights loss never increases") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const int n = 3 + static_cast<int>(seed % 6);
    const auto samples = sample_trees(oracle::random_weights(n, seed, 1.5), 2000, seed);
    InferenceConfig cfg;
    cfg.beta = Beta::fixed(0.005 + 0.005 * (seed % 3));
    if (seed % 2) {
      cfg.init = FitInit::WarmStart;
    }
    const auto fit = fit_weights(oracle::random_weights(n, seed + 50), samples, cfg, true);
    for (std::size_t k = 1; k < fit.loss_trace.size(); ++k)
      CHECK(fit.loss_trace[k] <= fit.loss_trace[k - 1] + 1e-10);
    CHECK(fit.converged);
  }
}

TEST_CASE("plain bound steps also never increase the loss") {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const int n = 2 + static_cast<int>(seed);
    const auto samples = sample_trees(oracle::random_weights(n, seed, 1.5), 2000, seed);
    InferenceConfig cfg;
    cfg.center_columns = false;
    cfg.max_step_doublings = 0;
    cfg.max_inner_iterations = 200;
    const auto fit = fit_weights(WeightMatrix(n), samples, cfg, true);
    for (std::size_t k = 1; k < fit.loss_trace.size(); ++k)
      CHECK(fit.loss_trace[k] <= fit.loss_trace[k - 1] + 1e-10);
  }
}

TEST_CASE("center_columns keeps tree probabilities and shrinks the l1 norm") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const int n = 1 + static_cast<int>(seed % 4);
    WeightMatrix w = oracle::random_weights(n, seed, 2.0);
    for (int i = 0; i <= n; ++i)
      if (i != 1) w.add(i, 1, 3.0);
    WeightMatrix c = w;
    center_columns(c);
    CHECK(c.l1_norm() <= w.l1_norm() + 1e-12);
    const auto trees = enumerate_trees(n);
    const auto p = oracle::tree_probs(w, trees);
    const auto q = oracle::tree_probs(c, trees);
    for (std::size_t k = 0; k < trees.size(); ++k) CHECK(q[k] == doctest::Approx(p[k]).epsilon(1e-12));
    WeightMatrix again = c;
    center_columns(again);
    CHECK(again == c);
  }
  WeightMatrix w(2);
  w.set(0, 1, 1.0);
  w.set(2, 1, 3.0);
  center_columns(w);  // any shift in [-3, -1] is optimal; the smallest is -1
  CHECK(w(0, 1) == doctest::Approx(0.0));
  CHECK(w(2, 1) == doctest::Approx(2.0));
}

TEST_CASE("fit_weights reaches ground-truth held-out likelihood with 10,000 samples") {
  const int n = 8;
  const auto truth = dirichlet_weights(n, 31);
  const auto train = sample_trees(truth, 10000, 1);
  const auto test = sample_trees(truth, 1000, 2);
  const auto fit = fit_weights(WeightMatrix(n), train, InferenceConfig{});
  const double ll_truth = mean_log_likelihood(truth, test);
  const double ll_fit = mean_log_likelihood(fit.weights, test);
  CHECK((ll_truth - ll_fit) / std::abs(ll_truth) < 0.02);
}

TEST_CASE("held-out NLL is non-increasing in the sample count") {
  const int n = 10;
  std::vector<double> med;
  for (std::size_t m : {100u, 1000u, 10000u}) {
    std::vector<double> nll;
    for (std::uint64_t trial = 0; trial < 10; ++trial) {
      const auto truth = dirichlet_weights(n, 700 + trial);
      const auto fit = fit_weights(WeightMatrix(n), sample_trees(truth, m, trial), InferenceConfig{});
      nll.push_back(-mean_log_likelihood(fit.weights, sample_trees(truth, 1000, 99 + trial)));
    }
    std::nth_element(nll.begin(), nll.begin() + 5, nll.end());
    med.push_back(nll[5]);
  }
  CHECK(med[1] <= med[0]);
  CHECK(med[2] <= med[1]);
}

TEST_CASE("apply_answer examples") {
  QuietWarnings quiet;
  InferenceConfig cfg;
  cfg.m = 50000;
  cfg.seed = 9;
  const WeightMatrix uniform(3);

  const auto silent = apply_answer(uniform, path_answer(1, 2, 1, 0.5), cfg);
  CHECK_FALSE(silent.informative);
  CHECK(edge_marginals(silent.weights).max_abs_difference(edge_marginals(uniform)) < 0.02);

  const auto rec = path_answer(1, 2, 1, 0.05);
  const auto step = apply_answer(uniform, rec, cfg);
  const auto expected = exact_posterior_marginals(uniform, rec);
  CHECK((edge_marginals(step.weights).table() - expected).cwiseAbs().maxCoeff() < 0.02);

  const auto edge = edge_answer(0, 2, 0, 0.1);
  CHECK(apply_answer(uniform, edge, cfg).weights == update_edge_question(uniform, edge));
}

TEST_CASE("one path step tracks the exact posterior for N <= 4") {
  QuietWarnings quiet;
  InferenceConfig cfg;
  cfg.m = 50000;
  for (int n = 2; n <= 4; ++n) {
    const auto w = oracle::random_weights(n, 60 + n, 0.7);
    cfg.seed = 100 + n;
    const auto rec = path_answer(n, 1, 1, 0.1);
    const auto step = apply_answer(w, rec, cfg);
    const auto expected = exact_posterior_marginals(w, rec);
    CHECK((edge_marginals(step.weights).table() - expected).cwiseAbs().maxCoeff() < 0.02);
  }
}

TEST_CASE("low effective sample size triggers a refit from a second proposal") {
  std::vector<std::string> warnings;
  auto previous = set_warning_sink([&](std::string_view s) { warnings.emplace_back(s); });
  InferenceConfig cfg;
  cfg.m = 2000;
  cfg.seed = 3;
  cfg.gamma_min = 1e-6;
  // The prior strongly denies 2 -> 1, then a confident yes arrives.
  WeightMatrix w(4);
  for (int j = 1; j <= 4; ++j) w.set(0, j, 6.0);
  const auto step = apply_answer(w, path_answer(2, 1, 1, 1e-6), cfg);
  set_warning_sink(previous);
  CHECK(step.resampled);
  CHECK_FALSE(warnings.empty());
  CHECK(edge_marginals(step.weights)(2, 1) > 0.5);
}
