#include "taxon/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include "taxon/error.hpp"
#include "taxon/serialization.hpp"

namespace taxon {

SimulatedWorker::SimulatedWorker(Arborescence truth, double noise, std::uint64_t seed,
                                 double gamma_min)
    : truth_(std::move(truth)), noise_(noise), gamma_min_(gamma_min), rng_(seed) {
  if (!(noise >= 0.0 && noise < 0.5)) throw InvalidArgument("worker noise must lie in [0, 0.5)");
  if (!(gamma_min > 0.0 && gamma_min < 0.5)) throw InvalidArgument("gamma_min must lie in (0, 0.5)");
}

AnswerRecord answer_query(SimulatedWorker& worker, const Question& q) {
  validate(q, worker.truth().n());
  const bool truth = relation_holds(worker.truth().parents(), q);
  // Always consume one draw so the stream does not depend on the noise level.
  const bool flip = uniform01(worker.rng()) < worker.noise();
  AnswerRecord rec;
  rec.question = q;
  rec.answer = (truth != flip) ? 1 : 0;
  rec.votes = {rec.answer};
  rec.gamma = std::max(worker.noise(), worker.gamma_min());
  return rec;
}

double auc_edges(const EdgeMarginals& marginals, const Arborescence& truth) {
  const int n = truth.n();
  if (marginals.n() != n) throw ShapeError("marginals and tree differ in size");
  struct Item {
    double score;
    bool positive;
  };
  std::vector<Item> items;
  items.reserve(num_edges(n));
  for_each_edge(n, [&](int i, int j) { items.push_back({marginals(i, j), truth.has_edge(i, j)}); });
  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.score < b.score; });

  // Sum of (average) ranks of positives, ranks starting at 1.
  double rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t lo = 0; lo < items.size();) {
    std::size_t hi = lo;
    while (hi < items.size() && items[hi].score == items[lo].score) ++hi;
    const double mid_rank = 0.5 * static_cast<double>(lo + 1 + hi);
    for (std::size_t k = lo; k < hi; ++k)
      if (items[k].positive) {
        rank_sum += mid_rank;
        ++positives;
      }
    lo = hi;
  }
  const std::size_t negatives = items.size() - positives;
  if (negatives == 0) return 1.0;
  const double p = static_cast<double>(positives);
  return (rank_sum - p * (p + 1) / 2) / (p * static_cast<double>(negatives));
}

void ExperimentSpec::validate() const {
  if (n < 1) throw InvalidArgument("n must be >= 1");
  if (!(noise >= 0.0 && noise < 0.5)) throw InvalidArgument("noise must lie in [0, 0.5)");
  if (budget < 0) throw InvalidArgument("budget must be >= 0");
  if (m < 1) throw InvalidArgument("m must be >= 1");
  if (!(beta > 0.0)) throw InvalidArgument("beta must be positive");
  if (trials < 1) throw InvalidArgument("trials must be >= 1");
  if (threads < 0) throw InvalidArgument("threads must be >= 0");
}

double ExperimentResult::mean_final_auc() const {
  if (trials.empty()) return 0.0;
  double s = 0.0;
  for (const auto& t : trials) s += t.auc.empty() ? auc_edges(t.final_marginals, t.truth) : t.auc.back();
  return s / static_cast<double>(trials.size());
}

std::vector<int> ExperimentResult::yes_counts() const {
  std::vector<int> out;
  for (const auto& t : trials) out.push_back(t.yes_count);
  return out;
}

std::vector<double> ExperimentResult::final_aucs() const {
  std::vector<double> out;
  for (const auto& t : trials) out.push_back(t.auc.empty() ? auc_edges(t.final_marginals, t.truth) : t.auc.back());
  return out;
}

void parallel_for(int count, int threads, const std::function<void(int)>& fn) {
  int workers = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
  workers = std::clamp(workers, 1, std::max(count, 1));
  if (workers == 1) {
    for (int k = 0; k < count; ++k) fn(k);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int k = next++; k < count; k = next++) {
        try {
          fn(k);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

namespace {

TrialRecord run_trial(const ExperimentSpec& spec, int trial) {
  const std::uint64_t trial_seed = derive_seed(spec.seed, seed_tag::kTrial, trial);
  TrialRecord rec;
  rec.truth = sample_trees(WeightMatrix(spec.n), 1, derive_seed(trial_seed, seed_tag::kTruth)).tree(0);
  SimulatedWorker worker(rec.truth, spec.noise, derive_seed(trial_seed, seed_tag::kWorker));

  InferenceConfig cfg;
  cfg.m = spec.m;
  cfg.beta = Beta::fixed(spec.beta);
  cfg.init = spec.init;
  cfg.penalty_center = spec.penalty_center;
  QuestionPool pool(spec.n);
  WeightMatrix w(spec.n);
  const double gamma = std::max(spec.noise, cfg.gamma_min);

  for (int step = 0; step < spec.budget; ++step) {
    const auto samples = sample_trees(w, spec.m, derive_seed(trial_seed, seed_tag::kUpdate, step));
    const Question q = select_question(samples, pool, spec.strategy, gamma,
                                       derive_seed(trial_seed, seed_tag::kSelect, step))
                           .question;
    pool.record_asked(q);
    const AnswerRecord answer = answer_query(worker, q);
    cfg.seed = derive_seed(trial_seed, seed_tag::kResample, step);
    w = apply_path_answer(w, samples, answer, cfg).weights;

    rec.questions.push_back(q);
    rec.answers.push_back(answer.answer);
    rec.yes_count += answer.answer;
    rec.auc.push_back(auc_edges(edge_marginals(w), rec.truth));
  }
  rec.final_marginals = edge_marginals(w);
  return rec;
}

}  // namespace

ExperimentResult run_recovery_experiment(const ExperimentSpec& spec) {
  spec.validate();
  if (spec.n < 2) throw InvalidArgument("recovery experiments need n >= 2");
  const auto start = std::chrono::steady_clock::now();
  ExperimentResult out;
  out.spec = spec;
  out.trials.resize(spec.trials);
  parallel_for(spec.trials, spec.threads, [&](int t) { out.trials[t] = run_trial(spec, t); });

  out.mean_auc.assign(spec.budget, 0.0);
  out.mean_final_marginals = EdgeMarginals(spec.n);
  for (const auto& t : out.trials) {
    for (int s = 0; s < spec.budget; ++s) out.mean_auc[s] += t.auc[s] / spec.trials;
    for_each_edge(spec.n, [&](int i, int j) {
      out.mean_final_marginals(i, j) += t.final_marginals(i, j) / spec.trials;
    });
  }
  out.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

void write_recovery_csv(std::ostream& out, const ExperimentResult& r) {
  out << "trial,step,kind,i,j,answer,auc\n";
  const auto precision = out.precision(17);
  for (std::size_t t = 0; t < r.trials.size(); ++t) {
    const auto& tr = r.trials[t];
    for (std::size_t s = 0; s < tr.questions.size(); ++s)
      out << t << ',' << s + 1 << ',' << to_string(tr.questions[s].kind) << ','
          << tr.questions[s].i << ',' << tr.questions[s].j << ',' << tr.answers[s] << ','
          << tr.auc[s] << '\n';
  }
  out.precision(precision);
}

nlohmann::json recovery_summary(const ExperimentResult& r, bool include_timing) {
  const auto& s = r.spec;
  Json j;
  j["spec"] = {{"n", s.n},         {"noise", s.noise},   {"strategy", to_string(s.strategy.mode)},
               {"allow_repeats", s.strategy.allow_repeats},
               {"budget", s.budget}, {"m", s.m},         {"beta", s.beta},
               {"trials", s.trials}, {"seed", s.seed}};
  j["mean_auc"] = r.mean_auc;
  j["mean_final_auc"] = r.mean_final_auc();
  j["final_auc"] = r.final_aucs();
  j["yes_counts"] = r.yes_counts();
  Json truths = Json::array();
  for (const auto& t : r.trials) truths.push_back(t.truth);
  j["truths"] = std::move(truths);
  j["mean_final_marginals"] = r.mean_final_marginals;
  if (include_timing) j["wall_clock_seconds"] = r.wall_clock_seconds;
  return j;
}

WeightMatrix dirichlet_weights(int n, double alpha, std::uint64_t seed) {
  if (n < 1 || !(alpha > 0.0)) throw InvalidArgument("dirichlet_weights needs n >= 1, alpha > 0");
  Rng rng(seed);
  std::gamma_distribution<double> draw(alpha, 1.0);
  Eigen::MatrixXd table = Eigen::MatrixXd::Zero(n + 1, n + 1);
  for (int j = 1; j <= n; ++j) {
    double total = 0.0;
    for (int i = 0; i <= n; ++i) {
      if (i == j) continue;
      // Dirichlet(1) is the normalized exponential; avoid the library sampler there.
      const double g = alpha == 1.0 ? -std::log1p(-uniform01(rng)) : draw(rng);
      table(i, j) = g;
      total += g;
    }
    for (int i = 0; i <= n; ++i)
      if (i != j) table(i, j) = std::max(std::log(table(i, j) / total), -kLogWeightBound);
  }
  return WeightMatrix::from_log_weights(table);
}

double mean_log_likelihood(const WeightMatrix& w, const EmpiricalTreeDistribution& trees) {
  if (trees.n() != w.n()) throw ShapeError("trees and weights differ in size");
  if (trees.empty()) throw InvalidArgument("no trees to score");
  const double log_z = log_partition(w);
  double s = 0.0;
  for (std::size_t k = 0; k < trees.size(); ++k) s += tree_score(w, trees.parents(k)) - log_z;
  return s / static_cast<double>(trees.size());
}

namespace {

double median(std::vector<double> v) {
  if (v.empty()) throw InvalidArgument("median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

}  // namespace

double WeightEstimationTable::median_fitted(std::size_t m, double beta) const {
  std::vector<double> v;
  for (const auto& r : rows)
    if (r.m == m && r.beta == beta) v.push_back(r.fitted_log_likelihood);
  return median(std::move(v));
}

double WeightEstimationTable::median_truth(std::size_t m, double beta) const {
  std::vector<double> v;
  for (const auto& r : rows)
    if (r.m == m && r.beta == beta) v.push_back(r.truth_log_likelihood);
  return median(std::move(v));
}

WeightEstimationTable run_weight_estimation_experiment(int n, const std::vector<std::size_t>& m_grid,
                                                       const std::vector<double>& beta_grid,
                                                       int trials, std::uint64_t seed,
                                                       std::size_t test_size, int threads) {
  if (n < 1 || trials < 1 || test_size < 1 || m_grid.empty() || beta_grid.empty())
    throw InvalidArgument("weight estimation needs n, trials, test_size >= 1 and non-empty grids");
  for (std::size_t m : m_grid)
    if (m < 1) throw InvalidArgument("sample counts must be >= 1");
  for (double b : beta_grid)
    if (!(b > 0.0)) throw InvalidArgument("beta values must be positive");

  const std::size_t per_trial = m_grid.size() * beta_grid.size();
  WeightEstimationTable out;
  out.n = n;
  out.rows.resize(per_trial * trials);
  parallel_for(trials, threads, [&](int t) {
    const std::uint64_t trial_seed = derive_seed(seed, seed_tag::kTrial, t);
    const WeightMatrix truth = dirichlet_weights(n, 1.0, derive_seed(trial_seed, seed_tag::kTruth));
    const auto test = sample_trees(truth, test_size, derive_seed(trial_seed, seed_tag::kTest));
    const double ll_truth = mean_log_likelihood(truth, test);
    std::size_t row = per_trial * t;
    for (std::size_t mi = 0; mi < m_grid.size(); ++mi) {
      const auto train = sample_trees(truth, m_grid[mi], derive_seed(trial_seed, seed_tag::kUpdate, mi));
      for (double beta : beta_grid) {
        InferenceConfig cfg;
        cfg.beta = Beta::fixed(beta);
        const FitResult fit = fit_weights(WeightMatrix(n), train, cfg);
        out.rows[row++] = {m_grid[mi], beta, t, mean_log_likelihood(fit.weights, test), ll_truth,
                           fit.converged};
      }
    }
  });
  return out;
}

void write_weight_estimation_csv(std::ostream& out, const WeightEstimationTable& t) {
  out << "m,beta,trial,fitted_ll,truth_ll,converged\n";
  const auto precision = out.precision(17);
  for (const auto& r : t.rows)
    out << r.m << ',' << r.beta << ',' << r.trial << ',' << r.fitted_log_likelihood << ','
        << r.truth_log_likelihood << ',' << (r.converged ? 1 : 0) << '\n';
  out.precision(precision);
}

nlohmann::json weight_estimation_summary(const WeightEstimationTable& t) {
  std::vector<std::pair<std::size_t, double>> cells;
  for (const auto& r : t.rows)
    if (std::find(cells.begin(), cells.end(), std::make_pair(r.m, r.beta)) == cells.end())
      cells.emplace_back(r.m, r.beta);
  Json rows = Json::array();
  for (const auto& [m, beta] : cells) {
    const double fitted = t.median_fitted(m, beta);
    const double truth = t.median_truth(m, beta);
    rows.push_back({{"m", m},
                    {"beta", beta},
                    {"median_fitted_ll", fitted},
                    {"median_truth_ll", truth},
                    {"relative_gap", (truth - fitted) / std::abs(truth)}});
  }
  return Json{{"n", t.n}, {"cells", std::move(rows)}};
}

}  // namespace taxon
