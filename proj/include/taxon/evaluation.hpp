#pragma once

// Simulated annotators, edge AUC, and the synthetic recovery and
// weight-estimation experiments.

#include <cstdint>
#include <functional>
#include <ostream>
#include <vector>

#include <json.hpp>

#include "taxon/inference.hpp"
#include "taxon/querying.hpp"
#include "taxon/random.hpp"
#include "taxon/tree_dist.hpp"

namespace taxon {

// Answers questions about a fixed ground-truth tree, flipping each answer
// with probability `noise`.
class SimulatedWorker {
 public:
  SimulatedWorker(Arborescence truth, double noise, std::uint64_t seed, double gamma_min = 1e-3);

  const Arborescence& truth() const { return truth_; }
  double noise() const { return noise_; }
  double gamma_min() const { return gamma_min_; }
  Rng& rng() { return rng_; }

 private:
  Arborescence truth_;
  double noise_;
  double gamma_min_;
  Rng rng_;
};

// One-vote answer; gamma is max(noise, gamma_min).
AnswerRecord answer_query(SimulatedWorker& worker, const Question& q);

// ROC AUC of P(e_ij) against membership in `truth` over every admissible
// (i, j), by the rank statistic with ties counted as 1/2. Returns 1 when there
// are no negatives (N = 1).
double auc_edges(const EdgeMarginals& marginals, const Arborescence& truth);

struct ExperimentSpec {
  int n = 5;
  double noise = 0.0;
  SelectionPolicy strategy;
  int budget = 50;
  std::size_t m = 10000;
  double beta = 0.01;
  FitInit init = FitInit::WarmStart;
  PenaltyCenter penalty_center = PenaltyCenter::Previous;
  int trials = 10;
  std::uint64_t seed = 0;
  int threads = 0;  // 0: one per hardware thread

  void validate() const;
};

struct TrialRecord {
  Arborescence truth;
  std::vector<Question> questions;
  std::vector<int> answers;
  std::vector<double> auc;  // after each answer
  int yes_count = 0;
  EdgeMarginals final_marginals;
};

struct ExperimentResult {
  ExperimentSpec spec;
  std::vector<TrialRecord> trials;
  std::vector<double> mean_auc;      // per question index, averaged over trials
  EdgeMarginals mean_final_marginals;
  double wall_clock_seconds = 0.0;

  double mean_final_auc() const;
  std::vector<int> yes_counts() const;
  std::vector<double> final_aucs() const;
};

ExperimentResult run_recovery_experiment(const ExperimentSpec& spec);

// One row per trial and question index: trial,step,kind,i,j,answer,auc
void write_recovery_csv(std::ostream& out, const ExperimentResult& r);
// Summary; wall clock only when include_timing is set, so that equal specs
// serialize identically.
nlohmann::json recovery_summary(const ExperimentResult& r, bool include_timing = false);

// Column-stochastic weights with each child's parent distribution drawn from
// a symmetric Dirichlet(alpha).
WeightMatrix dirichlet_weights(int n, double alpha, std::uint64_t seed);

// Mean of log P(T|w) over the trees (weights ignored).
double mean_log_likelihood(const WeightMatrix& w, const EmpiricalTreeDistribution& trees);

struct WeightEstimationRow {
  std::size_t m = 0;
  double beta = 0.0;
  int trial = 0;
  double fitted_log_likelihood = 0.0;
  double truth_log_likelihood = 0.0;
  bool converged = true;
};

struct WeightEstimationTable {
  int n = 0;
  std::vector<WeightEstimationRow> rows;

  // Median over trials of the fitted (or ground-truth) held-out log-likelihood.
  double median_fitted(std::size_t m, double beta) const;
  double median_truth(std::size_t m, double beta) const;
};

WeightEstimationTable run_weight_estimation_experiment(int n, const std::vector<std::size_t>& m_grid,
                                                       const std::vector<double>& beta_grid,
                                                       int trials, std::uint64_t seed,
                                                       std::size_t test_size = 1000,
                                                       int threads = 0);

// m,beta,trial,fitted_ll,truth_ll,converged
void write_weight_estimation_csv(std::ostream& out, const WeightEstimationTable& t);
nlohmann::json weight_estimation_summary(const WeightEstimationTable& t);

// Runs fn(k) for k in [0, count) on up to `threads` workers (0: hardware).
void parallel_for(int count, int threads, const std::function<void(int)>& fn);

}  // namespace taxon
