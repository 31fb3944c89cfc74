#pragma once

// Posterior updates over hierarchies.
//
// Edge answers are conjugate: they rescale a single weight. Path answers are
// not, so the posterior is approximated by importance-reweighting trees
// sampled from the current distribution and projecting the reweighted sample
// back onto the log-linear family. The projection minimizes the l1-regularized
// negative log-likelihood
//
//   L(Lambda) = -sum_T pi~(T) log P(T|Lambda) + beta * sum_ij |lambda_ij|
//
// by coordinate-separable steps that minimize the upper bound
//
//   F_ij(d) = -d P~_ij + (1/N) P_ij(Lambda) (exp(N d) - 1) + beta (|lambda_ij + d| - |lambda_ij|)
//
// on the change in L; each step therefore never increases L.

#include <compare>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "taxon/tree_dist.hpp"

namespace taxon {

enum class QuestionKind { Edge, Path };

// Edge: "is i the parent of j?"  Path: "is i an ancestor of j?"
struct Question {
  QuestionKind kind = QuestionKind::Path;
  int i = 0;
  int j = 1;

  auto operator<=>(const Question&) const = default;
};

// Throws InvalidArgument unless the question is admissible for n concepts.
void validate(const Question& q, int n);

// True iff the relation asked by q holds in the tree.
bool relation_holds(std::span<const int> parents, const Question& q);

struct AnswerRecord {
  Question question;
  std::vector<int> votes;  // individual 0/1 votes, may be empty
  int answer = 1;          // aggregated answer
  double gamma = 0.1;      // noise rate
  std::string timestamp;   // ISO-8601, informational only
};

// l1 coefficient: either fixed or derived from the sample-complexity bound.
struct Beta {
  bool automatic = false;
  double value = 0.01;  // beta when fixed, confidence delta when automatic

  static Beta fixed(double beta) { return {false, beta}; }
  static Beta automatic_with_confidence(double delta) { return {true, delta}; }
  double resolve(int n, std::size_t m) const;
};

enum class FitInit { Reset, WarmStart };

// Where the l1 penalty is centered: at Lambda = 0 (uniform), or at the
// weights passed to fit_weights as `init` (the previous posterior).
enum class PenaltyCenter { Zero, Previous };

struct InferenceConfig {
  std::size_t m = 10000;
  Beta beta = Beta::fixed(0.01);
  double thr = 1e-4;
  int max_inner_iterations = 500;
  double gamma_default = 0.1;
  double gamma_min = 1e-3;
  std::uint64_t seed = 0;
  // Sequential updates start from, and are penalized toward, the previous
  // weights. Reset with PenaltyCenter::Zero pulls every refit toward uniform.
  FitInit init = FitInit::WarmStart;
  PenaltyCenter penalty_center = PenaltyCenter::Previous;
  // Refit from a second, better-matched proposal when ESS < m / 100.
  bool resample_on_low_ess = true;
  // After each step, shift every column to its l1-optimal offset. P(T|Lambda)
  // is invariant to per-column shifts, so this only lowers the l1 term.
  bool center_columns = true;
  // Each step may be stretched by 2, 4, ... up to 2^max_step_doublings while
  // the exact loss keeps falling. 0 takes the bound minimizer as is.
  int max_step_doublings = 6;

  // Throws InvalidArgument on out-of-range fields.
  void validate() const;
  double clamp_gamma(double gamma) const;
};

struct UpdateDelta {
  Eigen::MatrixXd deltas;  // same shape as the weight table
  double max_abs() const { return deltas.cwiseAbs().maxCoeff(); }
};

// Multiplies W_ij by ((1-g)/g)^(2a-1). gamma = 0.5 is a no-op with a warning.
WeightMatrix update_edge_question(const WeightMatrix& w, const AnswerRecord& rec);

// Likelihood of the recorded answer given whether the relation holds.
double answer_likelihood(bool holds, int answer, double gamma);

// f(a | T) for a path (or edge) answer.
double path_likelihood(std::span<const int> parents, const AnswerRecord& rec);
inline double path_likelihood(const Arborescence& t, const AnswerRecord& rec) {
  return path_likelihood(t.parents(), rec);
}

// Importance reweighting by the answer likelihood, renormalized.
// Throws DegeneratePosterior if every weight vanishes.
EmpiricalTreeDistribution reweight_posterior(const EmpiricalTreeDistribution& samples,
                                             const AnswerRecord& rec);

// P~(e_ij) = sum of weights of the sampled trees containing e_ij.
EdgeMarginals empirical_edge_marginals(const EmpiricalTreeDistribution& d);

// -sum_T pi~(T) log P(T|Lambda) + beta ||Lambda - C||_1, summed tree by tree.
// C is `center` when given, zero otherwise.
double regularized_loss(const WeightMatrix& lambda, const EmpiricalTreeDistribution& d, double beta,
                        const WeightMatrix* center = nullptr);
// Same value from the empirical marginals: -<P~, Lambda> + log Z + beta ||Lambda - C||_1.
double regularized_loss(const WeightMatrix& lambda, const EdgeMarginals& empirical, double beta,
                        const WeightMatrix* center = nullptr);

// One coordinate of the bound on L(Lambda + delta) - L(Lambda).
double bound_term(double delta, double lambda, double p_empirical, double p_model, double beta,
                  int n);

// Per-coordinate minimizer of the bound among the three admissible candidates.
// With a penalty center C the l1 term is beta (|lambda + d - c| - |lambda - c|).
UpdateDelta delta_step(const WeightMatrix& lambda, const EdgeMarginals& empirical,
                       const EdgeMarginals& model, double beta,
                       const WeightMatrix* center = nullptr);
UpdateDelta delta_step(const WeightMatrix& lambda, const EmpiricalTreeDistribution& d, double beta);

struct FitResult {
  WeightMatrix weights;
  bool converged = false;
  int iterations = 0;
  double last_max_delta = 0.0;
  double beta = 0.0;
  std::vector<double> loss_trace;  // L at every iterate, when requested
};

// Shifts each column j by the s_j minimizing sum_i |lambda_ij + s_j - c_ij| (a
// median), choosing the smallest |s_j| among ties. Leaves P(T|Lambda) unchanged.
void center_columns(WeightMatrix& lambda, const WeightMatrix* center = nullptr);

// Iterates delta_step until the max entry change of the unstretched step is
// <= thr, or max_inner_iterations.
// Starts from zero (FitInit::Reset) or from `init` (FitInit::WarmStart); with
// PenaltyCenter::Previous the penalty is centered at `init` as well.
FitResult fit_weights(const WeightMatrix& init, const EmpiricalTreeDistribution& d,
                      const InferenceConfig& cfg, bool trace_loss = false);

// sqrt(log(n / delta) / m)
double auto_beta(int n, std::size_t m, double delta);

struct AnswerUpdate {
  WeightMatrix weights;
  bool informative = true;   // false when gamma = 0.5
  bool converged = true;
  int iterations = 0;
  double ess = 0.0;          // effective sample size of the reweighted sample
  bool resampled = false;
};

// One Bayesian step W(t-1) -> W(t). Edge answers update in closed form; path
// answers sample cfg.m trees (seeded by cfg.seed), reweight and refit.
AnswerUpdate apply_answer(const WeightMatrix& w, const AnswerRecord& rec, const InferenceConfig& cfg);

// Path step reusing trees already drawn from P(T|w).
AnswerUpdate apply_path_answer(const WeightMatrix& w, const EmpiricalTreeDistribution& prior_samples,
                               const AnswerRecord& rec, const InferenceConfig& cfg);

}  // namespace taxon
