#include "taxon/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "taxon/error.hpp"
#include "taxon/log.hpp"
#include "taxon/random.hpp"

namespace taxon {
namespace {

// Model marginals this small are treated as this value inside logarithms.
constexpr double kMarginalFloor = 1e-300;

EdgeMarginals dense_marginals(const EmpiricalTreeDistribution& d) {
  const int n = d.n();
  EdgeMarginals out(n);
  for (std::size_t k = 0; k < d.size(); ++k) {
    const double wk = d.weight(k);
    if (wk == 0.0) continue;
    auto p = d.parents(k);
    for (int j = 1; j <= n; ++j) out(p[j - 1], j) += wk;
  }
  const double total = d.total_weight();
  if (total > 0.0 && total != 1.0) {
    for_each_edge(n, [&](int i, int j) { out(i, j) /= total; });
  }
  return out;
}

}  // namespace

void validate(const Question& q, int n) {
  if (q.i < 0 || q.i > n || q.j < 1 || q.j > n)
    throw InvalidArgument("question indices out of range");
  if (q.i == q.j) throw InvalidArgument("question relates a node to itself");
  if (q.kind == QuestionKind::Path && q.i == 0)
    throw InvalidArgument("path questions from the root are tautological");
}

bool relation_holds(std::span<const int> parents, const Question& q) {
  if (q.kind == QuestionKind::Edge) return parents[q.j - 1] == q.i;
  return contains_path(parents, q.i, q.j);
}

double Beta::resolve(int n, std::size_t m) const {
  return automatic ? auto_beta(n, m, value) : value;
}

void InferenceConfig::validate() const {
  if (m < 1) throw InvalidArgument("sample count m must be >= 1");
  if (beta.automatic) {
    if (!(beta.value > 0.0 && beta.value < 1.0))
      throw InvalidArgument("auto-beta confidence must lie in (0, 1)");
  } else if (!(beta.value > 0.0)) {
    throw InvalidArgument("beta must be strictly positive");
  }
  if (!(thr > 0.0)) throw InvalidArgument("thr must be positive");
  if (max_inner_iterations < 1) throw InvalidArgument("max_inner_iterations must be >= 1");
  if (max_step_doublings < 0) throw InvalidArgument("max_step_doublings must be >= 0");
  if (!(gamma_min > 0.0 && gamma_min <= gamma_default && gamma_default < 0.5))
    throw InvalidArgument("need 0 < gamma_min <= gamma_default < 0.5");
}

double InferenceConfig::clamp_gamma(double gamma) const {
  return std::clamp(gamma, gamma_min, 0.5);
}

WeightMatrix update_edge_question(const WeightMatrix& w, const AnswerRecord& rec) {
  const Question& q = rec.question;
  if (q.kind != QuestionKind::Edge) throw InvalidArgument("update_edge_question needs an edge answer");
  validate(q, w.n());
  if (!(rec.gamma > 0.0 && rec.gamma <= 0.5)) throw InvalidArgument("gamma must lie in (0, 0.5]");
  if (rec.gamma == 0.5) {
    warn("edge answer with gamma = 0.5 carries no information; weights unchanged");
    return w;
  }
  WeightMatrix out = w;
  const double sign = rec.answer == 1 ? 1.0 : -1.0;
  out.add(q.i, q.j, sign * std::log((1.0 - rec.gamma) / rec.gamma));
  return out;
}

double answer_likelihood(bool holds, int answer, double gamma) {
  return holds == (answer == 1) ? 1.0 - gamma : gamma;
}

double path_likelihood(std::span<const int> parents, const AnswerRecord& rec) {
  return answer_likelihood(relation_holds(parents, rec.question), rec.answer, rec.gamma);
}

EmpiricalTreeDistribution reweight_posterior(const EmpiricalTreeDistribution& samples,
                                             const AnswerRecord& rec) {
  validate(rec.question, samples.n());
  EmpiricalTreeDistribution out = samples;
  if (rec.gamma != 0.5) {
    for (std::size_t k = 0; k < out.size(); ++k)
      out.set_weight(k, out.weight(k) * path_likelihood(out.parents(k), rec));
  }
  out.normalize();
  return out;
}

EdgeMarginals empirical_edge_marginals(const EmpiricalTreeDistribution& d) {
  return dense_marginals(d);
}

namespace {

double l1_distance(const WeightMatrix& lambda, const WeightMatrix* center) {
  if (!center) return lambda.l1_norm();
  if (center->n() != lambda.n()) throw ShapeError("penalty center and weights differ in size");
  return (lambda.table() - center->table()).cwiseAbs().sum();
}

}  // namespace

double regularized_loss(const WeightMatrix& lambda, const EmpiricalTreeDistribution& d, double beta,
                        const WeightMatrix* center) {
  if (d.n() != lambda.n()) throw ShapeError("sample and weight sizes differ");
  const double log_z = log_partition(lambda);
  const double total = d.total_weight();
  double nll = 0.0;
  for (std::size_t k = 0; k < d.size(); ++k)
    nll -= d.weight(k) / total * (tree_score(lambda, d.parents(k)) - log_z);
  return nll + beta * l1_distance(lambda, center);
}

double regularized_loss(const WeightMatrix& lambda, const EdgeMarginals& empirical, double beta,
                        const WeightMatrix* center) {
  if (empirical.n() != lambda.n()) throw ShapeError("marginal and weight sizes differ");
  double dot = 0.0;
  for_each_edge(lambda.n(), [&](int i, int j) { dot += empirical(i, j) * lambda(i, j); });
  return -dot + log_partition(lambda) + beta * l1_distance(lambda, center);
}

double bound_term(double delta, double lambda, double p_empirical, double p_model, double beta,
                  int n) {
  return -delta * p_empirical + p_model / n * std::expm1(n * delta) +
         beta * (std::abs(lambda + delta) - std::abs(lambda));
}

UpdateDelta delta_step(const WeightMatrix& lambda, const EdgeMarginals& empirical,
                       const EdgeMarginals& model, double beta, const WeightMatrix* center) {
  const int n = lambda.n();
  if (center && center->n() != n) throw ShapeError("penalty center and weights differ in size");
  UpdateDelta out{Eigen::MatrixXd::Zero(n + 1, n + 1)};
  for_each_edge(n, [&](int i, int j) {
    // Only the offset from the center enters the bound.
    const double lam = lambda(i, j) - (center ? (*center)(i, j) : 0.0);
    const double pe = empirical(i, j);
    const double pm = std::max(model(i, j), kMarginalFloor);

    double best = -lam;
    double best_value = bound_term(best, lam, pe, pm, beta, n);
    auto consider = [&](double d) {
      const double v = bound_term(d, lam, pe, pm, beta, n);
      if (std::isfinite(v) && (v < best_value || !std::isfinite(best_value))) {
        best = d;
        best_value = v;
      }
    };
    if (pe - beta > 0.0) {
      const double d = std::log((pe - beta) / pm) / n;
      if (lam + d >= 0.0) consider(d);
    }
    if (pe + beta > 0.0) {
      const double d = std::log((pe + beta) / pm) / n;
      if (lam + d <= 0.0) consider(d);
    }
    out.deltas(i, j) = best;
  });
  return out;
}

UpdateDelta delta_step(const WeightMatrix& lambda, const EmpiricalTreeDistribution& d, double beta) {
  return delta_step(lambda, empirical_edge_marginals(d), edge_marginals(lambda), beta);
}

double auto_beta(int n, std::size_t m, double delta) {
  if (m < 1 || !(delta > 0.0 && delta < 1.0))
    throw InvalidArgument("auto_beta needs m >= 1 and 0 < delta < 1");
  return std::sqrt(std::log(n / delta) / static_cast<double>(m));
}

void center_columns(WeightMatrix& lambda, const WeightMatrix* center) {
  const int n = lambda.n();
  if (center && center->n() != n) throw ShapeError("penalty center and weights differ in size");
  std::vector<double> column;
  for (int j = 1; j <= n; ++j) {
    column.clear();
    for (int i = 0; i <= n; ++i)
      if (i != j) column.push_back(lambda(i, j) - (center ? (*center)(i, j) : 0.0));
    std::sort(column.begin(), column.end());
    const double lo = column[(column.size() - 1) / 2];
    const double hi = column[column.size() / 2];
    const double shift = std::clamp(0.0, -hi, -lo);
    if (shift == 0.0) continue;
    for (int i = 0; i <= n; ++i)
      if (i != j) lambda.add(i, j, shift);
  }
}

FitResult fit_weights(const WeightMatrix& init, const EmpiricalTreeDistribution& d,
                      const InferenceConfig& cfg, bool trace_loss) {
  cfg.validate();
  const int n = d.n();
  const bool anchored = cfg.penalty_center == PenaltyCenter::Previous;
  if ((cfg.init == FitInit::WarmStart || anchored) && init.n() != n)
    throw ShapeError("initial weights and samples differ in size");
  const WeightMatrix* center = anchored ? &init : nullptr;
  const EdgeMarginals empirical = empirical_edge_marginals(d);

  FitResult result;
  result.beta = cfg.beta.resolve(n, d.size());
  result.weights = cfg.init == FitInit::Reset ? WeightMatrix(n) : init;
  WeightMatrix& lam = result.weights;

  auto loss_at = [&](const WeightMatrix& x, double log_z) {
    double dot = 0.0;
    for_each_edge(n, [&](int i, int j) { dot += empirical(i, j) * x(i, j); });
    return -dot + log_z + result.beta * l1_distance(x, center);
  };
  auto stepped = [&](const UpdateDelta& step, double scale) {
    WeightMatrix x = lam;
    for_each_edge(n, [&](int i, int j) { x.add(i, j, scale * step.deltas(i, j)); });
    if (cfg.center_columns) center_columns(x, center);
    return x;
  };

  for (int it = 0; it < cfg.max_inner_iterations; ++it) {
    const PartitionResult pr = partition_and_marginals(lam);
    if (trace_loss) result.loss_trace.push_back(loss_at(lam, pr.log_z));
    const UpdateDelta step = delta_step(lam, empirical, pr.marginals, result.beta, center);

    WeightMatrix next = stepped(step, 1.0);
    const double size = (next.table() - lam.table()).cwiseAbs().maxCoeff();
    if (size > cfg.thr) {
      double best = loss_at(next, log_partition(next));
      for (int k = 1; k <= cfg.max_step_doublings; ++k) {
        WeightMatrix trial = stepped(step, std::ldexp(1.0, k));
        double l = std::numeric_limits<double>::infinity();
        try {
          l = loss_at(trial, log_partition(trial));
        } catch (const NumericalDegeneracy&) {
        }
        if (!(l < best)) break;
        best = l;
        next = std::move(trial);
      }
    }
    lam = std::move(next);
    result.iterations = it + 1;
    result.last_max_delta = size;
    if (size <= cfg.thr) {
      result.converged = true;
      break;
    }
  }
  if (trace_loss) result.loss_trace.push_back(regularized_loss(lam, empirical, result.beta, center));
  return result;
}

namespace {

// Importance sample from proposal q for target  P(T|w) f(a|T).
EmpiricalTreeDistribution reweight_from_proposal(const WeightMatrix& w, const WeightMatrix& q,
                                                 const AnswerRecord& rec, std::size_t m,
                                                 std::uint64_t seed) {
  const EmpiricalTreeDistribution draws = sample_trees(q, m, seed);
  std::vector<double> log_w(draws.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < draws.size(); ++k) {
    const auto p = draws.parents(k);
    log_w[k] = tree_score(w, p) - tree_score(q, p) + std::log(path_likelihood(p, rec));
    mx = std::max(mx, log_w[k]);
  }
  EmpiricalTreeDistribution out(draws.n());
  out.reserve(draws.size());
  for (std::size_t k = 0; k < draws.size(); ++k) out.add(draws.parents(k), std::exp(log_w[k] - mx));
  out.normalize();
  return out;
}

}  // namespace

AnswerUpdate apply_path_answer(const WeightMatrix& w, const EmpiricalTreeDistribution& prior_samples,
                               const AnswerRecord& rec_in, const InferenceConfig& cfg) {
  cfg.validate();
  AnswerRecord rec = rec_in;
  rec.gamma = cfg.clamp_gamma(rec.gamma);

  AnswerUpdate out;
  out.informative = rec.gamma < 0.5;
  const EmpiricalTreeDistribution posterior = reweight_posterior(prior_samples, rec);
  out.ess = posterior.effective_sample_size();

  FitResult fit = fit_weights(w, posterior, cfg);
  const double floor = static_cast<double>(prior_samples.size()) / 100.0;
  if (out.ess < floor) {
    std::ostringstream msg;
    msg << "effective sample size " << out.ess << " below m/100 = " << floor;
    if (cfg.resample_on_low_ess) {
      const auto second = reweight_from_proposal(w, fit.weights, rec, prior_samples.size(),
                                                 derive_seed(cfg.seed, seed_tag::kResample));
      const double ess2 = second.effective_sample_size();
      msg << "; resampled from the fitted weights (ESS " << ess2 << ")";
      if (ess2 > out.ess) {
        fit = fit_weights(w, second, cfg);
        out.ess = ess2;
        out.resampled = true;
      }
    }
    warn(msg.str());
  }
  out.weights = std::move(fit.weights);
  out.converged = fit.converged;
  out.iterations = fit.iterations;
  return out;
}

AnswerUpdate apply_answer(const WeightMatrix& w, const AnswerRecord& rec_in,
                          const InferenceConfig& cfg) {
  cfg.validate();
  validate(rec_in.question, w.n());
  if (rec_in.answer != 0 && rec_in.answer != 1) throw InvalidArgument("answer must be 0 or 1");
  AnswerRecord rec = rec_in;
  rec.gamma = cfg.clamp_gamma(rec.gamma);

  if (rec.question.kind == QuestionKind::Edge) {
    AnswerUpdate out;
    out.weights = update_edge_question(w, rec);
    out.informative = rec.gamma < 0.5;
    return out;
  }
  const auto samples = sample_trees(w, cfg.m, cfg.seed);
  return apply_path_answer(w, samples, rec, cfg);
}

}  // namespace taxon
