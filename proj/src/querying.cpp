#include "taxon/querying.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>

#include "taxon/error.hpp"
#include "taxon/random.hpp"
#include "taxon/serialization.hpp"

namespace taxon {
namespace {

// Scores within this distance are treated as tied.
constexpr double kTieTolerance = 1e-12;

void check_gamma(double gamma) {
  if (!(gamma > 0.0 && gamma <= 0.5)) throw InvalidArgument("gamma must lie in (0, 0.5]");
}

double xlogx(double x) { return x > 0.0 ? x * std::log(x) : 0.0; }

// Entropy of the distinct-tree distribution {p_k} after multiplying by `in`
// on trees where the relation holds and by `out` elsewhere. s_in and a_in are
// sum p_k and sum p_k log p_k over those trees.
double reweighted_entropy(double s_in, double a_in, double s_out, double a_out, double in,
                          double out) {
  const double z = in * s_in + out * s_out;
  if (!(z > 0.0)) return 0.0;
  double acc = 0.0;
  if (in > 0.0) acc += in * (a_in + s_in * std::log(in));
  if (out > 0.0) acc += out * (a_out + s_out * std::log(out));
  return std::max(0.0, std::log(z) - acc / z);
}

struct Grouped {
  EmpiricalTreeDistribution trees;
  double a_total = 0.0;  // sum p log p
};

Grouped group(const EmpiricalTreeDistribution& samples) {
  Grouped g{samples.grouped(), 0.0};
  g.trees.normalize();
  for (std::size_t k = 0; k < g.trees.size(); ++k) g.a_total += xlogx(g.trees.weight(k));
  return g;
}

}  // namespace

QuestionPool::QuestionPool(int n) { grow(n); }

void QuestionPool::grow(int n) {
  if (n < n_) throw InvalidArgument("question pool cannot shrink");
  n_ = n;
  candidates_.clear();
  for (int i = 1; i <= n; ++i)
    for (int j = 1; j <= n; ++j)
      if (i != j) candidates_.push_back({QuestionKind::Path, i, j});
}

bool QuestionPool::contains(const Question& q) const {
  return std::binary_search(candidates_.begin(), candidates_.end(), q);
}

int QuestionPool::asked(const Question& q) const {
  const auto it = asked_.find(q);
  return it == asked_.end() ? 0 : it->second;
}

void QuestionPool::record_asked(const Question& q) { ++asked_[q]; }

void QuestionPool::set_asked_counts(std::map<Question, int> counts) {
  for (const auto& [q, c] : counts)
    if (c < 0) throw InvalidArgument("asked counts must be non-negative");
  asked_ = std::move(counts);
}

std::vector<Question> QuestionPool::available(bool allow_repeats) const {
  if (allow_repeats) return candidates_;
  std::vector<Question> out;
  for (const Question& q : candidates_)
    if (asked(q) == 0) out.push_back(q);
  return out;
}

std::string_view to_string(SelectionMode mode) {
  switch (mode) {
    case SelectionMode::WorstCaseGain: return "worst_case_gain";
    case SelectionMode::LiteralMaxEntropy: return "literal_max_entropy";
    case SelectionMode::Random: return "random";
  }
  return "?";
}

SelectionMode parse_selection_mode(std::string_view s) {
  if (s == "worst_case_gain" || s == "active") return SelectionMode::WorstCaseGain;
  if (s == "literal_max_entropy") return SelectionMode::LiteralMaxEntropy;
  if (s == "random") return SelectionMode::Random;
  throw InvalidArgument("unknown selection mode \"" + std::string(s) + "\"");
}

double hypothetical_entropy(const EmpiricalTreeDistribution& samples, const Question& q, int a,
                            double gamma) {
  check_gamma(gamma);
  validate(q, samples.n());
  const Grouped g = group(samples);
  double s_in = 0.0, a_in = 0.0;
  for (std::size_t k = 0; k < g.trees.size(); ++k) {
    if (!relation_holds(g.trees.parents(k), q)) continue;
    s_in += g.trees.weight(k);
    a_in += xlogx(g.trees.weight(k));
  }
  const double yes = answer_likelihood(true, a, gamma);
  const double no = answer_likelihood(false, a, gamma);
  return reweighted_entropy(s_in, a_in, 1.0 - s_in, g.a_total - a_in, yes, no);
}

std::vector<CandidateScore> score_candidates(const EmpiricalTreeDistribution& samples,
                                             const std::vector<Question>& candidates,
                                             double gamma) {
  check_gamma(gamma);
  const int n = samples.n();
  for (const Question& q : candidates) validate(q, n);
  const Grouped g = group(samples);

  // Per ordered pair (i, j): mass and p log p of trees where i is an ancestor
  // of j (path) or the parent of j (edge).
  const int side = n + 1;
  std::vector<double> path_s(side * side, 0.0), path_a(side * side, 0.0);
  std::vector<double> edge_s(side * side, 0.0), edge_a(side * side, 0.0);
  bool need_edges = std::any_of(candidates.begin(), candidates.end(),
                                [](const Question& q) { return q.kind == QuestionKind::Edge; });
  for (std::size_t k = 0; k < g.trees.size(); ++k) {
    const double p = g.trees.weight(k);
    const double pl = xlogx(p);
    const auto parents = g.trees.parents(k);
    for (int j = 1; j <= n; ++j) {
      if (need_edges) {
        edge_s[parents[j - 1] * side + j] += p;
        edge_a[parents[j - 1] * side + j] += pl;
      }
      for (int i = parents[j - 1]; i != 0; i = parents[i - 1]) {
        path_s[i * side + j] += p;
        path_a[i * side + j] += pl;
      }
    }
  }

  const double hi = 1.0 - gamma;
  const double lo = gamma;
  std::vector<CandidateScore> out;
  out.reserve(candidates.size());
  for (const Question& q : candidates) {
    const bool edge = q.kind == QuestionKind::Edge;
    const double s_in = (edge ? edge_s : path_s)[q.i * side + q.j];
    const double a_in = (edge ? edge_a : path_a)[q.i * side + q.j];
    const double s_out = std::max(0.0, 1.0 - s_in);
    const double a_out = g.a_total - a_in;
    out.push_back({q, reweighted_entropy(s_in, a_in, s_out, a_out, hi, lo),
                   reweighted_entropy(s_in, a_in, s_out, a_out, lo, hi)});
  }
  return out;
}

Selection select_question(const EmpiricalTreeDistribution& samples, const QuestionPool& pool,
                          const SelectionPolicy& policy, double gamma, std::uint64_t seed) {
  const std::vector<Question> options = pool.available(policy.allow_repeats);
  if (options.empty()) throw ExhaustedPool("no askable questions left in the pool");
  if (policy.mode == SelectionMode::Random) {
    Rng rng(seed);
    const auto k = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(options.size()));
    return {options[std::min(k, options.size() - 1)], 0.0};
  }
  const auto scores = score_candidates(samples, options, gamma);
  const bool minimize = policy.mode == SelectionMode::WorstCaseGain;
  // options are sorted, so keeping the first of any tie is lexicographic.
  std::size_t best = 0;
  for (std::size_t k = 1; k < scores.size(); ++k) {
    const double diff = scores[k].worst() - scores[best].worst();
    if (minimize ? diff < -kTieTolerance : diff > kTieTolerance) best = k;
  }
  return {scores[best].question, scores[best].worst()};
}

void write_selection_trace_csv(std::ostream& out, const std::vector<SelectionTraceRow>& rows) {
  out << "step,kind,i,j,score,mode\n";
  const auto precision = out.precision(17);
  for (const auto& r : rows)
    out << r.step << ',' << to_string(r.question.kind) << ',' << r.question.i << ','
        << r.question.j << ',' << r.score << ',' << to_string(r.mode) << '\n';
  out.precision(precision);
}

}  // namespace taxon
