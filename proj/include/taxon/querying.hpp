#pragma once

// Active question selection over a sampled posterior.
//
// For a path question q and hypothetical answer a, the sampled trees are
// reweighted by the answer likelihood and the entropy of the result (over
// distinct trees) measures how much uncertainty would remain. WorstCaseGain
// picks the question whose worse answer leaves the least entropy.

#include <cstdint>
#include <map>
#include <ostream>
#include <string_view>
#include <vector>

#include "taxon/inference.hpp"
#include "taxon/tree_dist.hpp"

namespace taxon {

class QuestionPool {
 public:
  QuestionPool() = default;
  // Every path question (i, j) with i, j in 1..n, i != j.
  explicit QuestionPool(int n);

  int n() const { return n_; }
  const std::vector<Question>& candidates() const { return candidates_; }
  bool contains(const Question& q) const;
  bool empty() const { return candidates_.empty(); }

  int asked(const Question& q) const;
  void record_asked(const Question& q);
  const std::map<Question, int>& asked_counts() const { return asked_; }
  void set_asked_counts(std::map<Question, int> counts);

  // Candidates still askable under the repeat rule, in lexicographic order.
  std::vector<Question> available(bool allow_repeats) const;

  // Extends the pool to n' > n concepts; asked counts are kept.
  void grow(int n);

 private:
  int n_ = 0;
  std::vector<Question> candidates_;
  std::map<Question, int> asked_;
};

enum class SelectionMode { WorstCaseGain, LiteralMaxEntropy, Random };

std::string_view to_string(SelectionMode mode);
// Accepts the names above and the aliases "active" and "random".
SelectionMode parse_selection_mode(std::string_view s);

struct SelectionPolicy {
  SelectionMode mode = SelectionMode::WorstCaseGain;
  bool allow_repeats = true;
};

// Entropy (nats, over distinct trees) of the samples reweighted for answer a
// to q with noise rate gamma in (0, 0.5].
double hypothetical_entropy(const EmpiricalTreeDistribution& samples, const Question& q, int a,
                            double gamma);

struct CandidateScore {
  Question question;
  double entropy_yes = 0.0;
  double entropy_no = 0.0;
  double worst() const { return entropy_yes > entropy_no ? entropy_yes : entropy_no; }
};

// hypothetical_entropy for both answers of every candidate, from one pass over
// the distinct trees.
std::vector<CandidateScore> score_candidates(const EmpiricalTreeDistribution& samples,
                                             const std::vector<Question>& candidates, double gamma);

struct Selection {
  Question question;
  double score = 0.0;  // max entropy of the chosen question; 0 for Random
};

// Throws ExhaustedPool when nothing is askable.
Selection select_question(const EmpiricalTreeDistribution& samples, const QuestionPool& pool,
                          const SelectionPolicy& policy, double gamma, std::uint64_t seed);

struct SelectionTraceRow {
  int step = 0;
  Question question;
  double score = 0.0;
  SelectionMode mode = SelectionMode::WorstCaseGain;
};

// Header: step,kind,i,j,score,mode
void write_selection_trace_csv(std::ostream& out, const std::vector<SelectionTraceRow>& rows);

}  // namespace taxon
