#pragma once

// A live learning session: question scheduling, vote aggregation, imports,
// reports, and persistence.
//
// Every random draw is seeded from cfg.seed and the number of answers (or
// insertions) already applied, so replaying a session's history reproduces
// its weights exactly.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "taxon/inference.hpp"
#include "taxon/querying.hpp"
#include "taxon/serialization.hpp"
#include "taxon/tree_dist.hpp"

namespace taxon {

inline constexpr int kSnapshotVersion = 1;

struct SessionOptions {
  InferenceConfig cfg;
  SelectionPolicy policy;
  int budget = 100;
  int votes_per_question = 8;
  double uncertainty_threshold = 0.75;
  std::string path_template = "Is {child} a type of {parent}?";
  std::string edge_template = "Is {parent} the direct parent of {child}?";

  void validate() const;
};

// One entry of the session history, in the order it was applied.
struct SessionEvent {
  enum class Kind { Answer, Insert };
  Kind kind = Kind::Answer;
  AnswerRecord record;  // Answer
  bool tie = false;     // Answer: votes split evenly, weights left unchanged
  std::string label;    // Insert
};

struct SessionState {
  std::string id;
  ConceptDomain domain;
  SessionOptions options;
  WeightMatrix weights;
  std::vector<SessionEvent> history;
  QuestionPool pool;
  int budget = 0;
  std::optional<Question> pending;

  int n() const { return domain.size(); }
  int answered() const;
  std::vector<AnswerRecord> answer_log() const;
};

SessionState create_session(std::string id, ConceptDomain domain, SessionOptions options);

// The pending question, or a fresh selection that becomes pending. Throws
// BudgetExhausted when no questions remain and ExhaustedPool when the pool
// is empty.
Question next_question(SessionState& s);

// "Is {child} a type of {parent}?" with the question's labels filled in.
std::string question_text(const SessionState& s, const Question& q);

struct VoteBatch {
  Question question;
  std::vector<int> votes;
};

struct Aggregate {
  int answer = 1;
  double gamma = 0.5;
  bool tie = false;
};

// Majority answer; gamma is the minority fraction clamped to [gamma_min, 0.5],
// or gamma_default for a single vote. An even split is a tie with gamma 0.5.
Aggregate aggregate_votes(const std::vector<int>& votes, const InferenceConfig& cfg);

struct SubmitResult {
  AnswerRecord record;
  bool tie = false;
  bool converged = true;
  double ess = 0.0;
};

// Aggregates, records and applies one batch. The question must be pending,
// a pool member, or an edge question over the domain.
SubmitResult submit_votes(SessionState& s, const VoteBatch& batch);

// Applies an already-aggregated record (votes, if any, are re-aggregated).
SubmitResult submit_record(SessionState& s, AnswerRecord rec);

// Adds a concept by sample expansion and refit; the pool grows with it.
void insert_concept(SessionState& s, const std::string& label);

enum class ImportFormat { JsonLines, Csv };

// Infers the format from the extension: .csv is CSV, anything else JSON lines.
ImportFormat import_format_for(const std::filesystem::path& path);

// Replays records in order with submit semantics. CSV columns are
// kind,i_label,j_label,votes with votes as semicolon-separated bits. On any
// error, s is left untouched and the ParseError carries the 1-based line.
// Returns the number of records applied.
int import_answers(SessionState& s, std::string_view content, ImportFormat format);
int import_answers(SessionState& s, const std::filesystem::path& path);

struct NodeReport {
  int node = 0;
  int parent = 0;            // MAP parent
  double marginal = 0.0;     // P(e_parent,node)
  bool uncertain = false;    // marginal < threshold
  int second_parent = -1;    // most likely other parent, when uncertain
  double second_marginal = 0.0;
};

struct PosteriorReport {
  Arborescence map;
  EdgeMarginals marginals;
  std::vector<NodeReport> nodes;
  double threshold = 0.75;

  std::vector<int> uncertain_nodes() const;
};

PosteriorReport posterior_report(const SessionState& s);
Json report_json(const SessionState& s, const PosteriorReport& r);
// MAP tree with uncertain nodes filled red.
std::string report_dot(const SessionState& s, const PosteriorReport& r);

Json snapshot(const SessionState& s);
// Throws MigrationError on a different version and ParseError on malformed input.
SessionState restore(const Json& j);

// Rebuilds a session by replaying its history from the uniform prior.
SessionState replay(std::string id, ConceptDomain initial_domain, SessionOptions options,
                    const std::vector<SessionEvent>& history);

void to_json(Json& j, const SessionOptions& o);
void from_json(const Json& j, SessionOptions& o);
void to_json(Json& j, const SessionEvent& e);
void from_json(const Json& j, SessionEvent& e);

// Sessions on disk: <dir>/<id>/events.jsonl (append-only) and snapshot.json.
// The first event records the initial domain and options; the snapshot is
// rewritten after every commit and events past it are replayed on load.
class SessionStore {
 public:
  explicit SessionStore(std::filesystem::path dir);

  // TAXON_DATA_DIR when set, ./taxon-data otherwise.
  static std::filesystem::path default_dir();

  const std::filesystem::path& dir() const { return dir_; }
  bool exists(const std::string& id) const;
  std::vector<std::string> list() const;

  // Writes the creation event and first snapshot. Throws ConflictError if
  // the id is taken.
  void create(const SessionState& s);
  // Appends history[from..] as events and rewrites the snapshot.
  void commit(const SessionState& s, std::size_t from);
  // Throws NotFound when the session does not exist.
  SessionState load(const std::string& id) const;

 private:
  std::filesystem::path session_dir(const std::string& id) const;

  std::filesystem::path dir_;
};

// Random hex id.
std::string new_session_id();

}  // namespace taxon
