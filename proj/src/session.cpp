#include "taxon/session.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>

#include "taxon/error.hpp"
#include "taxon/growth.hpp"
#include "taxon/random.hpp"

namespace taxon {
namespace fs = std::filesystem;

namespace {

void replace_all(std::string& s, std::string_view key, const std::string& value) {
  for (auto pos = s.find(key); pos != std::string::npos; pos = s.find(key, pos + value.size()))
    s.replace(pos, key.size(), value);
}

bool allowed_question(const SessionState& s, const Question& q) {
  if (s.pending && *s.pending == q) return true;
  return q.kind == QuestionKind::Edge || s.pool.contains(q);
}

// Seeds for the k-th history entry.
std::uint64_t step_seed(const SessionState& s, std::uint64_t tag) {
  return derive_seed(s.options.cfg.seed, tag, s.history.size());
}

void apply_event(SessionState& s, const SessionEvent& e) {
  if (e.kind == SessionEvent::Kind::Insert)
    insert_concept(s, e.label);
  else
    submit_record(s, e.record);
}

std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

AnswerRecord parse_csv_row(const SessionState& s, std::string_view line, int line_no) {
  const auto cols = split(line, ',');
  if (cols.size() != 4) throw ParseError("expected 4 columns: kind,i_label,j_label,votes", line_no);
  AnswerRecord rec;
  try {
    rec.question.kind = parse_question_kind(trim(cols[0]));
  } catch (const ParseError& e) {
    throw ParseError(e.what(), line_no);
  }
  const std::string i_label = trim(cols[1]);
  const std::string j_label = trim(cols[2]);
  rec.question.i = s.domain.index_of(i_label);
  rec.question.j = s.domain.index_of(j_label);
  if (rec.question.i < 0) throw ParseError("unknown concept \"" + i_label + "\"", line_no);
  if (rec.question.j < 0) throw ParseError("unknown concept \"" + j_label + "\"", line_no);
  for (const std::string& v : split(trim(cols[3]), ';')) {
    const std::string bit = trim(v);
    if (bit != "0" && bit != "1") throw ParseError("votes must be 0 or 1, separated by ';'", line_no);
    rec.votes.push_back(bit == "1");
  }
  return rec;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file_atomic(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << content;
    if (!out) throw Error("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

void check_id(const std::string& id) {
  const bool ok = !id.empty() && id.size() <= 64 && std::all_of(id.begin(), id.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_';
  });
  if (!ok) throw InvalidArgument("session id must be 1-64 characters of [A-Za-z0-9_-]");
}

std::string_view to_string(FitInit init) { return init == FitInit::Reset ? "reset" : "warm_start"; }
std::string_view to_string(PenaltyCenter c) { return c == PenaltyCenter::Zero ? "zero" : "previous"; }

template <class T>
void read_opt(const Json& j, const char* key, T& out) {
  if (const auto it = j.find(key); it != j.end() && !it->is_null()) {
    try {
      out = it->get<T>();
    } catch (const Json::exception&) {
      throw ParseError(std::string("field \"") + key + "\" has the wrong type", 0);
    }
  }
}

}  // namespace

void SessionOptions::validate() const {
  cfg.validate();
  if (budget < 0) throw InvalidArgument("budget must be >= 0");
  if (votes_per_question < 1) throw InvalidArgument("votes_per_question must be >= 1");
  if (!(uncertainty_threshold >= 0.0 && uncertainty_threshold <= 1.0))
    throw InvalidArgument("uncertainty_threshold must lie in [0, 1]");
}

int SessionState::answered() const {
  return static_cast<int>(std::count_if(history.begin(), history.end(), [](const SessionEvent& e) {
    return e.kind == SessionEvent::Kind::Answer;
  }));
}

std::vector<AnswerRecord> SessionState::answer_log() const {
  std::vector<AnswerRecord> out;
  for (const auto& e : history)
    if (e.kind == SessionEvent::Kind::Answer) out.push_back(e.record);
  return out;
}

SessionState create_session(std::string id, ConceptDomain domain, SessionOptions options) {
  check_id(id);
  if (domain.size() < 1) throw InvalidArgument("session needs at least one concept");
  options.validate();
  SessionState s;
  s.id = std::move(id);
  s.weights = WeightMatrix(domain.size());
  s.pool = QuestionPool(domain.size());
  s.budget = options.budget;
  s.domain = std::move(domain);
  s.options = std::move(options);
  return s;
}

Question next_question(SessionState& s) {
  if (s.pending) return *s.pending;
  if (s.budget <= 0) throw BudgetExhausted("question budget exhausted");
  const auto& cfg = s.options.cfg;
  EmpiricalTreeDistribution samples(s.n());
  if (s.options.policy.mode != SelectionMode::Random)
    samples = sample_trees(s.weights, cfg.m, step_seed(s, seed_tag::kSelect));
  const Selection sel = select_question(samples, s.pool, s.options.policy, cfg.gamma_default,
                                        step_seed(s, seed_tag::kSelect));
  s.pending = sel.question;
  return sel.question;
}

std::string question_text(const SessionState& s, const Question& q) {
  std::string text = q.kind == QuestionKind::Path ? s.options.path_template : s.options.edge_template;
  replace_all(text, "{child}", s.domain.label(q.j));
  replace_all(text, "{parent}", s.domain.label(q.i));
  return text;
}

Aggregate aggregate_votes(const std::vector<int>& votes, const InferenceConfig& cfg) {
  if (votes.empty()) throw InvalidArgument("a vote batch needs at least one vote");
  int yes = 0;
  for (int v : votes) {
    if (v != 0 && v != 1) throw InvalidArgument("votes must be 0 or 1");
    yes += v;
  }
  const int total = static_cast<int>(votes.size());
  const int no = total - yes;
  if (yes == no) return {1, 0.5, true};
  if (total == 1) return {yes, cfg.gamma_default, false};
  return {yes > no ? 1 : 0, cfg.clamp_gamma(static_cast<double>(std::min(yes, no)) / total), false};
}

SubmitResult submit_votes(SessionState& s, const VoteBatch& batch) {
  if (batch.votes.empty() || static_cast<int>(batch.votes.size()) > s.options.votes_per_question)
    throw InvalidArgument("a batch needs between 1 and " + std::to_string(s.options.votes_per_question) +
                          " votes");
  AnswerRecord rec;
  rec.question = batch.question;
  rec.votes = batch.votes;
  rec.timestamp = utc_timestamp();
  return submit_record(s, std::move(rec));
}

SubmitResult submit_record(SessionState& s, AnswerRecord rec) {
  validate(rec.question, s.n());
  if (!allowed_question(s, rec.question))
    throw InvalidArgument("question is neither pending nor in the pool");
  if (s.budget <= 0) throw BudgetExhausted("question budget exhausted");
  const InferenceConfig& cfg = s.options.cfg;

  bool tie = false;
  if (!rec.votes.empty()) {
    const Aggregate agg = aggregate_votes(rec.votes, cfg);
    rec.answer = agg.answer;
    rec.gamma = agg.gamma;
    tie = agg.tie;
  } else {
    if (rec.answer != 0 && rec.answer != 1) throw InvalidArgument("answer must be 0 or 1");
    rec.gamma = std::isnan(rec.gamma) ? cfg.gamma_default : cfg.clamp_gamma(rec.gamma);
  }

  SubmitResult out;
  out.tie = tie;
  if (!tie) {
    InferenceConfig step = cfg;
    step.seed = step_seed(s, seed_tag::kUpdate);
    AnswerUpdate up = apply_answer(s.weights, rec, step);
    s.weights = std::move(up.weights);
    out.converged = up.converged;
    out.ess = up.ess;
  }
  s.history.push_back({SessionEvent::Kind::Answer, rec, tie, {}});
  s.pool.record_asked(rec.question);
  --s.budget;
  if (s.pending && *s.pending == rec.question) s.pending.reset();
  out.record = std::move(rec);
  return out;
}

void insert_concept(SessionState& s, const std::string& label) {
  InsertionRequest req{label, s.options.cfg.m, s.options.cfg};
  req.cfg.seed = step_seed(s, seed_tag::kInsert);
  InsertionResult r = taxon::insert_concept(s.domain, s.weights, req);
  s.domain = std::move(r.domain);
  s.weights = std::move(r.weights);
  s.pool.grow(s.n());
  s.pending.reset();
  s.history.push_back({SessionEvent::Kind::Insert, {}, false, label});
}

ImportFormat import_format_for(const fs::path& path) {
  return path.extension() == ".csv" ? ImportFormat::Csv : ImportFormat::JsonLines;
}

int import_answers(SessionState& s, std::string_view content, ImportFormat format) {
  SessionState work = s;
  std::istringstream in{std::string(content)};
  std::string line;
  int line_no = 0;
  int applied = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    AnswerRecord rec;
    if (format == ImportFormat::Csv) {
      if (!header_seen) {
        header_seen = true;
        if (trim(line).rfind("kind,", 0) == 0) continue;
      }
      rec = parse_csv_row(work, line, line_no);
    } else {
      rec = parse_answer_line(line, line_no);
    }
    try {
      if (!rec.votes.empty() && static_cast<int>(rec.votes.size()) > work.options.votes_per_question)
        throw InvalidArgument("more than votes_per_question votes");
      submit_record(work, std::move(rec));
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError(e.what(), line_no);
    }
    ++applied;
  }
  s = std::move(work);
  return applied;
}

int import_answers(SessionState& s, const fs::path& path) {
  return import_answers(s, read_file(path), import_format_for(path));
}

std::vector<int> PosteriorReport::uncertain_nodes() const {
  std::vector<int> out;
  for (const auto& n : nodes)
    if (n.uncertain) out.push_back(n.node);
  return out;
}

PosteriorReport posterior_report(const SessionState& s) {
  PosteriorReport r;
  r.map = map_tree(s.weights);
  r.marginals = edge_marginals(s.weights);
  r.threshold = s.options.uncertainty_threshold;
  for (int j = 1; j <= s.n(); ++j) {
    NodeReport node;
    node.node = j;
    node.parent = r.map.parent(j);
    node.marginal = r.marginals(node.parent, j);
    node.uncertain = node.marginal < r.threshold;
    if (node.uncertain) {
      for (int i = 0; i <= s.n(); ++i) {
        if (i == j || i == node.parent) continue;
        if (node.second_parent < 0 || r.marginals(i, j) > node.second_marginal) {
          node.second_parent = i;
          node.second_marginal = r.marginals(i, j);
        }
      }
    }
    r.nodes.push_back(node);
  }
  return r;
}

Json report_json(const SessionState& s, const PosteriorReport& r) {
  Json nodes = Json::array();
  for (const auto& n : r.nodes) {
    Json x{{"node", n.node},
           {"label", s.domain.label(n.node)},
           {"parent", n.parent},
           {"parent_label", s.domain.label(n.parent)},
           {"marginal", n.marginal},
           {"uncertain", n.uncertain}};
    if (n.second_parent >= 0) {
      x["second_parent"] = n.second_parent;
      x["second_parent_label"] = s.domain.label(n.second_parent);
      x["second_marginal"] = n.second_marginal;
    }
    nodes.push_back(std::move(x));
  }
  return Json{{"id", s.id},
              {"n", s.n()},
              {"labels", s.domain.labels()},
              {"map", r.map},
              {"marginals", r.marginals},
              {"threshold", r.threshold},
              {"nodes", std::move(nodes)},
              {"uncertain", r.uncertain_nodes()},
              {"answered", s.answered()},
              {"budget", s.budget}};
}

std::string report_dot(const SessionState& s, const PosteriorReport& r) {
  return to_dot(r.map, s.domain, r.uncertain_nodes());
}

void to_json(Json& j, const SessionOptions& o) {
  const auto& c = o.cfg;
  j = Json{{"m", c.m},
           {"thr", c.thr},
           {"max_inner_iterations", c.max_inner_iterations},
           {"gamma_default", c.gamma_default},
           {"gamma_min", c.gamma_min},
           {"seed", c.seed},
           {"init", to_string(c.init)},
           {"penalty_center", to_string(c.penalty_center)},
           {"resample_on_low_ess", c.resample_on_low_ess},
           {"center_columns", c.center_columns},
           {"max_step_doublings", c.max_step_doublings},
           {"strategy", to_string(o.policy.mode)},
           {"allow_repeats", o.policy.allow_repeats},
           {"budget", o.budget},
           {"votes_per_question", o.votes_per_question},
           {"uncertainty_threshold", o.uncertainty_threshold},
           {"path_template", o.path_template},
           {"edge_template", o.edge_template}};
  if (c.beta.automatic)
    j["beta"] = Json{{"auto", c.beta.value}};
  else
    j["beta"] = c.beta.value;
}

void from_json(const Json& j, SessionOptions& o) {
  if (!j.is_object()) throw ParseError("options must be a JSON object", 0);
  auto& c = o.cfg;
  read_opt(j, "m", c.m);
  read_opt(j, "thr", c.thr);
  read_opt(j, "max_inner_iterations", c.max_inner_iterations);
  read_opt(j, "gamma_default", c.gamma_default);
  read_opt(j, "gamma_min", c.gamma_min);
  read_opt(j, "seed", c.seed);
  read_opt(j, "resample_on_low_ess", c.resample_on_low_ess);
  read_opt(j, "center_columns", c.center_columns);
  read_opt(j, "max_step_doublings", c.max_step_doublings);
  read_opt(j, "allow_repeats", o.policy.allow_repeats);
  read_opt(j, "budget", o.budget);
  read_opt(j, "votes_per_question", o.votes_per_question);
  read_opt(j, "uncertainty_threshold", o.uncertainty_threshold);
  read_opt(j, "path_template", o.path_template);
  read_opt(j, "edge_template", o.edge_template);
  try {
    std::string name;
    read_opt(j, "init", name);
    if (!name.empty()) {
      if (name != "reset" && name != "warm_start") throw ParseError("init must be reset or warm_start", 0);
      c.init = name == "reset" ? FitInit::Reset : FitInit::WarmStart;
    }
    name.clear();
    read_opt(j, "penalty_center", name);
    if (!name.empty()) {
      if (name != "zero" && name != "previous") throw ParseError("penalty_center must be zero or previous", 0);
      c.penalty_center = name == "zero" ? PenaltyCenter::Zero : PenaltyCenter::Previous;
    }
    name.clear();
    read_opt(j, "strategy", name);
    if (!name.empty()) o.policy.mode = parse_selection_mode(name);
  } catch (const InvalidArgument& e) {
    throw ParseError(e.what(), 0);
  }
  if (const auto b = j.find("beta"); b != j.end() && !b->is_null()) {
    if (b->is_number())
      c.beta = Beta::fixed(b->get<double>());
    else if (b->is_object() && b->contains("auto") && (*b)["auto"].is_number())
      c.beta = Beta::automatic_with_confidence((*b)["auto"].get<double>());
    else
      throw ParseError("beta must be a number or {\"auto\": delta}", 0);
  }
}

void to_json(Json& j, const SessionEvent& e) {
  if (e.kind == SessionEvent::Kind::Insert) {
    j = Json{{"event", "insert"}, {"label", e.label}};
    return;
  }
  j = e.record;
  j["event"] = "answer";
  j["tie"] = e.tie;
}

void from_json(const Json& j, SessionEvent& e) {
  if (!j.is_object() || !j.contains("event") || !j["event"].is_string())
    throw ParseError("event needs an \"event\" field", 0);
  const std::string kind = j["event"].get<std::string>();
  if (kind == "insert") {
    e = {};
    e.kind = SessionEvent::Kind::Insert;
    if (!j.contains("label") || !j["label"].is_string()) throw ParseError("insert needs a label", 0);
    e.label = j["label"].get<std::string>();
  } else if (kind == "answer") {
    e = {};
    e.record = j.get<AnswerRecord>();
    read_opt(j, "tie", e.tie);
  } else {
    throw ParseError("unknown event \"" + kind + "\"", 0);
  }
}

Json snapshot(const SessionState& s) {
  return Json{{"version", kSnapshotVersion},
              {"id", s.id},
              {"labels", s.domain.labels()},
              {"options", s.options},
              {"weights", s.weights},
              {"history", s.history},
              {"budget", s.budget},
              {"pending", s.pending ? Json(*s.pending) : Json(nullptr)}};
}

SessionState restore(const Json& j) {
  if (!j.is_object()) throw ParseError("snapshot must be a JSON object", 0);
  if (!j.contains("version") || !j["version"].is_number_integer())
    throw ParseError("snapshot has no version", 0);
  if (j["version"].get<int>() != kSnapshotVersion)
    throw MigrationError("snapshot version " + std::to_string(j["version"].get<int>()) +
                         " is not supported (expected " + std::to_string(kSnapshotVersion) + ")");
  try {
    SessionState s;
    s.id = j.at("id").get<std::string>();
    check_id(s.id);
    s.domain = ConceptDomain(j.at("labels").get<std::vector<std::string>>());
    s.options = j.at("options").get<SessionOptions>();
    s.options.validate();
    s.weights = j.at("weights").get<WeightMatrix>();
    if (s.weights.n() != s.domain.size()) throw ParseError("weights and labels differ in size", 0);
    s.history = j.at("history").get<std::vector<SessionEvent>>();
    s.budget = j.at("budget").get<int>();
    if (s.budget < 0) throw ParseError("budget must be >= 0", 0);
    s.pool = QuestionPool(s.domain.size());
    for (const auto& e : s.history)
      if (e.kind == SessionEvent::Kind::Answer) s.pool.record_asked(e.record.question);
    if (!j.at("pending").is_null()) {
      const Question q = j["pending"].get<Question>();
      validate(q, s.n());
      s.pending = q;
    }
    return s;
  } catch (const ParseError&) {
    throw;
  } catch (const Json::exception& e) {
    throw ParseError(e.what(), 0);
  } catch (const Error& e) {
    throw ParseError(e.what(), 0);
  }
}

SessionState replay(std::string id, ConceptDomain initial_domain, SessionOptions options,
                    const std::vector<SessionEvent>& history) {
  SessionState s = create_session(std::move(id), std::move(initial_domain), std::move(options));
  for (const auto& e : history) apply_event(s, e);
  return s;
}

SessionStore::SessionStore(fs::path dir) : dir_(std::move(dir)) {}

fs::path SessionStore::default_dir() {
  if (const char* env = std::getenv("TAXON_DATA_DIR"); env && *env) return env;
  return "taxon-data";
}

fs::path SessionStore::session_dir(const std::string& id) const {
  check_id(id);
  return dir_ / id;
}

bool SessionStore::exists(const std::string& id) const {
  return fs::exists(session_dir(id) / "events.jsonl");
}

std::vector<std::string> SessionStore::list() const {
  std::vector<std::string> out;
  if (!fs::exists(dir_)) return out;
  for (const auto& entry : fs::directory_iterator(dir_))
    if (entry.is_directory() && fs::exists(entry.path() / "events.jsonl"))
      out.push_back(entry.path().filename().string());
  std::sort(out.begin(), out.end());
  return out;
}

void SessionStore::create(const SessionState& s) {
  if (!s.history.empty()) throw InvalidArgument("only fresh sessions can be created in a store");
  const fs::path d = session_dir(s.id);
  if (fs::exists(d / "events.jsonl")) throw ConflictError("session \"" + s.id + "\" already exists");
  fs::create_directories(d);
  const Json created{{"event", "create"},
                     {"id", s.id},
                     {"labels", s.domain.labels()},
                     {"options", s.options},
                     {"ts", utc_timestamp()}};
  write_file_atomic(d / "events.jsonl", created.dump() + "\n");
  write_file_atomic(d / "snapshot.json", snapshot(s).dump());
}

void SessionStore::commit(const SessionState& s, std::size_t from) {
  const fs::path d = session_dir(s.id);
  if (!fs::exists(d / "events.jsonl")) throw NotFound("session \"" + s.id + "\" not found");
  if (from < s.history.size()) {
    std::ofstream out(d / "events.jsonl", std::ios::app | std::ios::binary);
    for (std::size_t k = from; k < s.history.size(); ++k) out << Json(s.history[k]).dump() << '\n';
    out.flush();
    if (!out) throw Error("cannot append to the event log of \"" + s.id + "\"");
  }
  write_file_atomic(d / "snapshot.json", snapshot(s).dump());
}

SessionState SessionStore::load(const std::string& id) const {
  const fs::path d = session_dir(id);
  if (!fs::exists(d / "events.jsonl")) throw NotFound("session \"" + id + "\" not found");

  std::istringstream events(read_file(d / "events.jsonl"));
  std::string line;
  int line_no = 0;
  Json created;
  std::vector<SessionEvent> history;
  while (std::getline(events, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const Json j = Json::parse(line);
      if (line_no == 1)
        created = j;
      else
        history.push_back(j.get<SessionEvent>());
    } catch (const Json::exception& e) {
      throw ParseError(e.what(), line_no);
    } catch (const ParseError& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  if (!created.is_object() || created.value("event", "") != "create")
    throw ParseError("event log does not start with a create event", 1);

  if (fs::exists(d / "snapshot.json")) {
    Json snap;
    try {
      snap = Json::parse(read_file(d / "snapshot.json"));
    } catch (const Json::exception& e) {
      throw ParseError(std::string("corrupt snapshot: ") + e.what(), 0);
    }
    SessionState s = restore(snap);
    if (s.history.size() > history.size()) throw ParseError("snapshot is ahead of the event log", 0);
    for (std::size_t k = s.history.size(); k < history.size(); ++k) apply_event(s, history[k]);
    return s;
  }
  try {
    return replay(id, ConceptDomain(created.at("labels").get<std::vector<std::string>>()),
                  created.at("options").get<SessionOptions>(), history);
  } catch (const Json::exception& e) {
    throw ParseError(e.what(), 1);
  }
}

std::string new_session_id() {
  std::random_device rd;
  const std::uint64_t x = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << x;
  return os.str();
}

}  // namespace taxon
