#include "taxon/serialization.hpp"

#include <chrono>
#include <cmath>
#include <ctime>

#include "taxon/error.hpp"

namespace taxon {
namespace {

int get_int(const Json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end()) throw ParseError(std::string("missing field \"") + key + "\"", 0);
  if (!it->is_number_integer()) throw ParseError(std::string("field \"") + key + "\" must be an integer", 0);
  return it->get<int>();
}

Eigen::MatrixXd square_table(const Json& rows, int size, const char* key) {
  if (!rows.is_array() || static_cast<int>(rows.size()) != size)
    throw ParseError(std::string("\"") + key + "\" must have n+1 rows", 0);
  Eigen::MatrixXd table(size, size);
  for (int i = 0; i < size; ++i) {
    const Json& row = rows[i];
    if (!row.is_array() || static_cast<int>(row.size()) != size)
      throw ParseError(std::string("\"") + key + "\" must have n+1 columns", 0);
    for (int j = 0; j < size; ++j) {
      if (!row[j].is_number()) throw ParseError(std::string("\"") + key + "\" entries must be numbers", 0);
      table(i, j) = row[j].get<double>();
    }
  }
  return table;
}

}  // namespace

std::string_view to_string(QuestionKind kind) {
  return kind == QuestionKind::Edge ? "edge" : "path";
}

QuestionKind parse_question_kind(std::string_view s) {
  if (s == "path") return QuestionKind::Path;
  if (s == "edge") return QuestionKind::Edge;
  throw ParseError("unknown question kind \"" + std::string(s) + "\"", 0);
}

void to_json(Json& j, const Question& q) {
  j = Json{{"kind", to_string(q.kind)}, {"i", q.i}, {"j", q.j}};
}

void from_json(const Json& j, Question& q) {
  if (!j.is_object()) throw ParseError("question must be a JSON object", 0);
  const auto kind = j.find("kind");
  if (kind == j.end() || !kind->is_string()) throw ParseError("missing field \"kind\"", 0);
  q.kind = parse_question_kind(kind->get<std::string>());
  q.i = get_int(j, "i");
  q.j = get_int(j, "j");
}

void to_json(Json& j, const AnswerRecord& r) {
  to_json(j, r.question);
  j["votes"] = r.votes;
  j["answer"] = r.answer;
  j["gamma"] = r.gamma;
  j["ts"] = r.timestamp;
}

void from_json(const Json& j, AnswerRecord& r) {
  from_json(j, r.question);
  r.votes.clear();
  if (const auto v = j.find("votes"); v != j.end() && !v->is_null()) {
    if (!v->is_array()) throw ParseError("\"votes\" must be an array", 0);
    for (const Json& x : *v) {
      if (!x.is_number_integer() || (x.get<int>() != 0 && x.get<int>() != 1))
        throw ParseError("votes must be 0 or 1", 0);
      r.votes.push_back(x.get<int>());
    }
  }
  if (j.contains("answer")) {
    r.answer = get_int(j, "answer");
    if (r.answer != 0 && r.answer != 1) throw ParseError("\"answer\" must be 0 or 1", 0);
  } else if (r.votes.empty()) {
    throw ParseError("record needs \"answer\" or \"votes\"", 0);
  } else {
    r.answer = -1;  // derived from the votes by the consumer
  }
  if (const auto g = j.find("gamma"); g != j.end() && !g->is_null()) {
    if (!g->is_number()) throw ParseError("\"gamma\" must be a number", 0);
    r.gamma = g->get<double>();
    if (!(r.gamma >= 0.0 && r.gamma <= 0.5)) throw ParseError("\"gamma\" must lie in [0, 0.5]", 0);
  } else {
    r.gamma = std::nan("");
  }
  const auto ts = j.find("ts");
  r.timestamp = ts != j.end() && ts->is_string() ? ts->get<std::string>() : std::string();
}

void to_json(Json& j, const WeightMatrix& w) {
  const int size = w.n() + 1;
  Json rows = Json::array();
  for (int i = 0; i < size; ++i) {
    Json row = Json::array();
    for (int k = 0; k < size; ++k) row.push_back(w.table()(i, k));
    rows.push_back(std::move(row));
  }
  j = Json{{"n", w.n()}, {"log_weights", std::move(rows)}};
}

void from_json(const Json& j, WeightMatrix& w) {
  if (!j.is_object()) throw ParseError("weights must be a JSON object", 0);
  const int n = get_int(j, "n");
  if (n < 1) throw ParseError("\"n\" must be >= 1", 0);
  const auto rows = j.find("log_weights");
  if (rows == j.end()) throw ParseError("missing field \"log_weights\"", 0);
  try {
    w = WeightMatrix::from_log_weights(square_table(*rows, n + 1, "log_weights"));
  } catch (const InvalidArgument& e) {
    throw ParseError(e.what(), 0);
  }
}

void to_json(Json& j, const Arborescence& t) {
  j = Json{{"n", t.n()}, {"parents", std::vector<int>(t.parents().begin(), t.parents().end())}};
}

void from_json(const Json& j, Arborescence& t) {
  if (!j.is_object()) throw ParseError("tree must be a JSON object", 0);
  const int n = get_int(j, "n");
  const auto p = j.find("parents");
  if (p == j.end() || !p->is_array() || static_cast<int>(p->size()) != n)
    throw ParseError("\"parents\" must be an array of length n", 0);
  std::vector<int> parents;
  for (const Json& x : *p) {
    if (!x.is_number_integer()) throw ParseError("parents must be integers", 0);
    parents.push_back(x.get<int>());
  }
  try {
    t = Arborescence(std::move(parents));
  } catch (const InvalidArgument& e) {
    throw ParseError(e.what(), 0);
  }
}

void to_json(Json& j, const EdgeMarginals& p) {
  const int size = p.n() + 1;
  Json rows = Json::array();
  for (int i = 0; i < size; ++i) {
    Json row = Json::array();
    for (int k = 0; k < size; ++k) row.push_back(p.table()(i, k));
    rows.push_back(std::move(row));
  }
  j = Json{{"n", p.n()}, {"probs", std::move(rows)}};
}

std::string to_json_line(const AnswerRecord& r) {
  return Json(r).dump();
}

AnswerRecord parse_answer_line(std::string_view text, int line) {
  try {
    const Json j = Json::parse(text);
    return j.get<AnswerRecord>();
  } catch (const ParseError& e) {
    throw ParseError(e.what(), static_cast<std::size_t>(line));
  } catch (const Json::exception& e) {
    throw ParseError(e.what(), static_cast<std::size_t>(line));
  }
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace taxon
