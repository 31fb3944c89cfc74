#pragma once

// JSON wire formats shared by the CLI, the HTTP service and session files.
//
//   Arborescence      {"n": N, "parents": [p_1, ..., p_N]}
//   WeightMatrix      {"n": N, "log_weights": [[...] x (N+1)] x (N+1)}
//   AnswerRecord      {"kind": "path"|"edge", "i", "j", "votes", "answer", "gamma", "ts"}
//   EdgeMarginals     {"n": N, "probs": [[...]]}

#include <string>
#include <string_view>

#include <json.hpp>

#include "taxon/inference.hpp"
#include "taxon/tree_dist.hpp"

namespace taxon {

using Json = nlohmann::json;

std::string_view to_string(QuestionKind kind);
// Throws ParseError for anything but "path" or "edge".
QuestionKind parse_question_kind(std::string_view s);

void to_json(Json& j, const Question& q);
void from_json(const Json& j, Question& q);
void to_json(Json& j, const AnswerRecord& r);
void from_json(const Json& j, AnswerRecord& r);
void to_json(Json& j, const WeightMatrix& w);
void from_json(const Json& j, WeightMatrix& w);
void to_json(Json& j, const Arborescence& t);
void from_json(const Json& j, Arborescence& t);
void to_json(Json& j, const EdgeMarginals& p);

// One JSON-lines record, no trailing newline.
std::string to_json_line(const AnswerRecord& r);
// Parses one record; errors become ParseError carrying `line`.
AnswerRecord parse_answer_line(std::string_view text, int line);

// Current UTC time as ISO-8601 with a trailing Z.
std::string utc_timestamp();

}  // namespace taxon
