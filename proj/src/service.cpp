#include "taxon/service.hpp"

#include <map>
#include <mutex>
#include <shared_mutex>

#include <httplib.h>

#include "taxon/error.hpp"

namespace taxon {
namespace {

struct Entry {
  std::mutex writer;               // serializes mutations
  mutable std::shared_mutex state_mutex;
  SessionState state;
};

void send_json(httplib::Response& res, const Json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message, std::size_t line = 0) {
  Json body{{"error", message}};
  if (line > 0) body["line"] = line;
  send_json(res, body, status);
}

Json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return Json::object();
  try {
    return Json::parse(req.body);
  } catch (const Json::exception& e) {
    throw ParseError(std::string("request body is not JSON: ") + e.what(), 0);
  }
}

Json summary(const SessionState& s) {
  return Json{{"id", s.id},
              {"n", s.n()},
              {"labels", s.domain.labels()},
              {"budget", s.budget},
              {"answered", s.answered()},
              {"pending", s.pending ? Json(*s.pending) : Json(nullptr)},
              {"options", s.options}};
}

Json question_json(const SessionState& s, const Question& q) {
  return Json{{"done", false},
              {"question", q},
              {"text", question_text(s, q)},
              {"parent_label", s.domain.label(q.i)},
              {"child_label", s.domain.label(q.j)},
              {"budget", s.budget}};
}

}  // namespace

struct Service::Impl {
  SessionStore store;
  ServiceOptions options;
  httplib::Server server;
  std::mutex entries_mutex;
  std::map<std::string, std::shared_ptr<Entry>> entries;

  Impl(SessionStore st, ServiceOptions opt) : store(std::move(st)), options(std::move(opt)) {
    routes();
  }

  std::shared_ptr<Entry> entry(const std::string& id) {
    std::lock_guard lock(entries_mutex);
    if (auto it = entries.find(id); it != entries.end()) return it->second;
    auto e = std::make_shared<Entry>();
    e->state = store.load(id);
    entries.emplace(id, e);
    return e;
  }

  // Runs fn on a copy of the session, commits it, then publishes it.
  template <class F>
  Json mutate(const std::string& id, F&& fn) {
    auto e = entry(id);
    std::lock_guard writer(e->writer);
    SessionState work;
    {
      std::shared_lock read(e->state_mutex);
      work = e->state;
    }
    const std::size_t before = work.history.size();
    Json out = fn(work);
    store.commit(work, before);
    std::unique_lock write(e->state_mutex);
    e->state = std::move(work);
    return out;
  }

  template <class F>
  auto read(const std::string& id, F&& fn) {
    auto e = entry(id);
    std::shared_lock lock(e->state_mutex);
    return fn(e->state);
  }

  using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

  // Maps library errors to HTTP statuses.
  static Handler guarded(Handler h) {
    return [h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
      try {
        h(req, res);
      } catch (const ParseError& e) {
        send_error(res, 400, e.what(), e.line());
      } catch (const InvalidArgument& e) {
        send_error(res, 400, e.what());
      } catch (const ShapeError& e) {
        send_error(res, 400, e.what());
      } catch (const NotFound& e) {
        send_error(res, 404, e.what());
      } catch (const ConflictError& e) {
        send_error(res, 409, e.what());
      } catch (const BudgetExhausted& e) {
        send_error(res, 409, e.what());
      } catch (const ExhaustedPool& e) {
        send_error(res, 409, e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, e.what());
      }
    };
  }

  void routes() {
    server.new_task_queue = [this] { return new httplib::ThreadPool(options.threads); };
    server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                {"Access-Control-Allow-Headers", "Authorization, Content-Type"},
                                {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
    server.set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
      if (options.token.empty() || req.method == "OPTIONS") return httplib::Server::HandlerResponse::Unhandled;
      if (req.get_header_value("Authorization") == "Bearer " + options.token)
        return httplib::Server::HandlerResponse::Unhandled;
      send_error(res, 401, "missing or wrong bearer token");
      return httplib::Server::HandlerResponse::Handled;
    });
    server.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    const std::string id = R"(/sessions/([A-Za-z0-9_-]+))";

    server.Get("/sessions", guarded([this](const httplib::Request&, httplib::Response& res) {
      send_json(res, Json{{"sessions", store.list()}});
    }));

    server.Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const Json body = parse_body(req);
      if (!body.is_object() || !body.contains("labels") || !body["labels"].is_array())
        throw ParseError("body needs \"labels\": [...]", 0);
      std::vector<std::string> labels;
      for (const Json& l : body["labels"]) {
        if (!l.is_string()) throw ParseError("labels must be strings", 0);
        labels.push_back(l.get<std::string>());
      }
      const SessionOptions options = body.get<SessionOptions>();
      std::string sid = body.contains("id") && body["id"].is_string() ? body["id"].get<std::string>()
                                                                       : new_session_id();
      SessionState s = create_session(std::move(sid), ConceptDomain(labels), options);
      {
        std::lock_guard lock(entries_mutex);
        if (entries.count(s.id)) throw ConflictError("session \"" + s.id + "\" already exists");
        store.create(s);
        auto e = std::make_shared<Entry>();
        e->state = s;
        entries.emplace(s.id, e);
      }
      send_json(res, summary(s), 201);
    }));

    server.Get(id, guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, read(req.matches[1], [](const SessionState& s) { return summary(s); }));
    }));

    server.Get(id + "/next-question", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const std::string sid = req.matches[1];
      // A pending question is served without taking the writer lock.
      const Json pending = read(sid, [](const SessionState& s) {
        return s.pending ? question_json(s, *s.pending) : Json();
      });
      if (!pending.is_null()) return send_json(res, pending);
      send_json(res, mutate(sid, [](SessionState& s) {
        if (s.budget <= 0) return Json{{"done", true}, {"reason", "budget exhausted"}, {"budget", 0}};
        try {
          return question_json(s, next_question(s));
        } catch (const ExhaustedPool&) {
          return Json{{"done", true}, {"reason", "question pool exhausted"}, {"budget", s.budget}};
        }
      }));
    }));

    server.Post(id + "/votes", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const Json body = parse_body(req);
      Json qj = body.contains("question") ? body["question"] : body;
      if (qj.is_object() && !qj.contains("kind")) qj["kind"] = "path";
      VoteBatch batch;
      try {
        batch.question = qj.get<Question>();
        batch.votes = body.at("votes").get<std::vector<int>>();
      } catch (const Json::exception& e) {
        throw ParseError(std::string("bad vote batch: ") + e.what(), 0);
      }
      send_json(res, mutate(req.matches[1], [&](SessionState& s) {
        const SubmitResult r = submit_votes(s, batch);
        return Json{{"record", r.record},    {"tie", r.tie},       {"informative", !r.tie},
                    {"converged", r.converged}, {"ess", r.ess},    {"budget", s.budget},
                    {"answered", s.answered()}};
      }));
    }));

    server.Get(id + "/report", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const bool dot = req.get_param_value("format") == "dot";
      read(req.matches[1], [&](const SessionState& s) {
        const PosteriorReport r = posterior_report(s);
        if (dot)
          res.set_content(report_dot(s, r), "text/vnd.graphviz");
        else
          send_json(res, report_json(s, r));
        return 0;
      });
    }));

    server.Post(id + "/concepts", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const Json body = parse_body(req);
      if (!body.contains("label") || !body["label"].is_string()) throw ParseError("body needs \"label\"", 0);
      const std::string label = body["label"].get<std::string>();
      send_json(res, mutate(req.matches[1], [&](SessionState& s) {
        insert_concept(s, label);
        return Json{{"n", s.n()}, {"labels", s.domain.labels()}, {"index", s.n()}};
      }), 201);
    }));

    server.Post(id + "/import", guarded([this](const httplib::Request& req, httplib::Response& res) {
      ImportFormat format = ImportFormat::JsonLines;
      std::string content;
      const std::string type = req.get_header_value("Content-Type");
      if (type.rfind("text/csv", 0) == 0) {
        format = ImportFormat::Csv;
        content = req.body;
      } else if (type.rfind("application/x-ndjson", 0) == 0 || type.rfind("application/jsonl", 0) == 0) {
        content = req.body;
      } else {
        const Json body = parse_body(req);
        if (!body.contains("content") || !body["content"].is_string())
          throw ParseError("body needs \"content\"", 0);
        content = body["content"].get<std::string>();
        const std::string f = body.value("format", "jsonl");
        if (f == "csv")
          format = ImportFormat::Csv;
        else if (f != "jsonl")
          throw ParseError("format must be csv or jsonl", 0);
      }
      send_json(res, mutate(req.matches[1], [&](SessionState& s) {
        const int applied = import_answers(s, content, format);
        return Json{{"applied", applied}, {"answered", s.answered()}, {"budget", s.budget}};
      }));
    }));
  }
};

Service::Service(SessionStore store, ServiceOptions options)
    : impl_(std::make_unique<Impl>(std::move(store), std::move(options))) {}

Service::~Service() { stop(); }

int Service::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->server.bind_to_any_port(host);
    if (bound < 0) throw Error("cannot bind " + host);
    return bound;
  }
  if (!impl_->server.bind_to_port(host, port)) throw Error("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void Service::listen() { impl_->server.listen_after_bind(); }

void Service::stop() {
  if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

void Service::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace taxon
