#include <doctest.h>

#include <filesystem>
#include <thread>

// Before httplib: <resolv.h> defines _res, which clashes with Eigen.
#include "taxon/log.hpp"
#include "taxon/service.hpp"

#include <httplib.h>

using namespace taxon;
namespace fs = std::filesystem;

namespace {

struct QuietWarnings {
  WarningSink previous = set_warning_sink(nullptr);
  ~QuietWarnings() { set_warning_sink(previous); }
};

// A service on a free local port over a scratch data directory.
struct LiveService {
  fs::path dir;
  std::unique_ptr<Service> service;
  std::thread thread;
  int port = 0;

  explicit LiveService(ServiceOptions options = {})
      : dir(fs::temp_directory_path() / ("taxon-http-" + new_session_id())) {
    start(options);
  }
  void start(ServiceOptions options) {
    service = std::make_unique<Service>(SessionStore(dir), options);
    port = service->bind("127.0.0.1", 0);
    thread = std::thread([this] { service->listen(); });
    service->wait_until_ready();
  }
  void stop() {
    service->stop();
    thread.join();
    service.reset();
  }
  ~LiveService() {
    if (service) stop();
    fs::remove_all(dir);
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(60, 0);
    return c;
  }
};

Json body_of(const httplib::Result& r) {
  REQUIRE(r);
  return Json::parse(r->body);
}

httplib::Result post(httplib::Client& c, const std::string& path, const Json& body) {
  return c.Post(path, body.dump(), "application/json");
}

const Json kCreate = {{"labels", {"body", "head", "eye", "arm"}}, {"id", "demo"}, {"m", 500},
                      {"seed", 9},    {"budget", 10}};

}  // namespace

TEST_CASE("session lifecycle over HTTP") {
  QuietWarnings quiet;
  LiveService live;
  auto c = live.client();

  auto r = post(c, "/sessions", kCreate);
  REQUIRE(r);
  CHECK(r->status == 201);
  CHECK(body_of(r)["id"] == "demo");
  CHECK(post(c, "/sessions", kCreate)->status == 409);
  CHECK(body_of(c.Get("/sessions"))["sessions"] == Json::array({"demo"}));

  const Json summary = body_of(c.Get("/sessions/demo"));
  CHECK(summary["n"] == 4);
  CHECK(summary["budget"] == 10);
  CHECK(summary["options"]["m"] == 500);

  const Json q1 = body_of(c.Get("/sessions/demo/next-question"));
  CHECK(q1["done"] == false);
  CHECK(q1["text"].get<std::string>().rfind("Is ", 0) == 0);
  CHECK(body_of(c.Get("/sessions/demo/next-question")) == q1);

  Json vote = q1["question"];
  vote["votes"] = {1, 1, 1, 1, 1, 1, 0, 1};
  r = post(c, "/sessions/demo/votes", vote);
  REQUIRE(r);
  CHECK(r->status == 200);
  const Json voted = Json::parse(r->body);
  CHECK(voted["tie"] == false);
  CHECK(voted["record"]["gamma"].get<double>() == doctest::Approx(0.125));
  CHECK(voted["budget"] == 9);

  r = post(c, "/sessions/demo/votes", {{"i", 1}, {"j", 3}, {"votes", {1, 0}}});
  CHECK(body_of(r)["tie"] == true);

  const Json report = body_of(c.Get("/sessions/demo/report"));
  CHECK(report["answered"] == 2);
  CHECK(report["map"]["parents"].size() == 4);
  CHECK(report["marginals"]["probs"].size() == 5);
  CHECK(report["nodes"].size() == 4);
  r = c.Get("/sessions/demo/report?format=dot");
  REQUIRE(r);
  CHECK(r->body.rfind("digraph", 0) == 0);

  r = post(c, "/sessions/demo/concepts", {{"label", "hand"}});
  CHECK(r->status == 201);
  CHECK(body_of(r)["n"] == 5);
  CHECK(post(c, "/sessions/demo/concepts", {{"label", "hand"}})->status == 409);

  r = post(c, "/sessions/demo/import",
           {{"format", "csv"}, {"content", "kind,i_label,j_label,votes\npath,arm,hand,1;1;1\n"}});
  CHECK(body_of(r)["applied"] == 1);
  r = c.Post("/sessions/demo/import", "{\"kind\":\"path\",\"i\":1,\"j\":5,\"votes\":[1]}\n", "application/x-ndjson");
  CHECK(body_of(r)["applied"] == 1);
  CHECK(body_of(c.Get("/sessions/demo"))["answered"] == 4);
}

TEST_CASE("HTTP errors carry status codes and messages") {
  QuietWarnings quiet;
  LiveService live;
  auto c = live.client();
  post(c, "/sessions", kCreate);

  CHECK(c.Get("/sessions/nope")->status == 404);
  CHECK(c.Get("/sessions/nope/report")->status == 404);
  CHECK(c.Post("/sessions", "{oops", "application/json")->status == 400);
  CHECK(post(c, "/sessions", {{"labels", "body"}})->status == 400);
  CHECK(post(c, "/sessions", {{"labels", {"a", "a"}}})->status == 409);
  CHECK(post(c, "/sessions/demo/votes", {{"i", 1}, {"j", 1}, {"votes", {1}}})->status == 400);
  CHECK(post(c, "/sessions/demo/votes", {{"i", 1}, {"j", 2}})->status == 400);

  auto r = post(c, "/sessions/demo/import",
                {{"format", "csv"}, {"content", "path,body,eye,1\npath,body,nose,1\n"}});
  CHECK(r->status == 400);
  CHECK(body_of(r)["line"] == 2);
  CHECK(body_of(c.Get("/sessions/demo"))["answered"] == 0);

  post(c, "/sessions", {{"labels", {"a", "b"}}, {"id", "tiny"}, {"budget", 1}, {"m", 200}});
  CHECK(post(c, "/sessions/tiny/votes", {{"i", 1}, {"j", 2}, {"votes", {1}}})->status == 200);
  CHECK(post(c, "/sessions/tiny/votes", {{"i", 2}, {"j", 1}, {"votes", {1}}})->status == 409);
  CHECK(body_of(c.Get("/sessions/tiny/next-question"))["done"] == true);
}

TEST_CASE("a token guards every route") {
  LiveService live({"secret", 4});
  auto c = live.client();
  CHECK(c.Get("/sessions")->status == 401);
  c.set_bearer_token_auth("wrong");
  CHECK(c.Get("/sessions")->status == 401);
  c.set_bearer_token_auth("secret");
  CHECK(c.Get("/sessions")->status == 200);
}

TEST_CASE("concurrent votes on one session are all applied") {
  QuietWarnings quiet;
  LiveService live;
  {
    auto c = live.client();
    post(c, "/sessions", {{"labels", {"a", "b", "c"}}, {"id", "busy"}, {"m", 300}, {"budget", 50}});
  }
  std::vector<std::thread> workers;
  std::atomic<int> ok{0};
  for (int t = 0; t < 8; ++t)
    workers.emplace_back([&, t] {
      auto c = live.client();
      const int i = 1 + t % 3, j = 1 + (t + 1) % 3;
      auto r = post(c, "/sessions/busy/votes", {{"i", i}, {"j", j}, {"votes", {1, 1, 0}}});
      if (r && r->status == 200) ++ok;
    });
  for (auto& w : workers) w.join();
  CHECK(ok == 8);
  auto c = live.client();
  const Json s = body_of(c.Get("/sessions/busy"));
  CHECK(s["answered"] == 8);
  CHECK(s["budget"] == 42);
}

TEST_CASE("sessions survive a service restart") {
  QuietWarnings quiet;
  LiveService live;
  Json before;
  {
    auto c = live.client();
    post(c, "/sessions", kCreate);
    const Json q = body_of(c.Get("/sessions/demo/next-question"));
    Json vote = q["question"];
    vote["votes"] = {0, 0, 0};
    post(c, "/sessions/demo/votes", vote);
    c.Get("/sessions/demo/next-question");
    before = body_of(c.Get("/sessions/demo/report"));
  }
  live.stop();
  live.start({});
  auto c = live.client();
  CHECK(body_of(c.Get("/sessions/demo/report")) == before);
  CHECK_FALSE(body_of(c.Get("/sessions/demo"))["pending"].is_null());
}
