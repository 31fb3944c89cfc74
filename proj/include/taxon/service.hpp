#pragma once

// JSON-over-HTTP front end for sessions.
//
//   GET  /sessions                       ids of stored sessions
//   POST /sessions                       {"labels": [...], "id"?, option fields...}
//   GET  /sessions/{id}                  summary
//   GET  /sessions/{id}/next-question    {"done", "question", "text", ...}
//   POST /sessions/{id}/votes            {"kind"?, "i", "j", "votes": [...]}
//   GET  /sessions/{id}/report           ?format=dot for Graphviz
//   POST /sessions/{id}/concepts         {"label": ...}
//   POST /sessions/{id}/import           {"format": "csv"|"jsonl", "content": ...}
//
// Errors are {"error": message} with 400 (bad input, plus "line" for
// imports), 401, 404, 409 (conflicts, exhausted budget) or 500. Writes to one
// session are serialized; reads share the latest committed state.

#include <memory>
#include <string>

#include "taxon/session.hpp"

namespace taxon {

struct ServiceOptions {
  std::string token;  // when set, requests need "Authorization: Bearer <token>"
  int threads = 8;
};

class Service {
 public:
  Service(SessionStore store, ServiceOptions options = {});
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Binds to host:port (0 picks a free port) and returns the port.
  int bind(const std::string& host, int port);
  // Serves until stop(); call after bind().
  void listen();
  void stop();
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace taxon
