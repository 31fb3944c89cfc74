// Command-line front end: sessions, the HTTP service, and experiments.

#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "taxon/error.hpp"
#include "taxon/evaluation.hpp"
#include "taxon/service.hpp"
#include "taxon/session.hpp"

using namespace taxon;

namespace {

std::vector<std::string> read_labels(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NotFound("cannot open " + path);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

void write_to(const std::string& path, const std::string& content) {
  if (path.empty() || path == "-") {
    std::cout << content;
    return;
  }
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << content;
}

void print_brief_report(const SessionState& s) {
  const PosteriorReport r = posterior_report(s);
  std::cout << "MAP hierarchy (" << s.answered() << " answered, " << s.budget << " left):\n";
  for (const auto& n : r.nodes) {
    std::cout << "  " << s.domain.label(n.node) << " <- " << s.domain.label(n.parent) << "  p="
              << n.marginal;
    if (n.uncertain)
      std::cout << "  [uncertain; next: " << s.domain.label(n.second_parent) << " p=" << n.second_marginal << "]";
    std::cout << '\n';
  }
}

Service* running_service = nullptr;

void on_signal(int) {
  if (running_service) running_service->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Active learning of concept hierarchies from yes/no answers"};
  app.require_subcommand(1);
  std::string data_dir = SessionStore::default_dir().string();
  app.add_option("--data-dir", data_dir, "Session directory (default: $TAXON_DATA_DIR or ./taxon-data)");

  // serve
  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  std::string host = "127.0.0.1";
  int port = 8080;
  ServiceOptions service_options;
  serve->add_option("--host", host);
  serve->add_option("--port", port)->check(CLI::Range(0, 65535));
  serve->add_option("--token", service_options.token, "Require this bearer token");
  serve->add_option("--threads", service_options.threads)->check(CLI::PositiveNumber);

  // session new / list
  auto* session = app.add_subcommand("session", "Create or list sessions");
  session->require_subcommand(1);
  auto* session_new = session->add_subcommand("new", "Create a session and print its id");
  std::vector<std::string> labels;
  std::string labels_file, new_id, strategy = "active";
  SessionOptions options;
  double beta = options.cfg.beta.value;
  session_new->add_option("--labels", labels, "Concept labels")->delimiter(',');
  session_new->add_option("--labels-file", labels_file, "One label per line");
  session_new->add_option("--id", new_id, "Session id (random when omitted)");
  session_new->add_option("--budget", options.budget)->check(CLI::NonNegativeNumber);
  session_new->add_option("--seed", options.cfg.seed);
  session_new->add_option("--m", options.cfg.m, "Samples per update")->check(CLI::PositiveNumber);
  session_new->add_option("--beta", beta, "l1 coefficient")->check(CLI::PositiveNumber);
  session_new->add_option("--strategy", strategy, "active | literal_max_entropy | random");
  session_new->add_option("--votes-per-question", options.votes_per_question)->check(CLI::PositiveNumber);
  session_new->add_option("--threshold", options.uncertainty_threshold)->check(CLI::Range(0.0, 1.0));
  session_new->add_option("--path-template", options.path_template);
  session->add_subcommand("list", "List stored sessions");

  std::string session_id;
  // ask
  auto* ask = app.add_subcommand("ask", "Answer questions interactively (y/n, q to stop)");
  ask->add_option("--session", session_id)->required();
  int max_questions = -1;
  ask->add_option("--max", max_questions, "Stop after this many answers");

  // import
  auto* import = app.add_subcommand("import", "Replay answers from a .jsonl or .csv file");
  std::string import_path;
  import->add_option("--session", session_id)->required();
  import->add_option("file", import_path)->required()->check(CLI::ExistingFile);

  // report
  auto* report = app.add_subcommand("report", "Print the MAP hierarchy and marginals");
  std::string format = "json", out_path;
  report->add_option("--session", session_id)->required();
  report->add_option("--format", format)->check(CLI::IsMember({"json", "dot"}));
  report->add_option("-o,--output", out_path);

  // insert
  auto* insert = app.add_subcommand("insert", "Add a concept to a session");
  std::string new_label;
  insert->add_option("--session", session_id)->required();
  insert->add_option("label", new_label)->required();

  // experiment recovery / weights
  auto* experiment = app.add_subcommand("experiment", "Synthetic experiments");
  experiment->require_subcommand(1);
  auto* recovery = experiment->add_subcommand("recovery", "Hierarchy recovery from simulated answers");
  ExperimentSpec spec;
  spec.budget = -1;
  std::string rec_strategy = "active", csv_path, json_path;
  bool literal = false, timing = false;
  recovery->add_option("--n", spec.n)->check(CLI::PositiveNumber);
  recovery->add_option("--noise", spec.noise)->check(CLI::Range(0.0, 0.4999));
  recovery->add_option("--strategy", rec_strategy, "active | literal_max_entropy | random");
  recovery->add_option("--budget", spec.budget, "Questions per trial (default 2 n^2)");
  recovery->add_option("--trials", spec.trials)->check(CLI::PositiveNumber);
  recovery->add_option("--seed", spec.seed);
  recovery->add_option("--m", spec.m)->check(CLI::PositiveNumber);
  recovery->add_option("--beta", spec.beta)->check(CLI::PositiveNumber);
  recovery->add_option("--threads", spec.threads)->check(CLI::NonNegativeNumber);
  recovery->add_flag("--literal-refit", literal, "Reset each refit and penalize toward uniform");
  recovery->add_flag("--timing", timing, "Include wall clock in the summary");
  recovery->add_option("--csv", csv_path, "Per-question rows");
  recovery->add_option("--json", json_path, "Summary (default: stdout)");

  auto* weights = experiment->add_subcommand("weights", "Weight estimation from sampled trees");
  int w_n = 20, w_trials = 10, w_threads = 0;
  std::uint64_t w_seed = 0;
  std::size_t test_size = 1000;
  std::vector<std::size_t> m_grid{100, 1000, 10000};
  std::vector<double> beta_grid{0.01};
  weights->add_option("--n", w_n)->check(CLI::PositiveNumber);
  weights->add_option("--m", m_grid)->delimiter(',');
  weights->add_option("--beta", beta_grid)->delimiter(',');
  weights->add_option("--trials", w_trials)->check(CLI::PositiveNumber);
  weights->add_option("--seed", w_seed);
  weights->add_option("--test-size", test_size)->check(CLI::PositiveNumber);
  weights->add_option("--threads", w_threads)->check(CLI::NonNegativeNumber);
  weights->add_option("--csv", csv_path);
  weights->add_option("--json", json_path);

  CLI11_PARSE(app, argc, argv);

  try {
    SessionStore store(data_dir);

    if (*serve) {
      Service service(store, service_options);
      const int bound = service.bind(host, port);
      running_service = &service;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cerr << "listening on http://" << host << ':' << bound << " (data: " << data_dir << ")\n";
      service.listen();
      running_service = nullptr;
      return 0;
    }

    if (*session_new) {
      if (!labels_file.empty()) {
        const auto more = read_labels(labels_file);
        labels.insert(labels.end(), more.begin(), more.end());
      }
      options.cfg.beta = Beta::fixed(beta);
      options.policy.mode = parse_selection_mode(strategy);
      SessionState s = create_session(new_id.empty() ? new_session_id() : new_id, ConceptDomain(labels), options);
      store.create(s);
      std::cout << s.id << '\n';
      return 0;
    }
    if (session->got_subcommand("list")) {
      for (const auto& id : store.list()) std::cout << id << '\n';
      return 0;
    }

    if (*ask) {
      SessionState s = store.load(session_id);
      int asked = 0;
      while (max_questions < 0 || asked < max_questions) {
        const std::size_t before = s.history.size();
        Question q;
        try {
          q = next_question(s);
        } catch (const BudgetExhausted&) {
          std::cout << "Budget exhausted.\n";
          break;
        }
        store.commit(s, before);
        std::cout << question_text(s, q) << " [y/n/q] " << std::flush;
        std::string line;
        if (!std::getline(std::cin, line) || line == "q") break;
        if (line != "y" && line != "n") {
          std::cout << "Please answer y, n, or q.\n";
          continue;
        }
        const SubmitResult r = submit_votes(s, {q, {line == "y" ? 1 : 0}});
        store.commit(s, before);
        ++asked;
        if (!r.converged) std::cerr << "warning: refit did not converge\n";
        print_brief_report(s);
      }
      return 0;
    }

    if (*import) {
      SessionState s = store.load(session_id);
      const std::size_t before = s.history.size();
      const int applied = import_answers(s, std::filesystem::path(import_path));
      store.commit(s, before);
      std::cout << "imported " << applied << " answers; " << s.budget << " questions left\n";
      return 0;
    }

    if (*report) {
      const SessionState s = store.load(session_id);
      const PosteriorReport r = posterior_report(s);
      write_to(out_path, format == "dot" ? report_dot(s, r) : report_json(s, r).dump(2) + "\n");
      return 0;
    }

    if (*insert) {
      SessionState s = store.load(session_id);
      const std::size_t before = s.history.size();
      insert_concept(s, new_label);
      store.commit(s, before);
      std::cout << "added \"" << new_label << "\" as node " << s.n() << '\n';
      return 0;
    }

    if (*recovery) {
      spec.strategy.mode = parse_selection_mode(rec_strategy);
      if (spec.budget < 0) spec.budget = 2 * spec.n * spec.n;
      if (literal) {
        spec.init = FitInit::Reset;
        spec.penalty_center = PenaltyCenter::Zero;
      }
      const ExperimentResult r = run_recovery_experiment(spec);
      if (!csv_path.empty()) {
        std::ostringstream os;
        write_recovery_csv(os, r);
        write_to(csv_path, os.str());
      }
      write_to(json_path, recovery_summary(r, timing).dump(2) + "\n");
      return 0;
    }

    if (*weights) {
      const WeightEstimationTable t =
          run_weight_estimation_experiment(w_n, m_grid, beta_grid, w_trials, w_seed, test_size, w_threads);
      if (!csv_path.empty()) {
        std::ostringstream os;
        write_weight_estimation_csv(os, t);
        write_to(csv_path, os.str());
      }
      write_to(json_path, weight_estimation_summary(t).dump(2) + "\n");
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
