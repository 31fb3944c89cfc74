#include "taxon/growth.hpp"

#include <algorithm>

#include "taxon/error.hpp"
#include "taxon/random.hpp"

namespace taxon {

EmpiricalTreeDistribution expand_with_leaf(const EmpiricalTreeDistribution& samples) {
  const int n = samples.n();
  EmpiricalTreeDistribution out(n + 1);
  out.reserve(samples.size() * static_cast<std::size_t>(n + 1));
  std::vector<int> parents(n + 1);
  const double total = samples.total_weight();
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const auto p = samples.parents(k);
    std::copy(p.begin(), p.end(), parents.begin());
    const double w = samples.weight(k) / total / (n + 1);
    for (int host = 0; host <= n; ++host) {
      parents[n] = host;
      out.add(parents, w);
    }
  }
  return out;
}

InsertionResult insert_concept(const ConceptDomain& domain, const WeightMatrix& w,
                               const InsertionRequest& req) {
  if (domain.size() != w.n()) throw ShapeError("domain and weights differ in size");
  if (req.m < 1) throw InvalidArgument("insertion needs m >= 1");
  if (domain.contains(req.label) || req.label == ConceptDomain::kRootLabel)
    throw ConflictError("concept \"" + req.label + "\" already exists");
  req.cfg.validate();

  InsertionResult out;
  out.domain = domain;
  out.domain.add(req.label);

  const int n = w.n();
  const auto samples = sample_trees(w, req.m, derive_seed(req.cfg.seed, seed_tag::kInsert, n));
  const auto expanded = expand_with_leaf(samples);

  InferenceConfig cfg = req.cfg;
  cfg.beta = Beta::fixed(req.cfg.beta.resolve(n + 1, req.m));
  WeightMatrix init(n + 1);
  if (cfg.init == FitInit::WarmStart)
    for_each_edge(n, [&](int i, int j) { init.set(i, j, w(i, j)); });
  FitResult fit = fit_weights(init, expanded, cfg);

  out.weights = std::move(fit.weights);
  out.converged = fit.converged;
  out.iterations = fit.iterations;
  return out;
}

}  // namespace taxon
