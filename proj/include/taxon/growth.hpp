#pragma once

// Adding a concept to a learned distribution without starting over.

#include <cstddef>
#include <string>

#include "taxon/inference.hpp"
#include "taxon/tree_dist.hpp"

namespace taxon {

struct InsertionRequest {
  std::string label;
  std::size_t m = 10000;
  InferenceConfig cfg;
};

struct InsertionResult {
  ConceptDomain domain;
  WeightMatrix weights;
  bool converged = true;
  int iterations = 0;
};

// Every tree over n concepts becomes n+1 equally weighted trees over n+1
// concepts, with node n+1 attached as a leaf under each of 0..n.
EmpiricalTreeDistribution expand_with_leaf(const EmpiricalTreeDistribution& samples);

// Samples req.m trees from P(T|w), expands them and fits weights over N+1
// concepts. The new concept gets index N+1. Throws ConflictError when the
// label already exists. The l1 coefficient is resolved against req.m.
InsertionResult insert_concept(const ConceptDomain& domain, const WeightMatrix& w,
                               const InsertionRequest& req);

}  // namespace taxon
