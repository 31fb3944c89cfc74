#pragma once

// Root-deleted Laplacian of a column-rescaled weight table.
//
// Column j of the minor only involves weights into j, so rescaling column j
// by exp(-c_j) multiplies the determinant by exp(-c_j) and leaves the edge
// marginals unchanged. Taking c_j = max_i Lambda_ij keeps every scaled weight
// in (0, 1] with at least one entry equal to 1 per column.

#include <Eigen/Dense>

#include "taxon/tree_dist.hpp"

namespace taxon::detail {

// exp(Lambda_ij - c_j) for admissible entries, zero elsewhere; offsets[j] = c_j.
struct ScaledWeights {
  Eigen::MatrixXd linear;
  Eigen::VectorXd offsets;
};

ScaledWeights scale_columns(const WeightMatrix& w);

class LaplacianMinor {
 public:
  // `linear` holds non-negative weights, (n+1)x(n+1), column 0 / diagonal ignored.
  explicit LaplacianMinor(const Eigen::MatrixXd& linear);

  // log det of the minor. Throws NumericalDegeneracy if det <= 0 or non-finite.
  double log_det() const;
  // Edge marginals of the tree distribution with weights `linear`.
  EdgeMarginals marginals() const;

 private:
  Eigen::MatrixXd linear_;
  int n_;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
};

}  // namespace taxon::detail
