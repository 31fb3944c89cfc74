#include "laplacian.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "taxon/error.hpp"
#include "taxon/log.hpp"

namespace taxon::detail {

ScaledWeights scale_columns(const WeightMatrix& w) {
  const int n = w.n();
  ScaledWeights out{Eigen::MatrixXd::Zero(n + 1, n + 1), Eigen::VectorXd::Zero(n + 1)};
  for (int j = 1; j <= n; ++j) {
    double c = -std::numeric_limits<double>::infinity();
    for (int i = 0; i <= n; ++i)
      if (i != j) c = std::max(c, w(i, j));
    out.offsets(j) = c;
    for (int i = 0; i <= n; ++i)
      if (i != j) out.linear(i, j) = std::exp(w(i, j) - c);
  }
  return out;
}

namespace {

Eigen::MatrixXd build_minor(const Eigen::MatrixXd& linear) {
  const int n = static_cast<int>(linear.rows()) - 1;
  Eigen::MatrixXd minor = Eigen::MatrixXd::Zero(n, n);
  for (int j = 1; j <= n; ++j) {
    double in_weight = 0.0;
    for (int i = 0; i <= n; ++i) {
      if (i == j) continue;
      in_weight += linear(i, j);
      if (i >= 1) minor(i - 1, j - 1) = -linear(i, j);
    }
    minor(j - 1, j - 1) = in_weight;
  }
  return minor;
}

}  // namespace

LaplacianMinor::LaplacianMinor(const Eigen::MatrixXd& linear)
    : linear_(linear), n_(static_cast<int>(linear.rows()) - 1), lu_(build_minor(linear)) {
  if (n_ > 0) {
    const double rcond = lu_.rcond();
    if (!(rcond * kConditionWarning >= 1.0)) {
      std::ostringstream msg;
      msg << "Laplacian minor ill-conditioned (reciprocal condition " << rcond << ", n=" << n_
          << ")";
      warn(msg.str());
    }
  }
}

double LaplacianMinor::log_det() const {
  if (n_ == 0) return 0.0;
  const auto& lu = lu_.matrixLU();
  double sign = lu_.permutationP().determinant();
  double log_abs = 0.0;
  for (int k = 0; k < n_; ++k) {
    const double u = lu(k, k);
    if (u < 0) sign = -sign;
    log_abs += std::log(std::abs(u));
  }
  if (!(sign > 0) || !std::isfinite(log_abs)) {
    std::ostringstream msg;
    msg << "Laplacian minor determinant is " << (std::isfinite(log_abs) ? "negative" : "zero")
        << " (n=" << n_ << ", reciprocal condition " << lu_.rcond() << ")";
    throw NumericalDegeneracy(msg.str());
  }
  return log_abs;
}

EdgeMarginals LaplacianMinor::marginals() const {
  EdgeMarginals out(n_);
  if (n_ == 0) return out;
  const Eigen::MatrixXd inv = lu_.inverse();
  if (!inv.allFinite())
    throw NumericalDegeneracy("Laplacian minor inverse is not finite (singular minor)");
  for (int j = 1; j <= n_; ++j) {
    const double diag = inv(j - 1, j - 1);
    for (int i = 0; i <= n_; ++i) {
      if (i == j) continue;
      double p = linear_(i, j) * (i == 0 ? diag : diag - inv(j - 1, i - 1));
      out(i, j) = std::clamp(p, 0.0, 1.0);
    }
  }
  return out;
}

}  // namespace taxon::detail
