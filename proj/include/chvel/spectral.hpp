#pragma once

#include "chvel/grid.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace chvel {

struct EigenBasis {
  Vector eigenvalues;                 // ascending
  std::vector<CoupledField> vectors;  // H-orthonormal
  std::vector<double> residuals;      // |A e - lambda e|_H per pair
};

class EigenSolveError : public std::runtime_error {
 public:
  EigenSolveError(const std::string& what, int index) : std::runtime_error(what), index_(index) {}
  [[nodiscard]] int index() const { return index_; }

 private:
  int index_;
};

inline constexpr double kEigenResidualTol = 1e-8;

/// The k smallest eigenpairs of the generalized problem K e = lambda M e,
/// computed densely through the symmetric similarity M^{-1/2} K M^{-1/2}.
inline EigenBasis eigendecompose_A(const GridPtr& grid, int k) {
  const int n = grid->node_count();
  if (k < 1 || k > n) {
    throw std::invalid_argument("eigendecompose_A: k must lie in [1, " + std::to_string(n) + "]");
  }
  const Vector inv_sqrt_m = grid->mass().cwiseSqrt().cwiseInverse();
  Eigen::MatrixXd s = Eigen::MatrixXd(grid->stiffness());
  s = inv_sqrt_m.asDiagonal() * s * inv_sqrt_m.asDiagonal();
  s = 0.5 * (s + s.transpose());

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
  if (es.info() != Eigen::Success) throw EigenSolveError("eigendecompose_A: dense eigensolver failed", 0);

  EigenBasis basis;
  basis.eigenvalues = es.eigenvalues().head(k);
  for (int j = 0; j < k; ++j) {
    Vector e = inv_sqrt_m.cwiseProduct(es.eigenvectors().col(j));
    e /= grid->norm_H(e);
    // Fix the sign so the component with largest magnitude is positive.
    Eigen::Index arg = 0;
    e.cwiseAbs().maxCoeff(&arg);
    if (e[arg] < 0) e = -e;
    const Vector r = (grid->stiffness() * e).cwiseQuotient(grid->mass()) - basis.eigenvalues[j] * e;
    const double res = grid->norm_H(r);
    if (!(res <= kEigenResidualTol * std::max(1.0, std::abs(basis.eigenvalues[j])))) {
      throw EigenSolveError("eigendecompose_A: eigenpair " + std::to_string(j) +
                                " did not converge (residual " + std::to_string(res) + ")",
                            j);
    }
    basis.residuals.push_back(res);
    basis.vectors.emplace_back(grid, std::move(e));
  }
  return basis;
}

/// Empirical constant of the discrete Poincare-type inequality
/// |v|_V <= C (|(grad v, grad_G v_G)|_H + |mean(v)|), maximised over random
/// fields. Reported only.
inline double poincare_constant_estimate(const GridPtr& grid, int samples, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  double worst = 0.0;
  for (int s = 0; s < samples; ++s) {
    Vector v(grid->node_count());
    // Mix smooth and rough content so both ends of the spectrum are probed.
    const double kx = 2.0 * 3.141592653589793 * (1 + s % 3) / grid->spec().length_x;
    const double shift = normal(rng);
    for (int k = 0; k < v.size(); ++k) {
      v[k] = normal(rng) * (s % 2 == 0 ? 1.0 : 0.05) +
             std::cos(kx * grid->x(grid->ix(k)) + grid->y(grid->iy(k))) + shift;
    }
    const CoupledField f(grid, v);
    const double grad = std::sqrt(grid->form_A(v, v));
    const double denom = grad + std::abs(mean(f));
    if (denom > 0) worst = std::max(worst, grid->norm_V(v) / denom);
  }
  return worst;
}

}  // namespace chvel
