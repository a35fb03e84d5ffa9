#include "visitsim/quadrature.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <numeric>

#include "visitsim/domain.hpp"

namespace visitsim {

QuadratureRule QuadratureRule::gauss_hermite(int order) {
  if (order < 3) throw ValidationError("quadrature order must be >= 3");
  // Jacobi matrix of the probabilists' Hermite polynomials.
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(order, order);
  for (int k = 1; k < order; ++k) {
    jacobi(k, k - 1) = jacobi(k - 1, k) = std::sqrt(static_cast<double>(k));
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi);
  QuadratureRule rule;
  rule.order = order;
  rule.nodes.resize(static_cast<std::size_t>(order));
  rule.weights.resize(static_cast<std::size_t>(order));
  for (int k = 0; k < order; ++k) {
    rule.nodes[static_cast<std::size_t>(k)] = eig.eigenvalues()[k];
    const double v = eig.eigenvectors()(0, k);
    rule.weights[static_cast<std::size_t>(k)] = v * v;
  }
  // Exact symmetry about 0.
  const auto n = static_cast<std::size_t>(order);
  for (std::size_t k = 0; k < n / 2; ++k) {
    const double x = 0.5 * (rule.nodes[n - 1 - k] - rule.nodes[k]);
    const double w = 0.5 * (rule.weights[n - 1 - k] + rule.weights[k]);
    rule.nodes[k] = -x;
    rule.nodes[n - 1 - k] = x;
    rule.weights[k] = rule.weights[n - 1 - k] = w;
  }
  if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
  const double total = std::accumulate(rule.weights.begin(), rule.weights.end(), 0.0);
  for (auto& w : rule.weights) w /= total;
  return rule;
}

}  // namespace visitsim
