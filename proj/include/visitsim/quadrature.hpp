#pragma once

#include <vector>

namespace visitsim {

/// Gauss-Hermite rule for expectations under N(0,1):
/// E[f(X)] ~= sum_k weights[k] * f(nodes[k]).
struct QuadratureRule {
  int order = 0;
  std::vector<double> nodes;
  std::vector<double> weights;

  /// Golub-Welsch construction; order >= 3.
  static QuadratureRule gauss_hermite(int order);
};

}  // namespace visitsim
