#include "doctest.h"

#include <cmath>

#include "visitsim/quadrature.hpp"

using namespace visitsim;

namespace {

// E[X^k] for X ~ N(0,1): (k-1)!! for even k, 0 for odd k.
double normal_moment(int k) {
  if (k % 2) return 0.0;
  double m = 1;
  for (int j = k - 1; j > 1; j -= 2) m *= j;
  return m;
}

}  // namespace

TEST_CASE("Gauss-Hermite rules are normalised, symmetric and exact to degree 2n-1") {
  for (int order : {3, 5, 10, 25, 50, 80}) {
    const auto r = QuadratureRule::gauss_hermite(order);
    REQUIRE(r.nodes.size() == static_cast<std::size_t>(order));
    double total = 0;
    for (double w : r.weights) {
      CHECK(w > 0);
      total += w;
    }
    CHECK(std::abs(total - 1.0) < 1e-12);
    for (int k = 0; k < order; ++k) {
      CHECK(r.nodes[k] == -r.nodes[order - 1 - k]);
      if (k > 0) CHECK(r.nodes[k] > r.nodes[k - 1]);
    }
    for (int deg = 0; deg <= std::min(2 * order - 1, 20); ++deg) {
      // odd moments cancel large terms; scale the tolerance by their size
      double m = 0, scale = 1;
      for (int k = 0; k < order; ++k) {
        m += r.weights[k] * std::pow(r.nodes[k], deg);
        scale += r.weights[k] * std::pow(std::abs(r.nodes[k]), deg);
      }
      CHECK_MESSAGE(std::abs(m - normal_moment(deg)) < 1e-12 * scale,
                    "order " << order << " degree " << deg);
    }
  }
  // E[exp(X)] = exp(1/2)
  const auto r = QuadratureRule::gauss_hermite(25);
  double m = 0;
  for (int k = 0; k < 25; ++k) m += r.weights[k] * std::exp(r.nodes[k]);
  CHECK(std::abs(m - std::exp(0.5)) < 1e-13);
  CHECK_THROWS(QuadratureRule::gauss_hermite(2));
}
