#include "visitsim/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace visitsim {

namespace {

struct LinePoint {
  double alpha;
  double f;
  double dphi;  // directional derivative
  Eigen::VectorXd g;
};

// Cubic interpolation minimiser between two points, clamped to the interval.
double cubic_min(const LinePoint& a, const LinePoint& b) {
  const double d1 = a.dphi + b.dphi - 3 * (a.f - b.f) / (a.alpha - b.alpha);
  const double disc = d1 * d1 - a.dphi * b.dphi;
  const double lo = std::min(a.alpha, b.alpha), hi = std::max(a.alpha, b.alpha);
  if (disc >= 0) {
    const double d2 = std::copysign(std::sqrt(disc), b.alpha - a.alpha);
    const double t = b.alpha - (b.alpha - a.alpha) * (b.dphi + d2 - d1) /
                                   (b.dphi - a.dphi + 2 * d2);
    if (std::isfinite(t) && t > lo + 0.05 * (hi - lo) && t < hi - 0.05 * (hi - lo))
      return t;
  }
  return 0.5 * (lo + hi);
}

class WolfeSearch {
 public:
  WolfeSearch(const Objective& f, const Eigen::VectorXd& x, const Eigen::VectorXd& d,
              double f0, double dphi0, int& evals)
      : f_(f), x_(x), d_(d), f0_(f0), dphi0_(dphi0), evals_(evals) {}

  bool run(double alpha_init, LinePoint& out) {
    LinePoint prev{0.0, f0_, dphi0_, {}};
    double alpha = alpha_init;
    for (int i = 0; i < 30; ++i) {
      LinePoint cur = eval(alpha);
      if (!std::isfinite(cur.f)) {
        alpha *= 0.25;
        if (alpha < 1e-20) return false;
        continue;
      }
      if (cur.f > f0_ + c1_ * alpha * dphi0_ || (i > 0 && cur.f >= prev.f))
        return zoom(prev, cur, out);
      if (std::abs(cur.dphi) <= -c2_ * dphi0_) {
        out = std::move(cur);
        return true;
      }
      if (cur.dphi >= 0) return zoom(cur, prev, out);
      prev = std::move(cur);
      alpha *= 2.0;
    }
    return false;
  }

 private:
  LinePoint eval(double alpha) {
    LinePoint p;
    p.alpha = alpha;
    p.g.resize(x_.size());
    p.f = f_(x_ + alpha * d_, &p.g);
    ++evals_;
    p.dphi = std::isfinite(p.f) ? p.g.dot(d_) : 0.0;
    if (!p.g.allFinite()) p.f = std::numeric_limits<double>::infinity();
    return p;
  }

  bool zoom(LinePoint lo, LinePoint hi, LinePoint& out) {
    for (int i = 0; i < 40; ++i) {
      double alpha = cubic_min(lo, hi);
      if (std::abs(hi.alpha - lo.alpha) < 1e-16 * std::max(1.0, lo.alpha)) break;
      LinePoint cur = eval(alpha);
      if (!std::isfinite(cur.f) || cur.f > f0_ + c1_ * alpha * dphi0_ || cur.f >= lo.f) {
        hi = std::move(cur);
      } else {
        if (std::abs(cur.dphi) <= -c2_ * dphi0_) {
          out = std::move(cur);
          return true;
        }
        if (cur.dphi * (hi.alpha - lo.alpha) >= 0) hi = lo;
        lo = std::move(cur);
      }
    }
    // Accept a point with sufficient decrease even if curvature failed.
    if (lo.alpha > 0 && lo.f < f0_) {
      out = std::move(lo);
      return true;
    }
    return false;
  }

  const Objective& f_;
  const Eigen::VectorXd& x_;
  const Eigen::VectorXd& d_;
  double f0_, dphi0_;
  int& evals_;
  static constexpr double c1_ = 1e-4;
  static constexpr double c2_ = 0.9;
};

}  // namespace

OptimResult minimize_bfgs(const Objective& f, Eigen::VectorXd x0,
                          const OptimOptions& opts,
                          const Eigen::MatrixXd* initial_inverse_hessian) {
  const auto n = x0.size();
  OptimResult res;
  res.x = std::move(x0);
  res.grad.resize(n);
  res.value = f(res.x, &res.grad);
  res.evaluations = 1;
  if (!std::isfinite(res.value) || !res.grad.allFinite()) {
    res.message = "non-finite objective at start";
    return res;
  }

  Eigen::MatrixXd h = Eigen::MatrixXd::Identity(n, n);
  bool fresh = true;
  if (initial_inverse_hessian && initial_inverse_hessian->rows() == n &&
      initial_inverse_hessian->allFinite()) {
    h = *initial_inverse_hessian;
    fresh = false;
  }
  for (res.iterations = 0; res.iterations < opts.max_iter; ++res.iterations) {
    const double gmax = res.grad.lpNorm<Eigen::Infinity>();
    if (gmax <= opts.grad_tol) {
      res.converged = true;
      res.message = "gradient tolerance reached";
      res.inverse_hessian = h;
      return res;
    }
    Eigen::VectorXd d = -h * res.grad;
    double dphi = d.dot(res.grad);
    if (!(dphi < 0)) {
      h.setIdentity();
      fresh = true;
      d = -res.grad;
      dphi = d.dot(res.grad);
    }
    // First step of a fresh metric is kept short.
    const double alpha0 = fresh ? std::min(1.0, 1.0 / std::max(1.0, d.lpNorm<Eigen::Infinity>())) : 1.0;
    LinePoint next;
    WolfeSearch search(f, res.x, d, res.value, dphi, res.evaluations);
    if (!search.run(alpha0, next)) {
      if (!fresh) {
        h.setIdentity();
        fresh = true;
        continue;
      }
      res.converged = gmax <= opts.stall_grad_tol;
      res.message = "line search failed";
      res.inverse_hessian = h;
      return res;
    }
    const Eigen::VectorXd s = next.alpha * d;
    const Eigen::VectorXd y = next.g - res.grad;
    res.x += s;
    res.value = next.f;
    res.grad = next.g;

    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (fresh) {
        h *= sy / y.squaredNorm();
        fresh = false;
      }
      const double rho = 1.0 / sy;
      const Eigen::VectorXd hy = h * y;
      h += (rho * rho * y.dot(hy) + rho) * s * s.transpose() -
           rho * (hy * s.transpose() + s * hy.transpose());
    }
    const double step = s.lpNorm<Eigen::Infinity>() /
                        (1.0 + res.x.lpNorm<Eigen::Infinity>());
    if (step < opts.param_tol) {
      const double g = res.grad.lpNorm<Eigen::Infinity>();
      res.converged = g <= opts.stall_grad_tol;
      res.message = g <= opts.grad_tol ? "gradient tolerance reached"
                                       : "parameter tolerance reached";
      ++res.iterations;
      res.inverse_hessian = h;
      return res;
    }
  }
  res.converged = res.grad.lpNorm<Eigen::Infinity>() <= opts.grad_tol;
  res.message = "maximum iterations reached";
  res.inverse_hessian = h;
  return res;
}

Eigen::MatrixXd hessian_from_gradient(const Objective& f, const Eigen::VectorXd& x,
                                      double rel_step) {
  const auto n = x.size();
  Eigen::MatrixXd hess(n, n);
  Eigen::VectorXd gp(n), gm(n);
  Eigen::VectorXd xp = x;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double h = rel_step * std::max(1.0, std::abs(x[i]));
    xp[i] = x[i] + h;
    f(xp, &gp);
    xp[i] = x[i] - h;
    f(xp, &gm);
    xp[i] = x[i];
    hess.col(i) = (gp - gm) / (2 * h);
  }
  return 0.5 * (hess + hess.transpose());
}

bool invert_spd(const Eigen::MatrixXd& a, Eigen::MatrixXd& inv) {
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) return false;
  inv = llt.solve(Eigen::MatrixXd::Identity(a.rows(), a.cols()));
  return inv.allFinite();
}

}  // namespace visitsim
