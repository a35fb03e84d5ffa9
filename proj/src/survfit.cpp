#include "visitsim/survfit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

namespace visitsim {

int AgRecords::n_events() const {
  return static_cast<int>(std::count(event.begin(), event.end(), char{1}));
}

AgRecords AgRecords::from_gaps(std::span<const GapRecord> records) {
  AgRecords d;
  const auto n = static_cast<Eigen::Index>(records.size());
  const auto p = records.empty() ? Eigen::Index{0}
                                 : static_cast<Eigen::Index>(records.front().covariates.size());
  d.gap.resize(n);
  d.event.resize(records.size());
  d.x.resize(n, p);
  d.cluster.resize(records.size());
  std::unordered_map<std::int64_t, int> index;
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& g = records[static_cast<std::size_t>(r)];
    if (static_cast<Eigen::Index>(g.covariates.size()) != p)
      throw ValidationError("gap records have inconsistent covariate counts");
    if (!(g.gap > 0) || !std::isfinite(g.gap))
      throw ValidationError("gap record with non-positive gap");
    d.gap[r] = g.gap;
    d.event[static_cast<std::size_t>(r)] = g.observed ? 1 : 0;
    for (Eigen::Index k = 0; k < p; ++k) {
      const double v = g.covariates[static_cast<std::size_t>(k)];
      if (!std::isfinite(v)) throw ValidationError("non-finite covariate");
      d.x(r, k) = v;
    }
    auto [it, inserted] = index.try_emplace(g.subject_id, static_cast<int>(d.cluster_ids.size()));
    if (inserted) d.cluster_ids.push_back(g.subject_id);
    d.cluster[static_cast<std::size_t>(r)] = it->second;
  }
  d.order.resize(records.size());
  std::iota(d.order.begin(), d.order.end(), Eigen::Index{0});
  std::stable_sort(d.order.begin(), d.order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return d.gap[a] > d.gap[b]; });
  return d;
}

CoxValue cox_partial_loglik(const Eigen::VectorXd& eta, const AgRecords& data,
                            int exclude_cluster) {
  const auto p = data.n_covariates();
  const auto n = data.size();
  const Eigen::VectorXd lp = data.x * eta;
  double shift = -std::numeric_limits<double>::infinity();
  for (Eigen::Index r = 0; r < n; ++r) shift = std::max(shift, lp[r]);

  CoxValue out;
  out.grad = Eigen::VectorXd::Zero(p);
  out.hess = Eigen::MatrixXd::Zero(p, p);
  double s0 = 0;
  Eigen::VectorXd s1 = Eigen::VectorXd::Zero(p);
  Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(p, p);
  int total_events = 0;

  std::size_t i = 0;
  const auto& ord = data.order;
  while (i < ord.size()) {
    const double g = data.gap[ord[i]];
    int d = 0;
    Eigen::VectorXd xsum = Eigen::VectorXd::Zero(p);
    double lpsum = 0;
    // tied records enter the risk set together
    for (; i < ord.size() && data.gap[ord[i]] == g; ++i) {
      const auto r = ord[i];
      if (data.cluster[static_cast<std::size_t>(r)] == exclude_cluster) continue;
      const double w = std::exp(lp[r] - shift);
      const auto xr = data.x.row(r).transpose();
      s0 += w;
      s1 += w * xr;
      s2.noalias() += w * xr * xr.transpose();
      if (data.event[static_cast<std::size_t>(r)]) {
        ++d;
        xsum += xr;
        lpsum += lp[r];
      }
    }
    if (d == 0) continue;
    total_events += d;
    const Eigen::VectorXd xbar = s1 / s0;
    out.loglik += lpsum - d * (std::log(s0) + shift);
    out.grad += xsum - d * xbar;
    out.hess -= d * (s2 / s0 - xbar * xbar.transpose());
  }
  if (total_events == 0) throw ValidationError("no events");
  return out;
}

CoxValue cox_partial_loglik(const Eigen::VectorXd& eta, std::span<const GapRecord> records) {
  return cox_partial_loglik(eta, AgRecords::from_gaps(records));
}

double CoxFit::robust_se(Eigen::Index k) const {
  return std::sqrt(std::max(robust_cov(k, k), 0.0));
}

namespace {

// Newton-Raphson with step halving over the active (non-dropped) columns.
struct NewtonOutcome {
  Eigen::VectorXd eta;
  CoxValue value;
  int iterations = 0;
  bool converged = false;
  std::string message;
};

NewtonOutcome newton(const AgRecords& data, Eigen::VectorXd eta, const std::vector<bool>& active,
                     int exclude, const AgOptions& opt) {
  const auto p = data.n_covariates();
  auto project = [&](Eigen::VectorXd v) {
    for (Eigen::Index k = 0; k < p; ++k) {
      if (!active[static_cast<std::size_t>(k)]) v[k] = 0;
    }
    return v;
  };
  auto reduced_hess = [&](const Eigen::MatrixXd& h) {
    Eigen::MatrixXd m = h;
    for (Eigen::Index k = 0; k < p; ++k) {
      if (!active[static_cast<std::size_t>(k)]) {
        m.row(k).setZero();
        m.col(k).setZero();
        m(k, k) = -1.0;
      }
    }
    return m;
  };

  // A hazard ratio of e^15 across a covariate's range signals a monotone likelihood.
  auto diverging = [&](const Eigen::VectorXd& e) {
    for (Eigen::Index k = 0; k < p; ++k) {
      if (!active[static_cast<std::size_t>(k)]) continue;
      const auto col = data.x.col(k);
      if (std::abs(e[k]) * (col.maxCoeff() - col.minCoeff()) > 15.0) return true;
    }
    return false;
  };

  NewtonOutcome out;
  out.value = cox_partial_loglik(eta, data, exclude);
  for (out.iterations = 0; out.iterations < opt.max_iter; ++out.iterations) {
    const Eigen::VectorXd g = project(out.value.grad);
    if (g.lpNorm<Eigen::Infinity>() < opt.grad_tol) {
      out.converged = true;
      break;
    }
    const Eigen::MatrixXd h = reduced_hess(out.value.hess);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(-h);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
      out.message = "information matrix not positive definite";
      break;
    }
    Eigen::VectorXd step = project(ldlt.solve(g));
    // Newton decrement: the gradient of a large sum never reaches grad_tol.
    const double decrement = g.dot(step);
    if (decrement < opt.decrement_tol) {
      out.converged = true;
      break;
    }
    bool improved = false;
    for (int half = 0; half < 40; ++half) {
      Eigen::VectorXd trial = eta + step;
      CoxValue v = cox_partial_loglik(trial, data, exclude);
      if (std::isfinite(v.loglik) && v.loglik >= out.value.loglik - 1e-12 * std::abs(out.value.loglik)) {
        eta = std::move(trial);
        out.value = std::move(v);
        improved = true;
        break;
      }
      step *= 0.5;
    }
    if (!improved) {
      out.converged = decrement < 1e-6;
      out.message = "step halving failed";
      break;
    }
    if (diverging(eta)) break;
  }
  if (diverging(eta)) {
    out.converged = false;
    out.message = "monotone likelihood: coefficient diverging";
  }
  if (!out.converged && out.message.empty()) out.message = "maximum iterations reached";
  out.eta = eta;
  return out;
}

std::vector<bool> active_columns(const AgRecords& data) {
  std::vector<bool> active(static_cast<std::size_t>(data.n_covariates()));
  for (Eigen::Index k = 0; k < data.n_covariates(); ++k) {
    const auto col = data.x.col(k);
    active[static_cast<std::size_t>(k)] = col.maxCoeff() > col.minCoeff();
  }
  return active;
}

}  // namespace

Eigen::MatrixXd jackknife_covariance(const Eigen::MatrixXd& loo) {
  const double k = static_cast<double>(loo.rows());
  const Eigen::RowVectorXd mean = loo.colwise().mean();
  const Eigen::MatrixXd centred = loo.rowwise() - mean;
  return (k - 1) / k * centred.transpose() * centred;
}

Eigen::MatrixXd jackknife_estimates(const AgRecords& data, const CoxFit& fit, JackknifeMode mode) {
  const auto p = data.n_covariates();
  std::vector<bool> active(fit.dropped.size());
  for (std::size_t k = 0; k < active.size(); ++k) active[k] = !fit.dropped[k];
  Eigen::MatrixXd loo(data.n_clusters(), p);
  AgOptions opt;
  for (int c = 0; c < data.n_clusters(); ++c) {
    if (mode == JackknifeMode::ExactRefit) {
      loo.row(c) = newton(data, fit.eta, active, c, opt).eta.transpose();
      continue;
    }
    const CoxValue v = cox_partial_loglik(fit.eta, data, c);
    Eigen::MatrixXd info = -v.hess;
    Eigen::VectorXd g = v.grad;
    for (Eigen::Index k = 0; k < p; ++k) {
      if (!active[static_cast<std::size_t>(k)]) {
        info.row(k).setZero();
        info.col(k).setZero();
        info(k, k) = 1.0;
        g[k] = 0;
      }
    }
    loo.row(c) = (fit.eta + info.ldlt().solve(g)).transpose();
  }
  return loo;
}

Eigen::MatrixXd cluster_score_residuals(const AgRecords& data, const Eigen::VectorXd& eta) {
  const auto p = data.n_covariates();
  const auto n = data.size();
  const Eigen::VectorXd lp = data.x * eta;
  const double shift = lp.size() ? lp.maxCoeff() : 0.0;

  // Descending pass: risk-set sums at each distinct event gap.
  struct EventTime {
    double gap;
    int deaths;
    double s0;
    Eigen::VectorXd xbar;
  };
  std::vector<EventTime> times;
  double s0 = 0;
  Eigen::VectorXd s1 = Eigen::VectorXd::Zero(p);
  const auto& ord = data.order;
  for (std::size_t i = 0; i < ord.size();) {
    const double g = data.gap[ord[i]];
    int d = 0;
    for (; i < ord.size() && data.gap[ord[i]] == g; ++i) {
      const auto r = ord[i];
      const double w = std::exp(lp[r] - shift);
      s0 += w;
      s1 += w * data.x.row(r).transpose();
      d += data.event[static_cast<std::size_t>(r)];
    }
    if (d > 0) times.push_back({g, d, s0, s1 / s0});
  }
  std::reverse(times.begin(), times.end());  // ascending gap

  // Cumulative hazard pieces A(g) = sum dL, B(g) = sum xbar dL over times <= g.
  std::vector<double> cum_a(times.size());
  std::vector<Eigen::VectorXd> cum_b(times.size());
  double a = 0;
  Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
  for (std::size_t t = 0; t < times.size(); ++t) {
    const double dl = times[t].deaths / times[t].s0;
    a += dl;
    b += dl * times[t].xbar;
    cum_a[t] = a;
    cum_b[t] = b;
  }

  Eigen::MatrixXd u = Eigen::MatrixXd::Zero(data.n_clusters(), p);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double g = data.gap[r];
    // last event time <= g
    auto it = std::upper_bound(times.begin(), times.end(), g,
                               [](double v, const EventTime& e) { return v < e.gap; });
    if (it == times.begin()) {
      // no event time at or before this gap: no compensator, no event
      continue;
    }
    const auto t = static_cast<std::size_t>(std::distance(times.begin(), it) - 1);
    const Eigen::VectorXd xr = data.x.row(r).transpose();
    const double w = std::exp(lp[r] - shift);
    Eigen::VectorXd res = -w * (xr * cum_a[t] - cum_b[t]);
    if (data.event[static_cast<std::size_t>(r)]) res += xr - times[t].xbar;
    u.row(data.cluster[static_cast<std::size_t>(r)]) += res.transpose();
  }
  return u;
}

CoxFit fit_andersen_gill(const AgRecords& data, const AgOptions& options) {
  CoxFit fit;
  const auto p = data.n_covariates();
  fit.n_events = data.n_events();
  if (fit.n_events == 0) throw ValidationError("no events");
  const auto active = active_columns(data);
  fit.dropped.resize(active.size());
  for (std::size_t k = 0; k < active.size(); ++k) fit.dropped[k] = !active[k];

  auto nr = newton(data, Eigen::VectorXd::Zero(p), active, -1, options);
  fit.eta = nr.eta;
  fit.loglik = nr.value.loglik;
  fit.iterations = nr.iterations;
  fit.converged = nr.converged;
  fit.message = nr.message;
  if (std::any_of(fit.dropped.begin(), fit.dropped.end(), [](bool b) { return b; })) {
    if (!fit.message.empty()) fit.message += "; ";
    fit.message += "covariate without contrast fixed at 0";
  }

  fit.naive_cov = Eigen::MatrixXd::Zero(p, p);
  fit.robust_cov = Eigen::MatrixXd::Zero(p, p);
  if (!fit.converged) return fit;

  // Information restricted to active columns.
  std::vector<Eigen::Index> idx;
  for (Eigen::Index k = 0; k < p; ++k) {
    if (active[static_cast<std::size_t>(k)]) idx.push_back(k);
  }
  const auto m = static_cast<Eigen::Index>(idx.size());
  if (m == 0) return fit;
  Eigen::MatrixXd info(m, m);
  for (Eigen::Index a = 0; a < m; ++a)
    for (Eigen::Index b = 0; b < m; ++b) info(a, b) = -nr.value.hess(idx[a], idx[b]);
  const Eigen::MatrixXd inv = info.ldlt().solve(Eigen::MatrixXd::Identity(m, m));
  for (Eigen::Index a = 0; a < m; ++a)
    for (Eigen::Index b = 0; b < m; ++b) fit.naive_cov(idx[a], idx[b]) = inv(a, b);

  if (options.robust == RobustVariance::Jackknife) {
    fit.robust_cov = jackknife_covariance(jackknife_estimates(data, fit, options.jackknife));
  } else {
    const Eigen::MatrixXd u = cluster_score_residuals(data, fit.eta);
    const double k = static_cast<double>(data.n_clusters());
    Eigen::MatrixXd meat(m, m);
    for (Eigen::Index a = 0; a < m; ++a)
      for (Eigen::Index b = 0; b < m; ++b) meat(a, b) = u.col(idx[a]).dot(u.col(idx[b]));
    const Eigen::MatrixXd v = k / (k - 1) * inv * meat * inv;
    for (Eigen::Index a = 0; a < m; ++a)
      for (Eigen::Index b = 0; b < m; ++b) fit.robust_cov(idx[a], idx[b]) = v(a, b);
  }
  return fit;
}

CoxFit fit_andersen_gill(std::span<const GapRecord> records, const AgOptions& options) {
  return fit_andersen_gill(AgRecords::from_gaps(records), options);
}

}  // namespace visitsim
