#include "visitsim/jointfit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "visitsim/lmm.hpp"
#include "visitsim/survfit.hpp"

namespace visitsim {

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112;
}

const std::array<const char*, JointParams::kCount>& JointParams::packed_names() {
  static const std::array<const char*, kCount> names = {
      "alpha0", "alpha1", "alpha2", "gamma", "log_sigma_v", "log_sigma_e",
      "beta", "log_lambda", "log_p", "log_sigma_u"};
  return names;
}

Eigen::VectorXd JointParams::to_vector() const {
  Eigen::VectorXd v(kCount);
  v << alpha0, alpha1, alpha2, gamma, log_sigma_v, log_sigma_e, beta, log_lambda, log_p,
      log_sigma_u;
  return v;
}

JointParams JointParams::from_vector(const Eigen::VectorXd& v) {
  if (v.size() != kCount) throw ValidationError("joint parameter vector has wrong length");
  JointParams p;
  p.alpha0 = v[kAlpha0];
  p.alpha1 = v[kAlpha1];
  p.alpha2 = v[kAlpha2];
  p.gamma = v[kGamma];
  p.log_sigma_v = v[kLogSigmaV];
  p.log_sigma_e = v[kLogSigmaE];
  p.beta = v[kBeta];
  p.log_lambda = v[kLogLambda];
  p.log_p = v[kLogP];
  p.log_sigma_u = v[kLogSigmaU];
  return p;
}

JointData::JointData(const PanelDataset& panel) {
  subjects_.reserve(panel.n_subjects());
  for (const auto& s : panel.subjects()) {
    SubjectBlock b{};
    b.z = s.treatment;
    b.n = static_cast<int>(s.n_visits());
    b.events = b.n - 1;
    b.gap_begin = gaps_.size();
    b.row_begin = time_.size();
    for (std::size_t j = 1; j <= s.n_visits(); ++j) {
      const double end = j < s.n_visits() ? s.visit_times[j] : s.censoring_time;
      const double g = end - s.visit_times[j - 1];
      gaps_.push_back(g);
      log_gaps_.push_back(std::log(g));
      if (j < s.n_visits()) b.sum_log_gap += log_gaps_.back();
    }
    b.gap_end = gaps_.size();
    for (std::size_t j = 0; j < s.n_visits(); ++j) {
      time_.push_back(s.visit_times[j]);
      y_.push_back(s.outcomes[j]);
    }
    subjects_.push_back(b);
    ids_.push_back(s.id);
  }
}

namespace {

struct Unpacked {
  double a0, a1, a2, gamma, s2v, s2e, beta, lambda, log_lambda, p, log_p, sigma_u;
  explicit Unpacked(const Eigen::VectorXd& t)
      : a0(t[JointParams::kAlpha0]),
        a1(t[JointParams::kAlpha1]),
        a2(t[JointParams::kAlpha2]),
        gamma(t[JointParams::kGamma]),
        s2v(std::exp(2 * t[JointParams::kLogSigmaV])),
        s2e(std::exp(2 * t[JointParams::kLogSigmaE])),
        beta(t[JointParams::kBeta]),
        lambda(std::exp(t[JointParams::kLogLambda])),
        log_lambda(t[JointParams::kLogLambda]),
        p(std::exp(t[JointParams::kLogP])),
        log_p(t[JointParams::kLogP]),
        sigma_u(std::exp(t[JointParams::kLogSigmaU])) {}
};

// Subject-level pieces that do not depend on the node.
struct SubjectTerms {
  double n, z, d;
  double sum_r, sum_r2;       // residuals y - X alpha
  Eigen::Vector3d xr, sx;     // X'r, X'1
  double g_p, g_p_log;        // sum g^p, sum g^p log g over all gaps
  double mu;                  // lambda exp(beta z) sum g^p
  double den, c;              // sigma_e^2 + n sigma_v^2, sigma_v^2 / den
  double rec_const, lon_const;
  double sum_log_gap;
};

}  // namespace

namespace detail {

template <typename Block>
SubjectTerms subject_terms(const Unpacked& q, const Block& b, const std::vector<double>& gaps,
                           const std::vector<double>& log_gaps, const std::vector<double>& time,
                           const std::vector<double>& y) {
  SubjectTerms s{};
  s.n = b.n;
  s.z = b.z;
  s.d = b.events;
  s.sum_log_gap = b.sum_log_gap;
  s.xr.setZero();
  double sum_t = 0;
  for (int j = 0; j < b.n; ++j) {
    const double t = time[b.row_begin + static_cast<std::size_t>(j)];
    const double r = y[b.row_begin + static_cast<std::size_t>(j)] - q.a0 - q.a1 * s.z - q.a2 * t;
    s.sum_r += r;
    s.sum_r2 += r * r;
    s.xr[2] += t * r;
    sum_t += t;
  }
  s.xr[0] = s.sum_r;
  s.xr[1] = s.z * s.sum_r;
  s.sx << s.n, s.n * s.z, sum_t;
  for (std::size_t k = b.gap_begin; k < b.gap_end; ++k) {
    const double gp = std::exp(q.p * log_gaps[k]);
    s.g_p += gp;
    s.g_p_log += gp * log_gaps[k];
  }
  (void)gaps;
  s.mu = q.lambda * std::exp(q.beta * s.z) * s.g_p;
  s.den = q.s2e + s.n * q.s2v;
  s.c = q.s2v / s.den;
  s.rec_const = s.d * (q.log_lambda + q.log_p + q.beta * s.z) + (q.p - 1) * s.sum_log_gap;
  s.lon_const = -0.5 * (s.n * kLog2Pi + (s.n - 1) * std::log(q.s2e) + std::log(s.den));
  return s;
}

}  // namespace detail

namespace {

inline double rec_at(const SubjectTerms& s, double u) {
  return s.rec_const + s.d * u - s.mu * std::exp(u);
}

inline double lon_at(const SubjectTerms& s, const Unpacked& q, double u) {
  const double se = s.sum_r - s.n * q.gamma * u;
  const double se2 = s.sum_r2 - 2 * q.gamma * u * s.sum_r + s.n * q.gamma * q.gamma * u * u;
  return s.lon_const - 0.5 * (se2 - s.c * se * se) / q.s2e;
}

double log_sum_exp(const double* v, std::size_t n) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < n; ++k) m = std::max(m, v[k]);
  if (!std::isfinite(m)) return m;
  double acc = 0;
  for (std::size_t k = 0; k < n; ++k) acc += std::exp(v[k] - m);
  return m + std::log(acc);
}

}  // namespace

double JointData::loglik(const Eigen::VectorXd& theta, const QuadratureRule& rule,
                         const Centering* centering, Eigen::VectorXd* grad,
                         std::vector<double>* per_subject) const {
  const Unpacked q(theta);
  const auto order = static_cast<std::size_t>(rule.order);
  std::vector<double> log_w(order), terms(order);
  for (std::size_t k = 0; k < order; ++k) log_w[k] = std::log(rule.weights[k]);
  if (grad) grad->setZero(JointParams::kCount);
  if (per_subject) per_subject->assign(subjects_.size(), 0.0);
  const bool adaptive = centering != nullptr;
  const double log_sigma_u = theta[JointParams::kLogSigmaU];
  const double s2u = q.sigma_u * q.sigma_u;

  double total = 0;
  Eigen::Matrix<double, JointParams::kCount, 1> dt;
  for (std::size_t i = 0; i < subjects_.size(); ++i) {
    const auto s = detail::subject_terms(q, subjects_[i], gaps_, log_gaps_, time_, y_);
    const double m = adaptive ? centering->centre[i] : 0.0;
    const double sc = adaptive ? centering->scale[i] : q.sigma_u;
    for (std::size_t k = 0; k < order; ++k) {
      const double z = rule.nodes[k];
      const double u = m + sc * z;
      double t = log_w[k] + rec_at(s, u) + lon_at(s, q, u);
      if (adaptive) {
        // importance ratio N(u; 0, sigma_u^2) / N(z; 0, 1), times the Jacobian
        t += std::log(sc) - log_sigma_u - 0.5 * u * u / s2u + 0.5 * z * z;
      }
      terms[k] = t;
    }
    const double li = log_sum_exp(terms.data(), order);
    if (!std::isfinite(li))
      throw NumericalError("joint log-likelihood not finite for subject " +
                           std::to_string(ids_[i]));
    total += li;
    if (per_subject) (*per_subject)[i] = li;
    if (!grad) continue;

    const double eb = std::exp(q.beta * s.z);
    for (std::size_t k = 0; k < order; ++k) {
      const double w = std::exp(terms[k] - li);
      if (w < 1e-300) continue;
      const double u = m + sc * rule.nodes[k];
      const double eu = std::exp(u);
      const double se = s.sum_r - s.n * q.gamma * u;
      const double se2 = s.sum_r2 - 2 * q.gamma * u * s.sum_r + s.n * q.gamma * q.gamma * u * u;
      const double hazard_part = s.d - s.mu * eu;
      const Eigen::Vector3d da = (s.xr - q.gamma * u * s.sx - s.c * se * s.sx) / q.s2e;
      dt[JointParams::kAlpha0] = da[0];
      dt[JointParams::kAlpha1] = da[1];
      dt[JointParams::kAlpha2] = da[2];
      dt[JointParams::kGamma] = u * se / s.den;
      const double ds2v = -0.5 * s.n / s.den + 0.5 * (se / s.den) * (se / s.den);
      const double ds2e = -0.5 * s.n * (1 - s.c) / q.s2e +
                          0.5 * (se2 - (2 * s.c - s.c * s.c * s.n) * se * se) / (q.s2e * q.s2e);
      dt[JointParams::kLogSigmaV] = 2 * q.s2v * ds2v;
      dt[JointParams::kLogSigmaE] = 2 * q.s2e * ds2e;
      dt[JointParams::kBeta] = s.z * hazard_part;
      dt[JointParams::kLogLambda] = hazard_part;
      dt[JointParams::kLogP] = s.d + q.p * s.sum_log_gap - q.p * q.lambda * eb * eu * s.g_p_log;
      if (adaptive) {
        dt[JointParams::kLogSigmaU] = -1.0 + u * u / s2u;
      } else {
        dt[JointParams::kLogSigmaU] = (hazard_part + q.gamma * se / s.den) * u;
      }
      *grad += w * dt;
    }
  }
  return total;
}

double JointData::recurrent_loglik(const Eigen::VectorXd& theta, const QuadratureRule& rule) const {
  const Unpacked q(theta);
  const auto order = static_cast<std::size_t>(rule.order);
  std::vector<double> terms(order);
  double total = 0;
  for (const auto& b : subjects_) {
    const auto s = detail::subject_terms(q, b, gaps_, log_gaps_, time_, y_);
    for (std::size_t k = 0; k < order; ++k)
      terms[k] = std::log(rule.weights[k]) + rec_at(s, q.sigma_u * rule.nodes[k]);
    total += log_sum_exp(terms.data(), order);
  }
  return total;
}

Centering JointData::centre(const Eigen::VectorXd& theta) const {
  const Unpacked q(theta);
  const double prec_u = 1.0 / (q.sigma_u * q.sigma_u);
  Centering c;
  c.centre.resize(subjects_.size());
  c.scale.resize(subjects_.size());
  for (std::size_t i = 0; i < subjects_.size(); ++i) {
    const auto s = detail::subject_terms(q, subjects_[i], gaps_, log_gaps_, time_, y_);
    const double lon_curv = s.n * q.gamma * q.gamma / s.den;
    // h(u) is strictly concave; damped Newton from 0.
    double u = 0;
    double h2 = 0;
    for (int it = 0; it < 100; ++it) {
      const double eu = std::exp(u);
      const double h1 = s.d - s.mu * eu + q.gamma * (s.sum_r - s.n * q.gamma * u) / s.den -
                        u * prec_u;
      h2 = -s.mu * eu - lon_curv - prec_u;
      double step = -h1 / h2;
      step = std::clamp(step, -3.0, 3.0);
      u += step;
      if (std::abs(step) < 1e-10) break;
    }
    h2 = -s.mu * std::exp(u) - lon_curv - prec_u;
    c.centre[i] = u;
    c.scale[i] = 1.0 / std::sqrt(-h2);
  }
  return c;
}

double joint_loglik(const JointParams& params, const PanelDataset& panel,
                    const QuadratureRule& rule, QuadratureMode mode) {
  const JointData data(panel);
  const Eigen::VectorXd theta = params.to_vector();
  if (mode == QuadratureMode::Adaptive) {
    const auto c = data.centre(theta);
    return data.loglik(theta, rule, &c, nullptr);
  }
  return data.loglik(theta, rule, nullptr, nullptr);
}

// ---------------------------------------------------------------------------

Eigen::Vector3d fit_weibull_gaps(const PanelDataset& panel, double beta_start) {
  struct Row {
    double z, d, sum_log_gap;
    std::vector<double> log_gaps;
  };
  std::vector<Row> rows;
  double events = 0, exposure = 0;
  for (const auto& s : panel.subjects()) {
    Row r{static_cast<double>(s.treatment), static_cast<double>(s.n_visits() - 1), 0.0, {}};
    for (std::size_t j = 1; j <= s.n_visits(); ++j) {
      const double end = j < s.n_visits() ? s.visit_times[j] : s.censoring_time;
      const double lg = std::log(end - s.visit_times[j - 1]);
      r.log_gaps.push_back(lg);
      if (j < s.n_visits()) r.sum_log_gap += lg;
    }
    events += r.d;
    exposure += s.censoring_time;
    rows.push_back(std::move(r));
  }
  const Objective negll = [&](const Eigen::VectorXd& th, Eigen::VectorXd* g) {
    const double beta = th[0], lam = std::exp(th[1]), p = std::exp(th[2]);
    double ll = 0;
    Eigen::Vector3d grad = Eigen::Vector3d::Zero();
    for (const auto& r : rows) {
      double gp = 0, gpl = 0;
      for (double lg : r.log_gaps) {
        const double e = std::exp(p * lg);
        gp += e;
        gpl += e * lg;
      }
      const double eb = std::exp(beta * r.z);
      ll += r.d * (th[1] + th[2] + beta * r.z) + (p - 1) * r.sum_log_gap - lam * eb * gp;
      grad[0] += r.z * (r.d - lam * eb * gp);
      grad[1] += r.d - lam * eb * gp;
      grad[2] += r.d + p * r.sum_log_gap - p * lam * eb * gpl;
    }
    if (g) *g = -grad;
    return -ll;
  };
  Eigen::VectorXd start(3);
  start << beta_start, std::log(std::max(events, 1.0) / exposure), 0.0;
  const auto opt = minimize_bfgs(negll, start);
  return opt.x;
}

JointParams joint_start_values(const PanelDataset& panel) {
  JointParams p;
  const FitResult d = fit_lmm(panel, LmmSpec{CountAdjustment::None});
  p.alpha0 = d.estimate("alpha0");
  p.alpha1 = d.estimate("alpha1");
  p.alpha2 = d.estimate("alpha2");
  p.log_sigma_v = 0.5 * std::log(std::max(d.estimate("sigma2_v"), 1e-4));
  p.log_sigma_e = 0.5 * std::log(std::max(d.estimate("sigma2_e"), 1e-4));

  double eta = 0;
  const auto& gaps = panel.gap_records();
  if (std::any_of(gaps.begin(), gaps.end(), [](const GapRecord& g) { return g.observed; })) {
    AgOptions ag;
    ag.robust = RobustVariance::Sandwich;  // only the point estimate is used
    const CoxFit cox = fit_andersen_gill(gaps, ag);
    if (cox.converged && cox.eta.size() > 0) eta = cox.eta[0];
  }
  const Eigen::Vector3d w = fit_weibull_gaps(panel, eta);
  p.beta = w[0];
  p.log_lambda = w[1];
  p.log_p = w[2];
  p.gamma = 0.0;
  p.log_sigma_u = std::log(0.5);
  return p;
}

FitResult fit_joint(const PanelDataset& panel, const JointFitOptions& options) {
  return fit_joint(panel, options, nullptr);
}

FitResult fit_joint(const PanelDataset& panel, const JointFitOptions& options,
                    Eigen::VectorXd* packed_estimate) {
  if (panel.n_subjects() < 2) throw ValidationError("fit_joint needs at least 2 subjects");
  const JointData data(panel);
  const auto rule = QuadratureRule::gauss_hermite(options.quadrature_order);
  Eigen::VectorXd theta = joint_start_values(panel).to_vector();

  Centering centering;
  const Centering* cptr = nullptr;
  const Objective negll = [&](const Eigen::VectorXd& th, Eigen::VectorXd* g) {
    double v;
    try {
      v = data.loglik(th, rule, cptr, g);
    } catch (const NumericalError&) {
      if (g) g->setConstant(JointParams::kCount, std::nan(""));
      return std::numeric_limits<double>::infinity();
    }
    if (g) *g = -*g;
    return -v;
  };

  FitResult fit;
  fit.model = ModelLabel::A;
  OptimResult opt;
  bool stable = true;
  if (options.mode == QuadratureMode::Fixed) {
    opt = minimize_bfgs(negll, theta, options.optim);
    fit.iterations = opt.iterations;
  } else {
    stable = false;
    Eigen::MatrixXd metric;
    for (int round = 0; round < options.max_recentre; ++round) {
      centering = data.centre(theta);
      cptr = &centering;
      opt = minimize_bfgs(negll, theta, options.optim, round == 0 ? nullptr : &metric);
      fit.iterations += opt.iterations;
      metric = opt.inverse_hessian;
      const double moved = (opt.x - theta).lpNorm<Eigen::Infinity>();
      theta = opt.x;
      if (!opt.converged) break;
      if (round > 0 && moved < 1e-6) {
        stable = true;
        break;
      }
    }
  }
  theta = opt.x;
  fit.loglik = -opt.value;

  using P = JointParams;
  // A variance component that collapsed onto zero sits on the boundary; its
  // log-scale coordinate has no curvature, so it is held fixed for the SEs.
  std::vector<int> free;
  for (int k = 0; k < P::kCount; ++k) {
    const bool at_boundary = (k == P::kLogSigmaV || k == P::kLogSigmaU) &&
                             theta[k] - theta[P::kLogSigmaE] < std::log(1e-4);
    if (!at_boundary) free.push_back(k);
  }
  const Eigen::MatrixXd full_info = hessian_from_gradient(negll, theta);
  const auto m = static_cast<Eigen::Index>(free.size());
  Eigen::MatrixXd info(m, m), reduced_cov;
  for (Eigen::Index a = 0; a < m; ++a) {
    for (Eigen::Index b = 0; b < m; ++b) info(a, b) = full_info(free[a], free[b]);
  }
  const bool pd = info.allFinite() && invert_spd(info, reduced_cov);
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(P::kCount, P::kCount);
  if (pd) {
    for (Eigen::Index a = 0; a < m; ++a) {
      for (Eigen::Index b = 0; b < m; ++b) cov(free[a], free[b]) = reduced_cov(a, b);
    }
  }
  fit.converged = opt.converged && stable && pd && std::isfinite(opt.value);

  auto se = [&](int k) { return pd ? std::sqrt(std::max(cov(k, k), 0.0)) : std::nan(""); };
  fit.add("alpha0", theta[P::kAlpha0], se(P::kAlpha0));
  fit.add("alpha1", theta[P::kAlpha1], se(P::kAlpha1));
  fit.add("alpha2", theta[P::kAlpha2], se(P::kAlpha2));
  fit.add("gamma", theta[P::kGamma], se(P::kGamma));
  fit.add("beta", theta[P::kBeta], se(P::kBeta));
  const double lambda = std::exp(theta[P::kLogLambda]);
  const double p = std::exp(theta[P::kLogP]);
  fit.add("lambda", lambda, lambda * se(P::kLogLambda));
  fit.add("p", p, p * se(P::kLogP));
  const double s2u = std::exp(2 * theta[P::kLogSigmaU]);
  const double s2v = std::exp(2 * theta[P::kLogSigmaV]);
  const double s2e = std::exp(2 * theta[P::kLogSigmaE]);
  fit.add("sigma2_u", s2u, 2 * s2u * se(P::kLogSigmaU));
  fit.add("sigma2_v", s2v, 2 * s2v * se(P::kLogSigmaV));
  fit.add("sigma2_e", s2e, 2 * s2e * se(P::kLogSigmaE));
  if (packed_estimate) *packed_estimate = theta;
  return fit;
}

}  // namespace visitsim
