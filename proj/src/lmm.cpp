#include "visitsim/lmm.hpp"

#include <cmath>
#include <vector>

namespace visitsim {

LmmSpec LmmSpec::for_model(ModelLabel m) {
  switch (m) {
    case ModelLabel::B: return {CountAdjustment::TotalCountCentered};
    case ModelLabel::C: return {CountAdjustment::CumulativeCount};
    case ModelLabel::D: return {CountAdjustment::None};
    default: throw ValidationError("model is not a linear mixed model");
  }
}

ModelLabel LmmSpec::model() const {
  switch (adjustment) {
    case CountAdjustment::TotalCountCentered: return ModelLabel::B;
    case CountAdjustment::CumulativeCount: return ModelLabel::C;
    case CountAdjustment::None: break;
  }
  return ModelLabel::D;
}

void check_full_column_rank(const Eigen::MatrixXd& x, const std::vector<std::string>& names) {
  for (Eigen::Index k = 1; k <= x.cols(); ++k) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x.leftCols(k));
    qr.setThreshold(1e-10);
    if (qr.rank() < k) {
      throw NumericalError("singular design: column '" + names[static_cast<std::size_t>(k - 1)] +
                           "' is collinear with preceding columns");
    }
  }
}

LmmDesign LmmDesign::from_panel(const PanelDataset& panel, const LmmSpec& spec) {
  LmmDesign d;
  d.names = {"alpha0", "alpha1", "alpha2"};
  if (spec.adjustment != CountAdjustment::None) d.names.push_back("alpha3");
  const auto q = static_cast<Eigen::Index>(d.names.size());
  const auto n = static_cast<Eigen::Index>(panel.n_rows());
  d.x.resize(n, q);
  d.y.resize(n);
  d.offsets.reserve(panel.n_subjects() + 1);

  double mean_count = 0;
  for (const auto& s : panel.subjects()) mean_count += static_cast<double>(s.n_visits());
  mean_count /= static_cast<double>(panel.n_subjects());

  Eigen::Index row = 0;
  for (const auto& s : panel.subjects()) {
    d.offsets.push_back(row);
    for (std::size_t j = 0; j < s.n_visits(); ++j, ++row) {
      d.x(row, 0) = 1.0;
      d.x(row, 1) = s.treatment;
      d.x(row, 2) = s.visit_times[j];
      if (spec.adjustment == CountAdjustment::TotalCountCentered)
        d.x(row, 3) = static_cast<double>(s.n_visits()) - mean_count;
      else if (spec.adjustment == CountAdjustment::CumulativeCount)
        d.x(row, 3) = static_cast<double>(j + 1);  // visits with time <= t_ij
      d.y(row) = s.outcomes[j];
    }
  }
  d.offsets.push_back(row);
  check_full_column_rank(d.x, d.names);
  return d;
}

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

double loglik_impl(const Eigen::VectorXd& alpha, double s2v, double s2e,
                   const LmmDesign& design, Eigen::VectorXd* grad) {
  const Eigen::VectorXd r = design.y - design.x * alpha;
  const auto q = design.n_coef();
  double ll = 0;
  Eigen::VectorXd g_alpha = Eigen::VectorXd::Zero(q);
  double g_s2v = 0, g_s2e = 0;
  for (Eigen::Index i = 0; i < design.n_subjects(); ++i) {
    const Eigen::Index b = design.offsets[static_cast<std::size_t>(i)];
    const Eigen::Index n = design.offsets[static_cast<std::size_t>(i) + 1] - b;
    const auto ri = r.segment(b, n);
    const double nn = static_cast<double>(n);
    const double sum = ri.sum();
    const double sumsq = ri.squaredNorm();
    const double den = s2e + nn * s2v;
    const double c = s2v / den;
    ll -= 0.5 * (nn * kLog2Pi + (nn - 1) * std::log(s2e) + std::log(den) +
                 (sumsq - c * sum * sum) / s2e);
    if (grad) {
      const auto xi = design.x.middleRows(b, n);
      g_alpha += (xi.transpose() * ri - c * sum * xi.colwise().sum().transpose()) / s2e;
      g_s2v += -0.5 * nn / den + 0.5 * (sum / den) * (sum / den);
      const double vr2 = (sumsq - (2 * c - c * c * nn) * sum * sum) / (s2e * s2e);
      g_s2e += -0.5 * nn * (1 - c) / s2e + 0.5 * vr2;
    }
  }
  if (grad) {
    grad->resize(q + 2);
    grad->head(q) = g_alpha;
    (*grad)[q] = 2 * s2v * g_s2v;
    (*grad)[q + 1] = 2 * s2e * g_s2e;
  }
  return ll;
}

// Generalised least squares for alpha at fixed variances.
Eigen::VectorXd gls_alpha(const LmmDesign& design, double s2v, double s2e) {
  const auto q = design.n_coef();
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(q, q);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(q);
  for (Eigen::Index i = 0; i < design.n_subjects(); ++i) {
    const Eigen::Index o = design.offsets[static_cast<std::size_t>(i)];
    const Eigen::Index n = design.offsets[static_cast<std::size_t>(i) + 1] - o;
    const auto xi = design.x.middleRows(o, n);
    const auto yi = design.y.segment(o, n);
    const double c = s2v / (s2e + static_cast<double>(n) * s2v);
    const Eigen::VectorXd xsum = xi.colwise().sum().transpose();
    a.noalias() += xi.transpose() * xi - c * xsum * xsum.transpose();
    b.noalias() += xi.transpose() * yi - c * yi.sum() * xsum;
  }
  return a.ldlt().solve(b);
}

}  // namespace

double lmm_loglik(const LmmParams& params, const LmmDesign& design) {
  if (!(params.sigma2_v > 0) || !(params.sigma2_e > 0))
    throw ValidationError("lmm_loglik: variances must be positive");
  if (params.alpha.size() != design.n_coef())
    throw ValidationError("lmm_loglik: coefficient vector has wrong length");
  return loglik_impl(params.alpha, params.sigma2_v, params.sigma2_e, design, nullptr);
}

double lmm_loglik(const LmmParams& params, const PanelDataset& panel, const LmmSpec& spec) {
  return lmm_loglik(params, LmmDesign::from_panel(panel, spec));
}

double lmm_loglik_packed(const Eigen::VectorXd& theta, const LmmDesign& design,
                         Eigen::VectorXd* grad) {
  const auto q = design.n_coef();
  return loglik_impl(theta.head(q), std::exp(2 * theta[q]), std::exp(2 * theta[q + 1]),
                     design, grad);
}

FitResult fit_lmm(const PanelDataset& panel, const LmmSpec& spec,
                  const LmmFitOptions& options) {
  if (panel.n_subjects() < 2) throw ValidationError("fit_lmm needs at least 2 subjects");
  return fit_lmm(LmmDesign::from_panel(panel, spec), spec.model(), options);
}

FitResult fit_lmm(const LmmDesign& design, ModelLabel label, const LmmFitOptions& options) {
  const auto q = design.n_coef();
  // alpha is profiled out by GLS, so the search runs over the two log SDs
  // only and stays well scaled however small the variances are.
  const Eigen::VectorXd ols = design.x.colPivHouseholderQr().solve(design.y);
  const Eigen::VectorXd res = design.y - design.x * ols;
  const double floor = 1e-20 * std::max(1.0, design.y.squaredNorm() / static_cast<double>(design.y.size()));
  const double var = std::max(res.squaredNorm() / static_cast<double>(res.size()), floor);
  Eigen::Vector2d psi0;
  psi0.setConstant(0.5 * std::log(0.5 * var));

  const Objective profile = [&](const Eigen::VectorXd& psi, Eigen::VectorXd* g) {
    const double s2v = std::exp(2 * psi[0]), s2e = std::exp(2 * psi[1]);
    const Eigen::VectorXd alpha = gls_alpha(design, s2v, s2e);
    Eigen::VectorXd full;
    const double v = loglik_impl(alpha, s2v, s2e, design, g ? &full : nullptr);
    if (g) *g = -full.tail(2);
    return -v;
  };
  auto opt = minimize_bfgs(profile, psi0, options.optim);

  // Newton polish on the profile score; function values near the optimum are
  // too flat for the line search to resolve the last digits.
  for (int it = 0; it < 8 && opt.x.allFinite(); ++it) {
    Eigen::VectorXd g;
    profile(opt.x, &g);
    if (g.lpNorm<Eigen::Infinity>() < 1e-12) break;
    const Eigen::MatrixXd h = hessian_from_gradient(profile, opt.x);
    Eigen::MatrixXd hinv;
    if (!invert_spd(h, hinv)) break;
    const Eigen::VectorXd trial = opt.x - hinv * g;
    Eigen::VectorXd gt;
    const double vt = profile(trial, &gt);
    if (!(gt.lpNorm<Eigen::Infinity>() < g.lpNorm<Eigen::Infinity>())) break;
    opt.x = trial;
    opt.value = vt;
    opt.grad = gt;
    if (gt.lpNorm<Eigen::Infinity>() <= options.optim.grad_tol) opt.converged = true;
  }

  Eigen::VectorXd theta(q + 2);
  theta.head(q) = gls_alpha(design, std::exp(2 * opt.x[0]), std::exp(2 * opt.x[1]));
  theta.tail(2) = opt.x;

  FitResult fit;
  fit.model = label;
  fit.iterations = opt.iterations;
  fit.loglik = -opt.value;

  const Objective negll = [&](const Eigen::VectorXd& th, Eigen::VectorXd* g) {
    const double v = lmm_loglik_packed(th, design, g);
    if (g) *g = -*g;
    return -v;
  };
  // A random-intercept SD collapsed onto zero is held fixed for the SEs.
  const bool at_boundary = theta[q] - theta[q + 1] < std::log(1e-4);
  const Eigen::MatrixXd full_info = hessian_from_gradient(negll, theta);
  std::vector<Eigen::Index> free;
  for (Eigen::Index k = 0; k < q + 2; ++k) {
    if (!(at_boundary && k == q)) free.push_back(k);
  }
  const auto m = static_cast<Eigen::Index>(free.size());
  Eigen::MatrixXd info(m, m), reduced;
  for (Eigen::Index a = 0; a < m; ++a)
    for (Eigen::Index b = 0; b < m; ++b) info(a, b) = full_info(free[a], free[b]);
  const bool pd = info.allFinite() && invert_spd(info, reduced);
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(q + 2, q + 2);
  if (pd) {
    for (Eigen::Index a = 0; a < m; ++a)
      for (Eigen::Index b = 0; b < m; ++b) cov(free[a], free[b]) = reduced(a, b);
  }
  fit.converged = opt.converged && pd && std::isfinite(opt.value);

  auto se = [&](Eigen::Index i) {
    return pd ? std::sqrt(std::max(cov(i, i), 0.0)) : std::nan("");
  };
  for (Eigen::Index k = 0; k < q; ++k)
    fit.add(design.names[static_cast<std::size_t>(k)], theta[k], se(k));
  const double s2v = std::exp(2 * theta[q]);
  const double s2e = std::exp(2 * theta[q + 1]);
  fit.add("sigma2_v", s2v, 2 * s2v * se(q));
  fit.add("sigma2_e", s2e, 2 * s2e * se(q + 1));
  return fit;
}

}  // namespace visitsim
