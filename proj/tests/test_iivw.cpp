#include "doctest.h"

#include <cmath>
#include <numeric>
#include <sstream>

#include "visitsim/dgm.hpp"
#include "visitsim/iivw.hpp"

using namespace visitsim;

namespace {

Subject make_subject(std::int64_t id, int z, double c, std::vector<double> times,
                     std::vector<double> y) {
  Subject s;
  s.id = id;
  s.treatment = z;
  s.censoring_time = c;
  s.visit_times = std::move(times);
  s.outcomes = std::move(y);
  return s;
}

PanelDataset two_subjects() {
  return build_panel({make_subject(1, 1, 4.0, {0.0, 1.0, 2.5}, {1.0, 2.0, 2.2}),
                      make_subject(2, 0, 3.0, {0.0, 2.0}, {0.3, 0.1})});
}

CoxFit fake_fit(double eta) {
  CoxFit f;
  f.eta = Eigen::VectorXd::Constant(1, eta);
  f.converged = true;
  return f;
}

// Ordinary least squares with subject-clustered sandwich, written out by rows.
void ols_oracle(const PanelDataset& panel, Eigen::Vector3d& alpha, Eigen::Vector3d& se) {
  const auto n = static_cast<Eigen::Index>(panel.n_rows());
  Eigen::MatrixXd x(n, 3);
  Eigen::VectorXd y(n);
  Eigen::Index r = 0;
  for (const auto& s : panel.subjects()) {
    for (std::size_t j = 0; j < s.n_visits(); ++j, ++r) {
      x.row(r) << 1.0, s.treatment, s.visit_times[j];
      y[r] = s.outcomes[j];
    }
  }
  alpha = x.householderQr().solve(y);
  const Eigen::Matrix3d xtx_inv = (x.transpose() * x).inverse();
  Eigen::Matrix3d meat = Eigen::Matrix3d::Zero();
  r = 0;
  for (const auto& s : panel.subjects()) {
    Eigen::Vector3d u = Eigen::Vector3d::Zero();
    for (std::size_t j = 0; j < s.n_visits(); ++j, ++r)
      u += x.row(r).transpose() * (y[r] - x.row(r).dot(alpha));
    meat += u * u.transpose();
  }
  const double k = static_cast<double>(panel.n_subjects());
  const Eigen::Matrix3d v = k / (k - 1) * xtx_inv * meat * xtx_inv;
  se = v.diagonal().cwiseSqrt();
}

}  // namespace

TEST_CASE("unit weights reproduce least squares with clustered errors") {
  const auto panel = simulate(preset("jm_g15_l030"), 12);
  const auto fit = fit_wgee(panel, std::vector<double>(panel.n_rows(), 1.0));
  Eigen::Vector3d alpha, se;
  ols_oracle(panel, alpha, se);
  REQUIRE(fit.converged);
  CHECK(fit.model == ModelLabel::E);
  for (int k = 0; k < 3; ++k) {
    CHECK(std::abs(fit.estimates[static_cast<std::size_t>(k)] - alpha[k]) < 1e-10);
    CHECK(std::abs(fit.std_errors[static_cast<std::size_t>(k)] - se[k]) < 1e-10);
  }
}

TEST_CASE("duplicated subjects at half weight give identical estimates") {
  const auto panel = simulate(preset("gamma_psi2"), 4);
  std::vector<double> w(panel.n_rows());
  for (std::size_t r = 0; r < w.size(); ++r) w[r] = 0.5 + 0.01 * static_cast<double>(r % 7);
  const auto base = fit_wgee(panel, w);

  std::vector<Subject> doubled = panel.subjects();
  for (const auto& s : panel.subjects()) {
    auto copy = s;
    copy.id += 100000;
    doubled.push_back(copy);
  }
  std::vector<double> half;
  for (int rep = 0; rep < 2; ++rep)
    for (double x : w) half.push_back(0.5 * x);
  const auto twice = fit_wgee(build_panel(doubled), half);
  for (std::size_t k = 0; k < 3; ++k)
    CHECK(std::abs(twice.estimates[k] - base.estimates[k]) < 1e-10);
}

TEST_CASE("weights by hand") {
  const auto panel = two_subjects();
  const auto table = compute_iiv_weights(fake_fit(0.5), panel);
  // visit rows: three treated, two control
  const double treated = std::exp(-0.5), control = 1.0;
  const double mean = (3 * treated + 2 * control) / 5;
  const std::vector<double> expect = {1.0, treated - mean + 1, treated - mean + 1, 1.0,
                                      control - mean + 1};
  const auto w = table.values();
  REQUIRE(w.size() == expect.size());
  for (std::size_t r = 0; r < w.size(); ++r) CHECK(std::abs(w[r] - expect[r]) < 1e-15);
  CHECK(table.entries()[3].subject_id == 2);
  CHECK(table.entries()[3].visit_index == 0);
  CHECK(table.n_nonpositive == 0);

  std::ostringstream os;
  write_weight_csv(os, table);
  CHECK(os.str().rfind("subject_id,visit_index,weight\n1,0,1\n", 0) == 0);
}

TEST_CASE("normalised weights average one and baselines weigh one") {
  const auto panel = simulate(preset("gamma_psi2"), 31);
  const auto cox = fit_andersen_gill(panel.gap_records());
  REQUIRE(cox.converged);
  const auto table = compute_iiv_weights(cox, panel);
  const double mean = std::accumulate(table.normalized.begin(), table.normalized.end(), 0.0) /
                      static_cast<double>(table.normalized.size());
  CHECK(std::abs(mean - 1.0) < 1e-12);
  for (const auto& e : table.entries()) {
    if (e.visit_index == 0) CHECK(e.weight == 1.0);
  }
  // treated subjects visit more often and are weighted down
  CHECK(cox.eta[0] > 0);
}

TEST_CASE("weighted fit is invariant to rescaling the weights") {
  const auto panel = simulate(preset("gamma_psi2_lagged"), 8);
  std::vector<double> w(panel.n_rows());
  for (std::size_t r = 0; r < w.size(); ++r) w[r] = 1.0 + std::sin(static_cast<double>(r)) * 0.5;
  const auto a = fit_wgee(panel, w);
  for (double& x : w) x *= 7.5;
  const auto b = fit_wgee(panel, w);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(std::abs(a.estimates[k] - b.estimates[k]) < 1e-10);
    CHECK(std::abs(a.std_errors[k] - b.std_errors[k]) < 1e-10);
  }
}

TEST_CASE("two-stage fit is deterministic and recovers the outcome model") {
  auto cfg = preset("gamma_psi2");
  const auto a = fit_iivw(simulate(cfg, 6));
  const auto b = fit_iivw(simulate(cfg, 6));
  REQUIRE(a.converged);
  CHECK(a.estimates == b.estimates);
  CHECK(a.std_errors == b.std_errors);

  cfg.n_subjects = 4000;
  const auto big = fit_iivw(simulate(cfg, 66));
  REQUIRE(big.converged);
  CHECK(std::abs(big.estimate("alpha1") - cfg.alpha1) < 4 * big.std_error("alpha1"));
  CHECK(std::abs(big.estimate("alpha2") - cfg.alpha2) < 4 * big.std_error("alpha2"));
}

TEST_CASE("failures are reported") {
  const auto panel = two_subjects();
  auto bad = fake_fit(0.5);
  bad.converged = false;
  CHECK_THROWS_AS(compute_iiv_weights(bad, panel), ValidationError);
  CHECK_THROWS_AS(fit_wgee(panel, std::vector<double>(3, 1.0)), ValidationError);

  // no treatment contrast: the normal equations are singular
  const auto flat = build_panel({make_subject(1, 0, 4.0, {0.0, 1.0}, {1.0, 2.0}),
                                 make_subject(2, 0, 3.0, {0.0, 2.0}, {0.3, 0.1})});
  CHECK_THROWS_AS(fit_wgee(flat, std::vector<double>(4, 1.0)), NumericalError);

  // the treated subject has the only event: monotone weight model
  const auto mono = build_panel({make_subject(1, 1, 4.0, {0.0, 1.0}, {1.0, 2.0}),
                                 make_subject(2, 0, 3.0, {0.0}, {0.3})});
  const auto fit = fit_iivw(mono);
  CHECK_FALSE(fit.converged);
  CHECK(std::isnan(fit.estimates[0]));

  const auto big = compute_iiv_weights(fake_fit(-3.0), panel);
  CHECK(big.n_nonpositive > 0);
}
