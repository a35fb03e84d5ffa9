#include "doctest.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

#include "visitsim/harness.hpp"

using namespace visitsim;

namespace {

EstimatesTable cell(const std::vector<double>& est, const std::vector<double>& se,
                    const std::string& param = "alpha1") {
  EstimatesTable t;
  for (std::size_t k = 0; k < est.size(); ++k) {
    EstimateRow r;
    r.scenario = "s";
    r.rep = static_cast<int>(k) + 1;
    r.model = ModelLabel::D;
    r.param = param;
    r.est = est[k];
    r.se = se[k];
    r.converged = true;
    t.push_back(r);
  }
  return t;
}

std::string csv(const EstimatesTable& t) {
  std::ostringstream os;
  write_estimates_csv(os, t);
  return os.str();
}

}  // namespace

TEST_CASE("model parameter lists") {
  CHECK(model_param_names(ModelLabel::A).size() == 10);
  CHECK(model_param_names(ModelLabel::B).back() == "sigma2_e");
  CHECK(model_param_names(ModelLabel::C).size() == 6);
  CHECK(model_param_names(ModelLabel::D).size() == 5);
  CHECK(model_param_names(ModelLabel::E) == std::vector<std::string>{"alpha0", "alpha1", "alpha2"});
}

TEST_CASE("two replications of one model give one row per parameter and replication") {
  StudyConfig study;
  study.scenario = preset("jm_g15_l030");
  study.models = {ModelLabel::D};
  study.reps = 2;
  study.master_seed = 3;
  const auto t = run_study(study);
  REQUIRE(t.size() == 10);
  CHECK(t[0].rep == 1);
  CHECK(t[0].param == "alpha0");
  CHECK(t[9].rep == 2);
  CHECK(t[9].param == "sigma2_e");
  for (const auto& r : t) {
    CHECK(r.scenario == "jm_g15_l030");
    CHECK(r.converged);
  }

  study.reps = 1;
  CHECK_THROWS_AS(study.validate(), ValidationError);
  study.reps = 2;
  study.models.clear();
  CHECK_THROWS_AS(study.validate(), ValidationError);
}

TEST_CASE("summary of a hand-made cell") {
  // estimates 0.8 and 1.2 around a truth of 1
  const auto p = summarize(cell({0.8, 1.2}, {0.1, 0.3}), {{"alpha1", 1.0}});
  REQUIRE(p.size() == 1);
  const auto& r = p[0];
  CHECK(std::abs(r.bias) < 1e-15);
  CHECK(std::abs(r.emp_se - std::sqrt(0.08)) < 1e-15);
  CHECK(std::abs(r.mod_se - 0.2) < 1e-15);
  CHECK(std::abs(r.mse - 0.04) < 1e-15);
  CHECK(r.coverage == 0.5);  // 0.2 <= 1.96 * 0.3 only
  CHECK(std::abs(r.coverage_mcse - 0.5 / std::sqrt(2.0)) < 1e-15);
  CHECK(r.conv_rate == 1.0);
  CHECK(r.n_converged == 2);
}

TEST_CASE("Monte Carlo standard error of the bias") {
  std::vector<double> est, se;
  for (int k = 0; k < 1000; ++k) {
    est.push_back(k % 2 ? 1.0 + 0.316227766016838 : 1.0 - 0.316227766016838);
    se.push_back(1.0);
  }
  const auto r = summarize(cell(est, se), {{"alpha1", 1.0}})[0];
  CHECK(std::abs(r.bias_mcse - 0.01) < 1e-4);
  CHECK(r.coverage == 1.0);
  CHECK(r.coverage_mcse == 0.0);
}

TEST_CASE("missing truth is rejected and absent truth gives partial rows") {
  CHECK_THROWS_AS(summarize(cell({1, 2}, {1, 1}), {{"alpha0", 0.0}}), ValidationError);
  const auto r = summarize(cell({1, 2}, {1, 1}), {{"alpha1", std::nullopt}})[0];
  CHECK(r.mean_est == 1.5);
  CHECK(std::isnan(r.bias));
  CHECK(std::isnan(r.coverage));
  CHECK(r.mod_se == 1.0);
}

TEST_CASE("non-converged replications are excluded and counted") {
  auto t = cell({0.9, 1.1, 5.0}, {0.1, 0.1, 0.1});
  t[2].converged = false;
  t[2].est.reset();
  t[2].se.reset();
  const auto r = summarize(t, {{"alpha1", 1.0}})[0];
  CHECK(r.n_total == 3);
  CHECK(r.n_converged == 2);
  CHECK(std::abs(r.mean_est - 1.0) < 1e-15);
  CHECK(std::abs(r.conv_rate - 2.0 / 3.0) < 1e-15);

  t[1].converged = false;
  const auto one = summarize(t, {{"alpha1", 1.0}})[0];
  CHECK(std::isnan(one.mean_est));
  std::ostringstream os;
  write_performance_csv(os, {one});
  CHECK(os.str().find("s,D,alpha1,1,,,,,,,,,,") != std::string::npos);
}

TEST_CASE("summary is invariant to row order and satisfies the MSE identity") {
  std::mt19937_64 eng(5);
  std::normal_distribution<double> noise(0.3, 1.0);
  std::vector<double> est, se;
  for (int k = 0; k < 257; ++k) {
    est.push_back(noise(eng));
    se.push_back(0.5 + 0.001 * k);
  }
  auto t = cell(est, se);
  const auto a = summarize(t, {{"alpha1", 0.0}})[0];
  std::shuffle(t.begin(), t.end(), eng);
  const auto b = summarize(t, {{"alpha1", 0.0}})[0];
  CHECK(a.mean_est == b.mean_est);
  CHECK(a.emp_se == b.emp_se);
  CHECK(a.mse == b.mse);
  CHECK(a.coverage == b.coverage);
  const double k = 257;
  CHECK(std::abs(a.mse - (a.bias * a.bias + a.emp_se * a.emp_se * (k - 1) / k)) < 1e-12);
}

TEST_CASE("study output does not depend on the number of threads") {
  StudyConfig study;
  study.scenario = preset("gamma_psi2");
  study.models = {ModelLabel::B, ModelLabel::E};
  study.reps = 6;
  study.master_seed = 99;
  study.threads = 1;
  const auto one = csv(run_study(study));
  study.threads = 3;
  CHECK(csv(run_study(study)) == one);

  std::istringstream is(one);
  const auto back = read_estimates_csv(is);
  CHECK(csv(back) == one);
  CHECK(one.rfind("scenario,rep,model,param,est,se,converged\n", 0) == 0);
}

TEST_CASE("truths by family") {
  const auto jm = scenario_truths(preset("jm_g15_l030"));
  CHECK(*jm.at("gamma") == 1.5);
  CHECK(*jm.at("lambda") == 0.3);
  CHECK(*jm.at("sigma2_u") == 1.0);
  CHECK_FALSE(jm.at("alpha3").has_value());
  const auto g = scenario_truths(preset("gamma_psi2"));
  CHECK(*g.at("alpha1") == 1.0);
  CHECK_FALSE(g.at("gamma").has_value());
  CHECK_FALSE(g.at("beta").has_value());
}

TEST_CASE("quantile and rank correlation") {
  CHECK(quantile({1, 2, 3, 4}, 0.5) == 2.5);
  CHECK(quantile({4, 1, 3, 2}, 0.25) == 1.75);
  CHECK(quantile({7}, 0.9) == 7);
  CHECK(std::isnan(quantile({}, 0.5)));
  CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 1000}) == doctest::Approx(1.0));
  CHECK(spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
  // ties share the average rank
  CHECK(spearman({1, 1, 2, 3}, {1, 2, 3, 4}) == doctest::Approx(0.9486832980505138));
}

TEST_CASE("datasets without revisits have one row per subject") {
  auto cfg = preset("jm_g00_l010");
  cfg.weibull_scale = 1e-12;
  cfg.censor_lower = cfg.censor_upper = 5.0;
  const auto d = describe_datasets(cfg, 3, 1, 1);
  CHECK(d.rows_median == cfg.n_subjects);
  CHECK(d.measurements_median == 1.0);
  CHECK(std::isnan(d.gap_median));
  std::ostringstream os;
  write_descriptives_csv(os, d);
  CHECK(os.str().rfind("scenario,statistic,median,q25,q75\n", 0) == 0);
}

TEST_CASE("informativeness diagnostics") {
  const auto info = diagnose_informativeness(simulate(preset("jm_g15_l030"), 1), "z",
                                             DiagnosticsOptions{199, 7});
  REQUIRE(info.applicable);
  // treated subjects visit more often: shorter gaps and a hazard ratio above one
  CHECK(info.spearman_rho < 0);
  CHECK(info.spearman_rho < info.null_q005);
  CHECK(info.spearman_p == doctest::Approx(1.0 / 200));
  CHECK(info.hazard_ratio > 1);
  CHECK(info.hr_lower > 1);
  CHECK(info.hr_lower < info.hazard_ratio);
  CHECK(info.hazard_ratio < info.hr_upper);

  const auto null = diagnose_informativeness(simulate(preset("gamma_psi0"), 2), "z",
                                             DiagnosticsOptions{199, 7});
  REQUIRE(null.applicable);
  CHECK(null.null_q005 < null.spearman_rho);
  CHECK(null.spearman_rho < null.null_q995);
  CHECK(diagnostics_to_json(null).find("\"spearman_null_band_99\"") != std::string::npos);

  auto cfg = preset("jm_g15_l030");
  cfg.n_subjects = 20;
  auto subjects = simulate(cfg, 4).subjects();
  for (auto& s : subjects) s.treatment = 1;
  const auto flat = diagnose_informativeness(build_panel(subjects), "z");
  CHECK_FALSE(flat.applicable);
  CHECK(flat.message == "covariate is constant");
  CHECK_THROWS_AS(diagnose_informativeness(build_panel(subjects), "age"), ValidationError);
}

TEST_CASE("numerical failure becomes a non-converged fit") {
  // no treatment contrast: every outcome model is singular
  auto cfg = preset("jm_g15_l030");
  cfg.n_subjects = 10;
  auto subjects = simulate(cfg, 4).subjects();
  for (auto& s : subjects) s.treatment = 0;
  const auto panel = build_panel(subjects);
  for (const auto m : {ModelLabel::A, ModelLabel::D, ModelLabel::E}) {
    const auto fit = fit_model(panel, m);
    CHECK_FALSE(fit.converged);
    CHECK(fit.names == model_param_names(m));
  }
}

TEST_CASE("parallel_for runs every index once and propagates errors") {
  std::vector<std::atomic<int>> hits(100);
  parallel_for(100, 4, [&](int i) { ++hits[static_cast<std::size_t>(i)]; });
  for (const auto& h : hits) CHECK(h.load() == 1);
  CHECK_THROWS_AS(parallel_for(10, 2,
                               [](int i) {
                                 if (i == 7) throw std::runtime_error("boom");
                               }),
                  std::runtime_error);
}
