#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "visitsim/dgm.hpp"
#include "visitsim/domain.hpp"

using namespace visitsim;

namespace {

Subject make_subject(std::int64_t id, int z, double c, std::vector<double> times) {
  Subject s;
  s.id = id;
  s.treatment = z;
  s.censoring_time = c;
  s.visit_times = std::move(times);
  for (std::size_t j = 0; j < s.visit_times.size(); ++j) s.outcomes.push_back(0.5 * j - 1.0);
  return s;
}

}  // namespace

TEST_CASE("gaps are successive differences plus one censored gap") {
  const auto panel = build_panel({make_subject(1, 1, 5.0, {0.0, 1.5, 3.0})});
  const auto& g = panel.gap_records();
  REQUIRE(g.size() == 3);
  CHECK(g[0].gap == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(g[0].observed);
  CHECK(g[0].index == 1);
  CHECK(g[1].gap == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(g[1].observed);
  CHECK(g[2].gap == doctest::Approx(2.0).epsilon(1e-15));
  CHECK_FALSE(g[2].observed);
  CHECK(g[2].covariates == std::vector<double>{1.0});
}

TEST_CASE("baseline-only subject has a single censored gap") {
  const auto panel = build_panel({make_subject(4, 0, 7.0, {0.0})});
  REQUIRE(panel.gap_records().size() == 1);
  CHECK(panel.gap_records()[0].gap == 7.0);
  CHECK_FALSE(panel.gap_records()[0].observed);
  CHECK(panel.n_rows() == 1);
}

TEST_CASE("invalid subjects are rejected with the subject named") {
  auto message = [](Subject s) -> std::string {
    try {
      build_panel({std::move(s)});
    } catch (const ValidationError& e) {
      return e.what();
    }
    return {};
  };
  CHECK(message(make_subject(17, 0, 5.0, {0.0, 2.0, 1.0})).find("17") != std::string::npos);
  CHECK(message(make_subject(18, 0, 5.0, {0.0, 2.0, 2.0})).find("18") != std::string::npos);
  CHECK(message(make_subject(19, 0, 5.0, {0.0, 5.0})).find("19") != std::string::npos);
  CHECK(message(make_subject(20, 0, 5.0, {0.5, 1.0})).find("20") != std::string::npos);
  CHECK(message(make_subject(21, 2, 5.0, {0.0})).find("21") != std::string::npos);
  auto short_y = make_subject(22, 0, 5.0, {0.0, 1.0});
  short_y.outcomes.pop_back();
  CHECK(message(short_y).find("22") != std::string::npos);
  CHECK_FALSE(message(make_subject(23, 0, 5.0, {})).empty());
  CHECK_THROWS_AS(build_panel({}), ValidationError);
}

TEST_CASE("gap records on a simulated panel satisfy the per-subject invariants") {
  const auto cfg = preset("jm_g15_l030");
  const auto panel = simulate(cfg, 99);
  std::size_t g = 0;
  for (const auto& s : panel.subjects()) {
    int observed = 0, censored = 0;
    double total = 0;
    for (std::size_t j = 0; j < s.n_visits(); ++j, ++g) {
      const auto& rec = panel.gap_records()[g];
      CHECK(rec.subject_id == s.id);
      CHECK(rec.gap > 0);
      rec.observed ? ++observed : ++censored;
      total += rec.gap;
    }
    CHECK(observed == static_cast<int>(s.n_visits()) - 1);
    CHECK(censored == 1);
    CHECK(std::abs(total - s.censoring_time) < 1e-10);
  }
  CHECK(g == panel.gap_records().size());
}

TEST_CASE("build_panel is order preserving and idempotent") {
  std::vector<Subject> subjects = {make_subject(1, 0, 6.0, {0.0, 1.0}),
                                   make_subject(2, 1, 8.0, {0.0, 0.5, 4.0, 7.5}),
                                   make_subject(3, 1, 5.5, {0.0})};
  const auto a = build_panel(subjects);
  const auto again = build_panel(a.subjects());
  REQUIRE(again.gap_records().size() == a.gap_records().size());
  for (std::size_t k = 0; k < a.gap_records().size(); ++k) {
    CHECK(again.gap_records()[k].gap == a.gap_records()[k].gap);
    CHECK(again.gap_records()[k].subject_id == a.gap_records()[k].subject_id);
  }

  std::reverse(subjects.begin(), subjects.end());
  const auto b = build_panel(subjects);
  // gaps of reversed input are the per-subject blocks in reversed order
  std::vector<std::pair<std::int64_t, double>> ga, gb;
  for (const auto& r : a.gap_records()) ga.emplace_back(r.subject_id, r.gap);
  for (const auto& r : b.gap_records()) gb.emplace_back(r.subject_id, r.gap);
  std::stable_sort(ga.begin(), ga.end(),
                   [](auto& x, auto& y) { return x.first > y.first; });
  CHECK(ga == gb);
}

TEST_CASE("panel CSV round trip") {
  const auto panel = simulate(preset("gamma_psi2_lagged"), 5);
  std::stringstream ss;
  write_panel_csv(ss, panel);
  std::string header;
  std::getline(std::stringstream(ss.str()), header);
  CHECK(header == "subject_id,z,censoring_time,visit_time,y");
  const auto back = read_panel_csv(ss);
  REQUIRE(back.n_subjects() == panel.n_subjects());
  for (std::size_t i = 0; i < panel.n_subjects(); ++i) {
    const auto& a = panel.subjects()[i];
    const auto& b = back.subjects()[i];
    CHECK(a.id == b.id);
    CHECK(a.treatment == b.treatment);
    CHECK(a.censoring_time == b.censoring_time);
    CHECK(a.visit_times == b.visit_times);
    CHECK(a.outcomes == b.outcomes);
  }

  std::stringstream bad("subject_id,z,visit_time,y\n1,0,0,1\n");
  CHECK_THROWS_AS(read_panel_csv(bad), ValidationError);
  std::stringstream inconsistent(
      "subject_id,z,censoring_time,visit_time,y\n1,0,5,0,1\n1,1,5,1,2\n");
  CHECK_THROWS_AS(read_panel_csv(inconsistent), ValidationError);
}

TEST_CASE("fit result JSON round trip") {
  FitResult f;
  f.model = ModelLabel::C;
  f.add("alpha0", 0.125, 0.5);
  f.add("sigma2_v", 1.0 / 3.0, 0.01);
  f.loglik = -123.456;
  f.converged = true;
  f.iterations = 17;
  const auto back = fit_result_from_json(fit_result_to_json(f));
  CHECK(back.model == ModelLabel::C);
  CHECK(back.names == f.names);
  CHECK(back.estimates == f.estimates);
  CHECK(back.std_errors == f.std_errors);
  CHECK(back.loglik == f.loglik);
  CHECK(back.converged);
  CHECK(back.iterations == 17);
  CHECK_THROWS_AS(back.estimate("gamma"), std::out_of_range);

  FitResult e;
  e.model = ModelLabel::E;
  e.add("alpha0", 1, 0.1);
  const auto je = fit_result_from_json(fit_result_to_json(e));
  CHECK_FALSE(je.loglik.has_value());
}

TEST_CASE("model labels and number formatting") {
  CHECK(parse_model_list("A,C,E") ==
        std::vector<ModelLabel>{ModelLabel::A, ModelLabel::C, ModelLabel::E});
  CHECK_THROWS_AS(parse_model_list("A,F"), ValidationError);
  CHECK_THROWS_AS(parse_model_list(""), ValidationError);
  for (double x : {0.1, 1.0 / 3.0, -2.5e-300, 123456789.125}) {
    CHECK(std::stod(format_double(x)) == x);
  }
}
