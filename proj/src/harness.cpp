#include "visitsim/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <istream>
#include <mutex>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>
#include <tuple>

#include "json.hpp"
#include "visitsim/iivw.hpp"
#include "visitsim/lmm.hpp"

namespace visitsim {

const std::vector<std::string>& model_param_names(ModelLabel m) {
  static const std::vector<std::string> a = {"alpha0", "alpha1", "alpha2", "gamma",
                                             "beta",   "lambda", "p",      "sigma2_u",
                                             "sigma2_v", "sigma2_e"};
  static const std::vector<std::string> bc = {"alpha0", "alpha1",   "alpha2",
                                              "alpha3", "sigma2_v", "sigma2_e"};
  static const std::vector<std::string> d = {"alpha0", "alpha1", "alpha2", "sigma2_v",
                                             "sigma2_e"};
  static const std::vector<std::string> e = {"alpha0", "alpha1", "alpha2"};
  switch (m) {
    case ModelLabel::A: return a;
    case ModelLabel::B:
    case ModelLabel::C: return bc;
    case ModelLabel::D: return d;
    case ModelLabel::E: return e;
  }
  return e;
}

FitResult fit_model(const PanelDataset& panel, ModelLabel model, const FitOptions& options) {
  try {
    switch (model) {
      case ModelLabel::A: return fit_joint(panel, options.joint);
      case ModelLabel::B:
      case ModelLabel::C:
      case ModelLabel::D: return fit_lmm(panel, LmmSpec::for_model(model));
      case ModelLabel::E: return fit_iivw(panel);
    }
  } catch (const NumericalError&) {
  } catch (const ValidationError&) {
  }
  FitResult failed;
  failed.model = model;
  for (const auto& name : model_param_names(model)) failed.add(name, std::nan(""), std::nan(""));
  return failed;
}

void StudyConfig::validate() const {
  scenario.validate();
  if (reps < 2) throw ValidationError("study needs at least 2 replications");
  if (models.empty()) throw ValidationError("study needs at least one model");
}

void parallel_for(int n, int threads, const std::function<void(int)>& task) {
  int workers = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
  workers = std::clamp(workers, 1, std::max(n, 1));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) task(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          task(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

EstimatesTable run_study(const StudyConfig& study) {
  study.validate();
  std::vector<EstimatesTable> per_rep(static_cast<std::size_t>(study.reps));
  parallel_for(study.reps, study.threads, [&](int k) {
    const int rep = k + 1;
    const PanelDataset panel = simulate(study.scenario, replication_seed(study.master_seed, rep));
    auto& rows = per_rep[static_cast<std::size_t>(k)];
    for (const auto m : study.models) {
      const FitResult fit = fit_model(panel, m, study.fit);
      const auto& names = model_param_names(m);
      for (const auto& name : names) {
        EstimateRow row;
        row.scenario = study.scenario.name;
        row.rep = rep;
        row.model = m;
        row.param = name;
        row.converged = fit.converged;
        if (fit.converged) {
          row.est = fit.estimate(name);
          row.se = fit.std_error(name);
        }
        rows.push_back(std::move(row));
      }
    }
  });
  EstimatesTable out;
  for (auto& rows : per_rep) {
    for (auto& r : rows) out.push_back(std::move(r));
  }
  return out;
}

void write_estimates_csv(std::ostream& os, const EstimatesTable& table) {
  os << "scenario,rep,model,param,est,se,converged\n";
  for (const auto& r : table) {
    os << r.scenario << ',' << r.rep << ',' << to_char(r.model) << ',' << r.param << ','
       << (r.est ? format_double(*r.est) : "") << ',' << (r.se ? format_double(*r.se) : "")
       << ',' << (r.converged ? 1 : 0) << '\n';
  }
}

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> f;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    f.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return f;
}

std::optional<double> parse_optional(const std::string& s) {
  if (s.empty()) return std::nullopt;
  if (s == "nan") return std::nan("");
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ValidationError("bad number '" + s + "' in estimates table");
  return v;
}

}  // namespace

EstimatesTable read_estimates_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "scenario,rep,model,param,est,se,converged")
    throw ValidationError("estimates table has an unexpected header");
  EstimatesTable table;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split(line);
    if (f.size() != 7) throw ValidationError("estimates row needs 7 fields: " + line);
    EstimateRow r;
    r.scenario = f[0];
    r.rep = std::stoi(f[1]);
    if (f[2].size() != 1) throw ValidationError("bad model label " + f[2]);
    r.model = model_from_char(f[2][0]);
    r.param = f[3];
    r.est = parse_optional(f[4]);
    r.se = parse_optional(f[5]);
    r.converged = f[6] == "1";
    table.push_back(std::move(r));
  }
  return table;
}

Truths scenario_truths(const ScenarioConfig& cfg) {
  Truths t;
  t["alpha0"] = cfg.alpha0;
  t["alpha1"] = cfg.alpha1;
  t["alpha2"] = cfg.alpha2;
  t["alpha3"] = std::nullopt;
  t["sigma2_v"] = cfg.sigma2_v;
  t["sigma2_e"] = cfg.sigma2_e;
  if (cfg.family == Family::JointModel) {
    t["gamma"] = cfg.gamma;
    t["beta"] = cfg.beta;
    t["lambda"] = cfg.weibull_scale;
    t["p"] = cfg.weibull_shape;
    t["sigma2_u"] = cfg.sigma2_u;
  } else {
    for (const char* k : {"gamma", "beta", "lambda", "p", "sigma2_u"}) t[k] = std::nullopt;
  }
  return t;
}

namespace {

int param_rank(ModelLabel m, const std::string& param) {
  const auto& names = model_param_names(m);
  const auto it = std::find(names.begin(), names.end(), param);
  return it == names.end() ? static_cast<int>(names.size()) : static_cast<int>(it - names.begin());
}

// Order-insensitive sum: values are sorted first.
double sorted_sum(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return std::accumulate(v.begin(), v.end(), 0.0);
}

}  // namespace

PerformanceTable summarize(const EstimatesTable& estimates, const Truths& truths) {
  using Key = std::tuple<std::string, ModelLabel, int, std::string>;
  struct Cell {
    std::vector<std::pair<double, double>> fits;  // (est, se) over converged
    int total = 0;
  };
  std::map<Key, Cell> cells;
  for (const auto& r : estimates) {
    if (!truths.count(r.param))
      throw ValidationError("no truth entry for parameter '" + r.param + "'");
    auto& cell = cells[Key{r.scenario, r.model, param_rank(r.model, r.param), r.param}];
    ++cell.total;
    if (r.converged && r.est && r.se) cell.fits.emplace_back(*r.est, *r.se);
  }

  PerformanceTable out;
  const double nan = std::nan("");
  for (auto& [key, cell] : cells) {
    PerformanceRow row;
    row.scenario = std::get<0>(key);
    row.model = std::get<1>(key);
    row.param = std::get<3>(key);
    row.truth = truths.at(row.param);
    row.n_total = cell.total;
    row.n_converged = static_cast<int>(cell.fits.size());
    row.conv_rate = static_cast<double>(row.n_converged) / cell.total;
    std::sort(cell.fits.begin(), cell.fits.end());
    const int k = row.n_converged;
    if (k < 2) {
      row.mean_est = row.bias = row.bias_mcse = row.emp_se = row.mod_se = nan;
      row.mse = row.mse_mcse = row.coverage = row.coverage_mcse = nan;
      out.push_back(std::move(row));
      continue;
    }
    const double kd = k;
    std::vector<double> est, se;
    for (const auto& [e, s] : cell.fits) {
      est.push_back(e);
      se.push_back(s);
    }
    row.mean_est = sorted_sum(est) / kd;
    std::vector<double> dev2;
    for (double e : est) dev2.push_back((e - row.mean_est) * (e - row.mean_est));
    row.emp_se = std::sqrt(sorted_sum(dev2) / (kd - 1));
    row.mod_se = sorted_sum(se) / kd;
    if (!row.truth) {
      row.bias = row.bias_mcse = row.mse = row.mse_mcse = nan;
      row.coverage = row.coverage_mcse = nan;
      out.push_back(std::move(row));
      continue;
    }
    const double theta = *row.truth;
    row.bias = row.mean_est - theta;
    row.bias_mcse = row.emp_se / std::sqrt(kd);
    std::vector<double> sq;
    int covered = 0;
    for (const auto& [e, s] : cell.fits) {
      sq.push_back((e - theta) * (e - theta));
      if (std::abs(e - theta) <= 1.96 * s) ++covered;
    }
    row.mse = sorted_sum(sq) / kd;
    std::vector<double> sq_dev;
    for (double v : sq) sq_dev.push_back((v - row.mse) * (v - row.mse));
    row.mse_mcse = std::sqrt(sorted_sum(sq_dev) / (kd * (kd - 1)));
    row.coverage = covered / kd;
    row.coverage_mcse = std::sqrt(row.coverage * (1 - row.coverage) / kd);
    out.push_back(std::move(row));
  }
  return out;
}

void write_performance_csv(std::ostream& os, const PerformanceTable& table) {
  os << "scenario,model,param,truth,mean_est,bias,bias_mcse,emp_se,mod_se,mse,mse_mcse,"
        "coverage,coverage_mcse,conv_rate\n";
  auto f = [](double x) { return std::isnan(x) ? std::string() : format_double(x); };
  for (const auto& r : table) {
    os << r.scenario << ',' << to_char(r.model) << ',' << r.param << ','
       << (r.truth ? format_double(*r.truth) : "") << ',' << f(r.mean_est) << ',' << f(r.bias)
       << ',' << f(r.bias_mcse) << ',' << f(r.emp_se) << ',' << f(r.mod_se) << ',' << f(r.mse)
       << ',' << f(r.mse_mcse) << ',' << f(r.coverage) << ',' << f(r.coverage_mcse) << ','
       << f(r.conv_rate) << '\n';
  }
}

const PerformanceRow& find_row(const PerformanceTable& t, ModelLabel m, const std::string& param) {
  for (const auto& r : t) {
    if (r.model == m && r.param == param) return r;
  }
  throw std::out_of_range(std::string("no performance row for model ") + to_char(m) + " " + param);
}

double quantile(std::vector<double> v, double prob) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

DatasetSummary describe_panel(const PanelDataset& panel) {
  std::vector<double> counts, gaps;
  for (const auto& s : panel.subjects()) counts.push_back(static_cast<double>(s.n_visits()));
  for (const auto& g : panel.gap_records()) {
    if (g.observed) gaps.push_back(g.gap);
  }
  DatasetSummary d{};
  d.total_rows = static_cast<double>(panel.n_rows());
  d.median_measurements = quantile(counts, 0.5);
  d.q25_measurements = quantile(counts, 0.25);
  d.q75_measurements = quantile(counts, 0.75);
  d.median_gap = quantile(gaps, 0.5);
  d.q25_gap = quantile(gaps, 0.25);
  d.q75_gap = quantile(gaps, 0.75);
  return d;
}

Descriptives describe_datasets(const ScenarioConfig& cfg, int reps, std::uint64_t master_seed,
                               int threads) {
  if (reps < 1) throw ValidationError("describe needs at least one dataset");
  Descriptives out;
  out.scenario = cfg.name;
  out.datasets.resize(static_cast<std::size_t>(reps));
  parallel_for(reps, threads, [&](int k) {
    out.datasets[static_cast<std::size_t>(k)] =
        describe_panel(simulate(cfg, replication_seed(master_seed, k + 1)));
  });
  auto collect = [&](double DatasetSummary::*field) {
    std::vector<double> v;
    for (const auto& d : out.datasets) v.push_back(d.*field);
    return quantile(v, 0.5);
  };
  std::vector<double> rows;
  for (const auto& d : out.datasets) rows.push_back(d.total_rows);
  out.rows_median = quantile(rows, 0.5);
  out.rows_q25 = quantile(rows, 0.25);
  out.rows_q75 = quantile(rows, 0.75);
  out.measurements_median = collect(&DatasetSummary::median_measurements);
  out.measurements_q25 = collect(&DatasetSummary::q25_measurements);
  out.measurements_q75 = collect(&DatasetSummary::q75_measurements);
  out.gap_median = collect(&DatasetSummary::median_gap);
  out.gap_q25 = collect(&DatasetSummary::q25_gap);
  out.gap_q75 = collect(&DatasetSummary::q75_gap);
  return out;
}

void write_descriptives_csv(std::ostream& os, const Descriptives& d) {
  os << "scenario,statistic,median,q25,q75\n";
  auto line = [&](const char* stat, double m, double lo, double hi) {
    os << d.scenario << ',' << stat << ',' << format_double(m) << ',' << format_double(lo) << ','
       << format_double(hi) << '\n';
  };
  line("total_rows", d.rows_median, d.rows_q25, d.rows_q75);
  line("measurements_per_subject", d.measurements_median, d.measurements_q25, d.measurements_q75);
  line("gap_time", d.gap_median, d.gap_q25, d.gap_q75);
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2)
    throw ValidationError("spearman needs two equal-length samples of size >= 2");
  return pearson(average_ranks(a), average_ranks(b));
}

Diagnostics diagnose_informativeness(const PanelDataset& panel, const std::string& covariate,
                                     const DiagnosticsOptions& options) {
  if (covariate != "z") throw ValidationError("unknown covariate '" + covariate + "'");
  if (panel.n_subjects() < 2) throw ValidationError("diagnostics need at least 2 subjects");
  Diagnostics d;

  // subject-level covariate, one entry per observed gap
  std::vector<double> subject_cov;
  for (const auto& s : panel.subjects()) subject_cov.push_back(s.treatment);
  std::vector<std::size_t> owner;
  std::vector<double> gaps;
  std::size_t g = 0;
  for (std::size_t i = 0; i < panel.n_subjects(); ++i) {
    const auto n = panel.subjects()[i].n_visits();
    for (std::size_t j = 0; j < n; ++j, ++g) {
      const auto& rec = panel.gap_records()[g];
      if (!rec.observed) continue;
      owner.push_back(i);
      gaps.push_back(rec.gap);
    }
  }
  d.n_gaps = static_cast<int>(gaps.size());
  auto gap_cov = [&](const std::vector<double>& cov) {
    std::vector<double> out(owner.size());
    for (std::size_t k = 0; k < owner.size(); ++k) out[k] = cov[owner[k]];
    return out;
  };
  const auto observed_cov = gap_cov(subject_cov);
  const bool constant = std::all_of(observed_cov.begin(), observed_cov.end(),
                                    [&](double v) { return v == observed_cov.front(); });
  if (gaps.size() < 2 || constant) {
    d.message = gaps.size() < 2 ? "fewer than two observed gaps" : "covariate is constant";
    return d;
  }
  d.applicable = true;
  const auto gap_ranks = average_ranks(gaps);
  d.spearman_rho = pearson(gap_ranks, average_ranks(observed_cov));

  Engine eng = make_engine(options.seed);
  std::vector<double> null;
  null.reserve(static_cast<std::size_t>(options.permutations));
  int extreme = 0;
  auto perm = subject_cov;
  for (int b = 0; b < options.permutations; ++b) {
    std::shuffle(perm.begin(), perm.end(), eng);
    const auto cov = gap_cov(perm);
    const bool flat = std::all_of(cov.begin(), cov.end(), [&](double v) { return v == cov.front(); });
    const double rho = flat ? 0.0 : pearson(gap_ranks, average_ranks(cov));
    null.push_back(rho);
    if (std::abs(rho) >= std::abs(d.spearman_rho) - 1e-12) ++extreme;
  }
  d.spearman_p = (1.0 + extreme) / (1.0 + options.permutations);
  d.null_q005 = quantile(null, 0.005);
  d.null_q995 = quantile(null, 0.995);

  const CoxFit cox = fit_andersen_gill(panel.gap_records());
  if (!cox.converged) {
    d.message = "Andersen-Gill fit did not converge: " + cox.message;
    return d;
  }
  d.eta = cox.eta[0];
  d.robust_se = cox.robust_se(0);
  d.hazard_ratio = std::exp(d.eta);
  d.hr_lower = std::exp(d.eta - 1.96 * d.robust_se);
  d.hr_upper = std::exp(d.eta + 1.96 * d.robust_se);
  d.hr_p = std::erfc(std::abs(d.eta / d.robust_se) / std::sqrt(2.0));
  return d;
}

std::string diagnostics_to_json(const Diagnostics& d) {
  nlohmann::ordered_json j;
  j["applicable"] = d.applicable;
  j["message"] = d.message;
  j["n_gaps"] = d.n_gaps;
  j["spearman_rho"] = d.spearman_rho;
  j["spearman_p"] = d.spearman_p;
  j["spearman_null_band_99"] = {d.null_q005, d.null_q995};
  j["log_hazard_ratio"] = d.eta;
  j["robust_se"] = d.robust_se;
  j["hazard_ratio"] = d.hazard_ratio;
  j["hazard_ratio_ci95"] = {d.hr_lower, d.hr_upper};
  j["hazard_ratio_p"] = d.hr_p;
  return j.dump(2);
}

}  // namespace visitsim
