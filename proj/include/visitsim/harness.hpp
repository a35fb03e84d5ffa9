#pragma once

// Monte Carlo study driver: replications, model dispatch, performance
// measures with Monte Carlo standard errors, dataset descriptives and
// informativeness diagnostics.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "visitsim/dgm.hpp"
#include "visitsim/domain.hpp"
#include "visitsim/jointfit.hpp"
#include "visitsim/survfit.hpp"

namespace visitsim {

/// Parameter names reported by each model, in output order.
const std::vector<std::string>& model_param_names(ModelLabel m);

struct FitOptions {
  JointFitOptions joint{};
};

/// Fits one model; numerical failures come back as a non-converged result.
FitResult fit_model(const PanelDataset& panel, ModelLabel model, const FitOptions& options = {});

struct StudyConfig {
  ScenarioConfig scenario;
  std::vector<ModelLabel> models{ModelLabel::A, ModelLabel::B, ModelLabel::C, ModelLabel::D,
                                 ModelLabel::E};
  int reps = 200;
  std::uint64_t master_seed = 0;
  int threads = 0;  // 0 = available parallelism
  FitOptions fit{};

  void validate() const;
};

struct EstimateRow {
  std::string scenario;
  int rep = 0;
  ModelLabel model = ModelLabel::D;
  std::string param;
  std::optional<double> est;  // absent for non-converged fits
  std::optional<double> se;
  bool converged = false;
};

using EstimatesTable = std::vector<EstimateRow>;

/// Replications 1..K; rows ordered by (rep, model as listed, parameter).
EstimatesTable run_study(const StudyConfig& study);

void write_estimates_csv(std::ostream& os, const EstimatesTable& table);
EstimatesTable read_estimates_csv(std::istream& is);

/// Truth per parameter name; std::nullopt marks a parameter with no true value
/// (reported without bias/coverage).
using Truths = std::map<std::string, std::optional<double>>;

Truths scenario_truths(const ScenarioConfig& cfg);

struct PerformanceRow {
  std::string scenario;
  ModelLabel model = ModelLabel::D;
  std::string param;
  std::optional<double> truth;
  double mean_est = 0;
  double bias = 0, bias_mcse = 0;
  double emp_se = 0;
  double mod_se = 0;
  double mse = 0, mse_mcse = 0;
  double coverage = 0, coverage_mcse = 0;
  double conv_rate = 0;
  int n_converged = 0;
  int n_total = 0;
};

using PerformanceTable = std::vector<PerformanceRow>;

/// Performance over converged replications. Throws ValidationError when a
/// parameter has no entry in `truths`. Cells with fewer than two converged
/// replications carry NaN measures. Result is invariant to row order.
PerformanceTable summarize(const EstimatesTable& estimates, const Truths& truths);

void write_performance_csv(std::ostream& os, const PerformanceTable& table);

const PerformanceRow& find_row(const PerformanceTable& t, ModelLabel m, const std::string& param);

/// Quantile with linear interpolation between order statistics (type 7).
double quantile(std::vector<double> v, double prob);

struct DatasetSummary {
  double total_rows;
  double median_measurements;
  double q25_measurements, q75_measurements;
  double median_gap;  // observed gaps only
  double q25_gap, q75_gap;
};

struct Descriptives {
  std::string scenario;
  std::vector<DatasetSummary> datasets;
  // medians across datasets (and quartiles across datasets for total rows)
  double rows_median, rows_q25, rows_q75;
  double measurements_median, measurements_q25, measurements_q75;
  double gap_median, gap_q25, gap_q75;
};

DatasetSummary describe_panel(const PanelDataset& panel);
Descriptives describe_datasets(const ScenarioConfig& cfg, int reps, std::uint64_t master_seed,
                               int threads = 0);
void write_descriptives_csv(std::ostream& os, const Descriptives& d);

struct DiagnosticsOptions {
  int permutations = 999;
  std::uint64_t seed = 1;
};

struct Diagnostics {
  bool applicable = false;
  std::string message;
  int n_gaps = 0;
  double spearman_rho = 0;
  double spearman_p = 1;
  double null_q005 = 0, null_q995 = 0;  // permutation null 99% band
  double eta = 0, robust_se = 0;
  double hazard_ratio = 1, hr_lower = 1, hr_upper = 1;
  double hr_p = 1;
};

/// Spearman correlation between observed gap times and a subject-level
/// covariate ("z"), with a subject-level permutation p-value; Andersen-Gill
/// hazard ratio with jackknife 95% interval.
Diagnostics diagnose_informativeness(const PanelDataset& panel, const std::string& covariate,
                                     const DiagnosticsOptions& options = {});

std::string diagnostics_to_json(const Diagnostics& d);

/// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

/// Runs `task(i)` for i in [0, n) on `threads` workers (0 = hardware).
void parallel_for(int n, int threads, const std::function<void(int)>& task);

}  // namespace visitsim
