#pragma once

// Data-generating mechanisms for panels with informative visit processes.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "visitsim/domain.hpp"
#include "visitsim/rng.hpp"

namespace visitsim {

enum class Family { JointModel, GammaTreatment, GammaTreatmentLaggedY };

/// How scheduled yearly visits combine with process-driven visits.
enum class RegularMerge {
  /// Next visit is the earlier of the drawn visit and the next scheduled one;
  /// the gap clock resets at every realised visit.
  Earliest,
  /// Scheduled visits are added on top of an undisturbed process whose
  /// clock resets only at its own visits.
  Additive,
};

struct ScenarioConfig {
  std::string name = "custom";
  std::string label;  // human-readable description
  Family family = Family::JointModel;
  int n_subjects = 200;

  // visit process
  double weibull_shape = 1.05;  // p
  double weibull_scale = 0.10;  // lambda
  double beta = 1.0;
  double gamma_shape = 2.0;
  double psi = 0.0;
  double omega = 0.20;
  double sigma2_xi = 0.1;
  bool regular_visits = false;
  double visit_interval = 1.0;
  RegularMerge regular_merge = RegularMerge::Earliest;
  double censor_lower = 5.0;
  double censor_upper = 10.0;

  // longitudinal outcome
  double alpha0 = 0.0;
  double alpha1 = 1.0;
  double alpha2 = 0.2;
  double gamma = 0.0;
  double sigma2_u = 1.0;
  double sigma2_v = 0.5;
  double sigma2_e = 1.0;

  std::uint64_t seed = 20190101;

  /// Throws ValidationError on an invalid parameterisation.
  void validate() const;
};

std::string to_string(Family f);

/// Inverse-transform Weibull gap with cumulative hazard lambda*t^p*exp(linpred).
double draw_weibull_gap(double u01, double lambda, double p, double linpred);

PanelDataset simulate_joint_model(const ScenarioConfig& cfg, std::uint64_t seed);
PanelDataset simulate_gamma_process(const ScenarioConfig& cfg, std::uint64_t seed);

/// Dispatches on cfg.family.
PanelDataset simulate(const ScenarioConfig& cfg, std::uint64_t seed);

/// Panel seed used for replication `rep` of a study with `master_seed`.
inline std::uint64_t replication_seed(std::uint64_t master_seed, int rep) {
  return derive_seed(master_seed, static_cast<std::uint64_t>(rep));
}

/// The ten shipped scenarios, one per row of the descriptive table.
std::vector<std::string> preset_names();
ScenarioConfig preset(const std::string& name);

/// Flat key=value file with [scenario] and [truth] sections; '#' comments.
/// Unknown keys, unknown sections and duplicate keys are errors.
ScenarioConfig parse_scenario_config(std::istream& is);
ScenarioConfig load_scenario_config(const std::string& path);
void write_scenario_config(std::ostream& os, const ScenarioConfig& cfg);

/// Documentation of every recognised key, used by --help.
std::string scenario_config_help();

}  // namespace visitsim
