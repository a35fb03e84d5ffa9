#include "visitsim/dgm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

namespace visitsim {

void ScenarioConfig::validate() const {
  auto fail = [&](const std::string& what) {
    throw ValidationError("scenario '" + name + "': " + what);
  };
  if (n_subjects < 1) fail("n_subjects must be >= 1");
  if (!(weibull_scale > 0)) fail("lambda must be > 0");
  if (!(weibull_shape > 0)) fail("p must be > 0");
  if (!(gamma_shape > 0)) fail("gamma_shape must be > 0");
  if (!(sigma2_u > 0) || !(sigma2_v > 0) || !(sigma2_e > 0) || !(sigma2_xi > 0))
    fail("all variances must be > 0");
  if (!(censor_lower > 0) || !(censor_upper >= censor_lower))
    fail("censoring bounds must satisfy 0 < lower <= upper");
  if (regular_visits) {
    if (family != Family::JointModel)
      fail("regular visits are only supported for the joint-model family");
    if (!(visit_interval > 0)) fail("visit_interval must be > 0");
  }
}

std::string to_string(Family f) {
  switch (f) {
    case Family::JointModel: return "joint_model";
    case Family::GammaTreatment: return "gamma_treatment";
    case Family::GammaTreatmentLaggedY: return "gamma_treatment_lagged_y";
  }
  return "?";
}

double draw_weibull_gap(double u01, double lambda, double p, double linpred) {
  if (!(u01 > 0.0 && u01 < 1.0))
    throw std::domain_error("draw_weibull_gap: u01 must lie in (0,1)");
  return std::pow(-std::log(u01) / (lambda * std::exp(linpred)), 1.0 / p);
}

namespace {

double draw_normal(Engine& eng, double variance) {
  std::normal_distribution<double> n(0.0, std::sqrt(variance));
  return n(eng);
}

// Draw order per subject, fixed: censoring time, treatment, subject-level
// random effects, baseline residual, then (gap, residual) per visit.
struct SubjectStart {
  double censoring;
  int z;
};

SubjectStart draw_subject_start(Engine& eng, const ScenarioConfig& cfg) {
  SubjectStart s{};
  s.censoring = cfg.censor_lower + (cfg.censor_upper - cfg.censor_lower) * open_unit(eng);
  s.z = open_unit(eng) < 0.5 ? 1 : 0;
  return s;
}

Subject simulate_jm_subject(const ScenarioConfig& cfg, std::uint64_t seed,
                            std::int64_t id) {
  Engine eng = make_engine(seed);
  const auto start = draw_subject_start(eng, cfg);
  const double u = draw_normal(eng, cfg.sigma2_u);
  const double v = draw_normal(eng, cfg.sigma2_v);
  const double c = start.censoring;
  const double linpred = cfg.beta * start.z + u;

  Subject s;
  s.id = id;
  s.treatment = start.z;
  s.censoring_time = c;
  s.true_u = u;
  s.true_v = v;

  auto outcome = [&](double t) {
    return cfg.alpha0 + start.z * cfg.alpha1 + t * cfg.alpha2 + cfg.gamma * u +
           v + draw_normal(eng, cfg.sigma2_e);
  };
  s.visit_times.push_back(0.0);
  s.outcomes.push_back(outcome(0.0));

  auto next_gap = [&] {
    return draw_weibull_gap(open_unit(eng), cfg.weibull_scale, cfg.weibull_shape,
                            linpred);
  };

  if (!cfg.regular_visits) {
    double t = 0.0;
    for (;;) {
      const double next = t + next_gap();
      if (!(next < c)) break;
      t = next;
      s.visit_times.push_back(t);
      s.outcomes.push_back(outcome(t));
    }
    return s;
  }

  if (cfg.regular_merge == RegularMerge::Earliest) {
    double t = 0.0;
    long k = 1;  // index of the next scheduled visit
    for (;;) {
      const double scheduled = static_cast<double>(k) * cfg.visit_interval;
      const double next = std::min(t + next_gap(), scheduled);
      if (!(next < c)) break;
      t = next;
      while (static_cast<double>(k) * cfg.visit_interval <= t) ++k;
      s.visit_times.push_back(t);
      s.outcomes.push_back(outcome(t));
    }
    return s;
  }

  // Additive: an undisturbed process plus the schedule.
  std::vector<double> times;
  for (double t = 0.0;;) {
    t += next_gap();
    if (!(t < c)) break;
    times.push_back(t);
  }
  for (long k = 1; static_cast<double>(k) * cfg.visit_interval < c; ++k)
    times.push_back(static_cast<double>(k) * cfg.visit_interval);
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  for (double t : times) {
    s.visit_times.push_back(t);
    s.outcomes.push_back(outcome(t));
  }
  return s;
}

Subject simulate_gamma_subject(const ScenarioConfig& cfg, std::uint64_t seed,
                               std::int64_t id) {
  Engine eng = make_engine(seed);
  const auto start = draw_subject_start(eng, cfg);
  const double xi = draw_normal(eng, cfg.sigma2_xi);
  const double v = draw_normal(eng, cfg.sigma2_v);
  const double c = start.censoring;
  const bool lagged = cfg.family == Family::GammaTreatmentLaggedY;

  Subject s;
  s.id = id;
  s.treatment = start.z;
  s.censoring_time = c;
  s.true_v = v;

  auto outcome = [&](double t) {
    return cfg.alpha0 + start.z * cfg.alpha1 + t * cfg.alpha2 + v +
           draw_normal(eng, cfg.sigma2_e);
  };
  double t = 0.0;
  double y = outcome(t);
  s.visit_times.push_back(t);
  s.outcomes.push_back(y);
  for (;;) {
    double log_scale = -cfg.psi * cfg.beta * start.z + xi;
    if (lagged) log_scale += cfg.omega * y;
    std::gamma_distribution<double> gap(cfg.gamma_shape, std::exp(log_scale));
    const double next = t + gap(eng);
    if (!(next < c)) break;
    t = next;
    y = outcome(t);
    s.visit_times.push_back(t);
    s.outcomes.push_back(y);
  }
  return s;
}

PanelDataset simulate_with(
    const ScenarioConfig& cfg, std::uint64_t seed,
    const std::function<Subject(const ScenarioConfig&, std::uint64_t, std::int64_t)>& one) {
  cfg.validate();
  std::vector<Subject> subjects;
  subjects.reserve(static_cast<std::size_t>(cfg.n_subjects));
  for (int i = 0; i < cfg.n_subjects; ++i) {
    subjects.push_back(one(cfg, derive_seed(seed, static_cast<std::uint64_t>(i)), i + 1));
  }
  return build_panel(std::move(subjects), cfg.name);
}

}  // namespace

PanelDataset simulate_joint_model(const ScenarioConfig& cfg, std::uint64_t seed) {
  if (cfg.family != Family::JointModel)
    throw ValidationError("simulate_joint_model requires the joint-model family");
  return simulate_with(cfg, seed, simulate_jm_subject);
}

PanelDataset simulate_gamma_process(const ScenarioConfig& cfg, std::uint64_t seed) {
  if (cfg.family == Family::JointModel)
    throw ValidationError("simulate_gamma_process requires a gamma family");
  return simulate_with(cfg, seed, simulate_gamma_subject);
}

PanelDataset simulate(const ScenarioConfig& cfg, std::uint64_t seed) {
  return cfg.family == Family::JointModel ? simulate_joint_model(cfg, seed)
                                          : simulate_gamma_process(cfg, seed);
}

// ---------------------------------------------------------------------------
// presets

namespace {

ScenarioConfig jm(const std::string& name, double gamma, double lambda) {
  ScenarioConfig c;
  c.name = name;
  c.family = Family::JointModel;
  c.gamma = gamma;
  c.weibull_scale = lambda;
  char buf[96];
  std::snprintf(buf, sizeof(buf), "JM (gamma = %.2f, lambda = %.2f)", gamma, lambda);
  c.label = buf;
  return c;
}

ScenarioConfig gamma_family(const std::string& name, const std::string& label,
                            Family f, double psi) {
  ScenarioConfig c;
  c.name = name;
  c.label = label;
  c.family = f;
  c.psi = psi;
  return c;
}

const std::vector<ScenarioConfig>& presets() {
  static const std::vector<ScenarioConfig> all = [] {
    std::vector<ScenarioConfig> v;
    v.push_back(gamma_family("gamma_psi0", "Gamma distribution not depending on treatment",
                             Family::GammaTreatment, 0.0));
    v.push_back(jm("jm_g00_l010", 0.0, 0.10));
    v.push_back(jm("jm_g00_l030", 0.0, 0.30));
    v.push_back(jm("jm_g00_l100", 0.0, 1.00));
    v.push_back(gamma_family("gamma_psi2", "Gamma distribution depending on treatment",
                             Family::GammaTreatment, 2.0));
    v.push_back(gamma_family("gamma_psi2_lagged",
                             "Gamma distribution depending on treatment and previous Y",
                             Family::GammaTreatmentLaggedY, 2.0));
    v.push_back(jm("jm_g15_l010", 1.5, 0.10));
    v.push_back(jm("jm_g15_l030", 1.5, 0.30));
    v.push_back(jm("jm_g15_l100", 1.5, 1.00));
    auto reg = jm("jm_g30_l005_regular", 3.0, 0.05);
    reg.regular_visits = true;
    reg.label += " with regular visits";
    v.push_back(reg);
    std::uint64_t seed = 1001;
    for (auto& c : v) c.seed = seed++;
    return v;
  }();
  return all;
}

}  // namespace

std::vector<std::string> preset_names() {
  std::vector<std::string> out;
  for (const auto& c : presets()) out.push_back(c.name);
  return out;
}

ScenarioConfig preset(const std::string& name) {
  for (const auto& c : presets()) {
    if (c.name == name) return c;
  }
  throw ValidationError("unknown preset '" + name + "'");
}

// ---------------------------------------------------------------------------
// config files

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty())
    throw ValidationError("config key '" + key + "': not a number: '" + v + "'");
  return x;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ValidationError("config key '" + key + "': not a boolean: '" + v + "'");
}

struct KeyDoc {
  const char* section;
  const char* key;
  const char* doc;
};

const std::vector<KeyDoc>& key_docs() {
  static const std::vector<KeyDoc> docs = {
      {"scenario", "name", "short scenario identifier written to output tables"},
      {"scenario", "label", "free-text description"},
      {"scenario", "family", "joint_model | gamma_treatment | gamma_treatment_lagged_y"},
      {"scenario", "n_subjects", "individuals per dataset (default 200)"},
      {"scenario", "gamma_shape", "shape of gamma gap times (default 2.0)"},
      {"scenario", "psi", "treatment effect multiplier on the gamma log-scale (0 or 2)"},
      {"scenario", "omega", "lagged-outcome effect on the gamma log-scale (default 0.20)"},
      {"scenario", "sigma2_xi", "variance of the gamma-process frailty xi (default 0.1)"},
      {"scenario", "regular_visits", "add scheduled visits (joint_model only; default false)"},
      {"scenario", "visit_interval", "spacing of scheduled visits in years (default 1.0)"},
      {"scenario", "regular_merge", "earliest | additive (default earliest)"},
      {"scenario", "censor_lower", "lower bound of uniform censoring time (default 5)"},
      {"scenario", "censor_upper", "upper bound of uniform censoring time (default 10)"},
      {"scenario", "seed", "master seed (64-bit unsigned)"},
      {"truth", "alpha0", "outcome intercept (default 0)"},
      {"truth", "alpha1", "treatment effect on the outcome (default 1)"},
      {"truth", "alpha2", "time slope of the outcome (default 0.2)"},
      {"truth", "beta", "treatment log-hazard ratio of the visit process (default 1)"},
      {"truth", "gamma", "association of the visit frailty with the outcome (default 0)"},
      {"truth", "lambda", "Weibull scale of the visit hazard (default 0.10)"},
      {"truth", "p", "Weibull shape of the visit hazard (default 1.05)"},
      {"truth", "sigma2_u", "visit-process frailty variance (default 1.0)"},
      {"truth", "sigma2_v", "outcome random-intercept variance (default 0.5)"},
      {"truth", "sigma2_e", "outcome residual variance (default 1.0)"},
  };
  return docs;
}

void assign(ScenarioConfig& c, const std::string& section, const std::string& key,
            const std::string& v) {
  const std::string k = section + "." + key;
  if (k == "scenario.name") c.name = v;
  else if (k == "scenario.label") c.label = v;
  else if (k == "scenario.family") {
    if (v == "joint_model") c.family = Family::JointModel;
    else if (v == "gamma_treatment") c.family = Family::GammaTreatment;
    else if (v == "gamma_treatment_lagged_y") c.family = Family::GammaTreatmentLaggedY;
    else throw ValidationError("config key 'family': unknown value '" + v + "'");
  } else if (k == "scenario.n_subjects") {
    const double n = to_double(key, v);
    if (n != std::floor(n)) throw ValidationError("n_subjects must be an integer");
    c.n_subjects = static_cast<int>(n);
  } else if (k == "scenario.gamma_shape") c.gamma_shape = to_double(key, v);
  else if (k == "scenario.psi") c.psi = to_double(key, v);
  else if (k == "scenario.omega") c.omega = to_double(key, v);
  else if (k == "scenario.sigma2_xi") c.sigma2_xi = to_double(key, v);
  else if (k == "scenario.regular_visits") c.regular_visits = to_bool(key, v);
  else if (k == "scenario.visit_interval") c.visit_interval = to_double(key, v);
  else if (k == "scenario.regular_merge") {
    if (v == "earliest") c.regular_merge = RegularMerge::Earliest;
    else if (v == "additive") c.regular_merge = RegularMerge::Additive;
    else throw ValidationError("config key 'regular_merge': unknown value '" + v + "'");
  } else if (k == "scenario.censor_lower") c.censor_lower = to_double(key, v);
  else if (k == "scenario.censor_upper") c.censor_upper = to_double(key, v);
  else if (k == "scenario.seed") {
    try {
      std::size_t used = 0;
      c.seed = std::stoull(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
    } catch (const std::exception&) {
      throw ValidationError("config key 'seed': not an unsigned integer: '" + v + "'");
    }
  } else if (k == "truth.alpha0") c.alpha0 = to_double(key, v);
  else if (k == "truth.alpha1") c.alpha1 = to_double(key, v);
  else if (k == "truth.alpha2") c.alpha2 = to_double(key, v);
  else if (k == "truth.beta") c.beta = to_double(key, v);
  else if (k == "truth.gamma") c.gamma = to_double(key, v);
  else if (k == "truth.lambda") c.weibull_scale = to_double(key, v);
  else if (k == "truth.p") c.weibull_shape = to_double(key, v);
  else if (k == "truth.sigma2_u") c.sigma2_u = to_double(key, v);
  else if (k == "truth.sigma2_v") c.sigma2_v = to_double(key, v);
  else if (k == "truth.sigma2_e") c.sigma2_e = to_double(key, v);
  else throw ValidationError("unknown config key '" + key + "' in [" + section + "]");
}

}  // namespace

ScenarioConfig parse_scenario_config(std::istream& is) {
  ScenarioConfig c;
  std::string section;
  std::set<std::string> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ValidationError("line " + std::to_string(line_no) + ": bad section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section != "scenario" && section != "truth")
        throw ValidationError("unknown config section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ValidationError("line " + std::to_string(line_no) + ": expected key = value");
    if (section.empty())
      throw ValidationError("line " + std::to_string(line_no) + ": key outside a section");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (!seen.insert(section + "." + key).second)
      throw ValidationError("duplicate config key '" + key + "'");
    assign(c, section, key, value);
  }
  c.validate();
  return c;
}

ScenarioConfig load_scenario_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file " + path);
  return parse_scenario_config(in);
}

void write_scenario_config(std::ostream& os, const ScenarioConfig& c) {
  auto num = [](double x) { return format_double(x); };
  os << "[scenario]\n"
     << "name = " << c.name << '\n'
     << "label = " << c.label << '\n'
     << "family = " << to_string(c.family) << '\n'
     << "n_subjects = " << c.n_subjects << '\n'
     << "gamma_shape = " << num(c.gamma_shape) << '\n'
     << "psi = " << num(c.psi) << '\n'
     << "omega = " << num(c.omega) << '\n'
     << "sigma2_xi = " << num(c.sigma2_xi) << '\n'
     << "regular_visits = " << (c.regular_visits ? "true" : "false") << '\n'
     << "visit_interval = " << num(c.visit_interval) << '\n'
     << "regular_merge = "
     << (c.regular_merge == RegularMerge::Earliest ? "earliest" : "additive") << '\n'
     << "censor_lower = " << num(c.censor_lower) << '\n'
     << "censor_upper = " << num(c.censor_upper) << '\n'
     << "seed = " << c.seed << '\n'
     << "\n[truth]\n"
     << "alpha0 = " << num(c.alpha0) << '\n'
     << "alpha1 = " << num(c.alpha1) << '\n'
     << "alpha2 = " << num(c.alpha2) << '\n'
     << "beta = " << num(c.beta) << '\n'
     << "gamma = " << num(c.gamma) << '\n'
     << "lambda = " << num(c.weibull_scale) << '\n'
     << "p = " << num(c.weibull_shape) << '\n'
     << "sigma2_u = " << num(c.sigma2_u) << '\n'
     << "sigma2_v = " << num(c.sigma2_v) << '\n'
     << "sigma2_e = " << num(c.sigma2_e) << '\n';
}

std::string scenario_config_help() {
  std::ostringstream os;
  os << "Scenario config keys (key = value, '#' starts a comment):\n";
  std::string section;
  for (const auto& d : key_docs()) {
    if (section != d.section) {
      section = d.section;
      os << "  [" << section << "]\n";
    }
    char buf[160];
    std::snprintf(buf, sizeof(buf), "    %-16s %s\n", d.key, d.doc);
    os << buf;
  }
  return os.str();
}

}  // namespace visitsim
