// visitsim command-line front end.
//
// Exit codes: 0 success, 1 validation or usage error, 2 numerical failure.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <unistd.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "visitsim/dgm.hpp"
#include "visitsim/harness.hpp"
#include "visitsim/jointfit.hpp"

#ifndef VISITSIM_VERSION
#define VISITSIM_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using namespace visitsim;

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitNumerical = 2;

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

// Writes through a temporary file in the target directory, then renames.
void write_atomically(const fs::path& path, const std::function<void(std::ostream&)>& body) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw ValidationError("cannot open " + tmp.string() + " for writing");
    body(os);
    os.flush();
    if (!os) throw ValidationError("write to " + tmp.string() + " failed");
  }
  fs::rename(tmp, path);
}

struct ScenarioSource {
  std::string config_path;
  std::string preset_name;

  void attach(CLI::App* app) {
    auto* c = app->add_option("--config", config_path, "Scenario config file")
                  ->check(CLI::ExistingFile);
    auto* p = app->add_option("--preset", preset_name, "Built-in scenario name");
    c->excludes(p);
  }

  ScenarioConfig load() const {
    if (!config_path.empty()) return load_scenario_config(config_path);
    if (!preset_name.empty()) return preset(preset_name);
    throw ValidationError("one of --config or --preset is required");
  }
};

// --seed flag, then VISITSIM_SEED, then the config's own seed.
std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, std::uint64_t fallback) {
  if (flag) return *flag;
  if (const char* env = std::getenv("VISITSIM_SEED"); env && *env) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used != std::string(env).size()) throw std::invalid_argument(env);
      return v;
    } catch (const std::exception&) {
      throw ValidationError(std::string("VISITSIM_SEED is not an unsigned integer: ") + env);
    }
  }
  return fallback;
}

std::string config_text(const ScenarioConfig& cfg) {
  std::ostringstream os;
  write_scenario_config(os, cfg);
  return os.str();
}

void write_manifest(const fs::path& path, const std::string& command,
                    const std::optional<ScenarioConfig>& cfg, std::uint64_t seed,
                    const nlohmann::ordered_json& args,
                    const std::vector<std::string>& outputs) {
  nlohmann::ordered_json m;
  m["tool"] = "visitsim";
  m["version"] = VISITSIM_VERSION;
  m["command"] = command;
  m["master_seed"] = seed;
  if (cfg) {
    const auto text = config_text(*cfg);
    m["config_hash"] = "fnv1a64:" + hex64(fnv1a(text));
    m["config"] = text;
  }
  m["arguments"] = args;
  m["outputs"] = outputs;
  write_atomically(path, [&](std::ostream& os) { os << m.dump(2) << '\n'; });
}

fs::path manifest_beside(const fs::path& out) {
  fs::path m = out;
  m += ".manifest.json";
  return m;
}

std::string models_string(const std::vector<ModelLabel>& models) {
  std::string s;
  for (auto m : models) {
    if (!s.empty()) s += ',';
    s += to_char(m);
  }
  return s;
}

struct JointCli {
  int quad_order = 25;
  std::string quad_mode = "adaptive";

  void attach(CLI::App* app) {
    app->add_option("--quad-order", quad_order, "Gauss-Hermite order for model A")
        ->check(CLI::Range(3, 200));
    app->add_option("--quad-mode", quad_mode, "Quadrature for model A: adaptive | fixed")
        ->check(CLI::IsMember({"adaptive", "fixed"}));
  }
  FitOptions options() const {
    FitOptions o;
    o.joint.quadrature_order = quad_order;
    o.joint.mode = quad_mode == "fixed" ? QuadratureMode::Fixed : QuadratureMode::Adaptive;
    return o;
  }
};

PanelDataset load_panel(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open panel " + path);
  return read_panel_csv(is, fs::path(path).stem().string());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simulation and analysis of longitudinal data with informative visit processes"};
  app.set_version_flag("--version", std::string("visitsim ") + VISITSIM_VERSION);
  app.require_subcommand(1);
  const std::string keys_footer = "\n" + scenario_config_help();

  // simulate
  auto* sim = app.add_subcommand("simulate", "Simulate one panel dataset to CSV");
  ScenarioSource sim_src;
  sim_src.attach(sim);
  std::optional<std::uint64_t> sim_seed;
  std::string sim_out;
  sim->add_option("--seed", sim_seed, "Panel seed (default: VISITSIM_SEED, then config seed)");
  sim->add_option("--out", sim_out, "Output panel CSV")->required();
  sim->footer(keys_footer);

  // fit
  auto* fit = app.add_subcommand("fit", "Fit models A-E to a panel CSV");
  std::string fit_panel, fit_out, fit_models = "A,B,C,D,E", fit_dump;
  JointCli fit_joint_cli;
  fit->add_option("--panel", fit_panel, "Panel CSV (subject_id,z,censoring_time,visit_time,y)")
      ->required()
      ->check(CLI::ExistingFile);
  fit->add_option("--models", fit_models, "Comma-separated subset of A,B,C,D,E");
  fit->add_option("--out", fit_out, "Write fit results as JSON");
  fit->add_option("--dump-loglik", fit_dump, "Per-subject log-likelihood CSV for model A");
  fit_joint_cli.attach(fit);
  fit->footer(keys_footer);

  // run-study
  auto* study = app.add_subcommand("run-study", "Monte Carlo study for one scenario");
  ScenarioSource study_src;
  study_src.attach(study);
  int study_reps = 200;
  bool study_full = false;
  std::string study_models = "A,B,C,D,E", study_out = ".";
  int study_threads = 0;
  std::optional<std::uint64_t> study_seed;
  JointCli study_joint_cli;
  study->add_option("--reps", study_reps, "Replications K (default 200)")->check(CLI::Range(2, 1000000));
  study->add_flag("--full", study_full, "Use K = 1000 replications");
  study->add_option("--models", study_models, "Comma-separated subset of A,B,C,D,E");
  study->add_option("--threads", study_threads, "Worker threads (0 = available parallelism)")
      ->check(CLI::NonNegativeNumber);
  study->add_option("--seed", study_seed, "Master seed (default: VISITSIM_SEED, then config seed)");
  study->add_option("--out-dir", study_out, "Directory for estimates.csv, performance.csv, manifest.json");
  study_joint_cli.attach(study);
  study->footer(keys_footer);

  // summarize
  auto* summ = app.add_subcommand("summarize", "Performance measures from an estimates CSV");
  ScenarioSource summ_src;
  summ_src.attach(summ);
  std::string summ_in, summ_out;
  summ->add_option("--estimates", summ_in, "Estimates CSV")->required()->check(CLI::ExistingFile);
  summ->add_option("--out", summ_out, "Performance CSV")->required();
  summ->footer(keys_footer);

  // describe
  auto* desc = app.add_subcommand("describe", "Descriptive summary of simulated datasets");
  ScenarioSource desc_src;
  desc_src.attach(desc);
  int desc_reps = 200, desc_threads = 0;
  std::optional<std::uint64_t> desc_seed;
  std::string desc_out;
  desc->add_option("--reps", desc_reps, "Number of datasets")->check(CLI::PositiveNumber);
  desc->add_option("--threads", desc_threads, "Worker threads (0 = available parallelism)")
      ->check(CLI::NonNegativeNumber);
  desc->add_option("--seed", desc_seed, "Master seed (default: VISITSIM_SEED, then config seed)");
  desc->add_option("--out", desc_out, "Descriptives CSV")->required();
  desc->footer(keys_footer);

  // diagnose
  auto* diag = app.add_subcommand("diagnose", "Informativeness diagnostics for a panel");
  std::string diag_panel, diag_cov = "z", diag_out;
  DiagnosticsOptions diag_opts;
  diag->add_option("--panel", diag_panel, "Panel CSV")->required()->check(CLI::ExistingFile);
  diag->add_option("--covariate", diag_cov, "Subject-level covariate (z)");
  diag->add_option("--permutations", diag_opts.permutations, "Permutations for the Spearman p-value")
      ->check(CLI::PositiveNumber);
  diag->add_option("--perm-seed", diag_opts.seed, "Seed for the permutation test");
  diag->add_option("--out", diag_out, "Diagnostics JSON");
  diag->footer(keys_footer);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    if (*sim) {
      const auto cfg = sim_src.load();
      const auto seed = resolve_seed(sim_seed, cfg.seed);
      const auto panel = simulate(cfg, seed);
      write_atomically(sim_out, [&](std::ostream& os) { write_panel_csv(os, panel); });
      write_manifest(manifest_beside(sim_out), "simulate", cfg, seed,
                     {{"out", sim_out}}, {fs::path(sim_out).filename().string()});
      std::cout << "wrote " << sim_out << " (" << panel.n_subjects() << " subjects, "
                << panel.n_rows() << " rows)\n";
    } else if (*fit) {
      const auto panel = load_panel(fit_panel);
      const auto models = parse_model_list(fit_models);
      const auto opts = fit_joint_cli.options();
      nlohmann::ordered_json results = nlohmann::ordered_json::array();
      bool numerical_failure = false;
      for (auto m : models) {
        FitResult r;
        if (m == ModelLabel::A && !fit_dump.empty()) {
          Eigen::VectorXd theta;
          r = fit_joint(panel, opts.joint, &theta);
          const JointData data(panel);
          const auto rule = QuadratureRule::gauss_hermite(opts.joint.quadrature_order);
          std::vector<double> per;
          if (opts.joint.mode == QuadratureMode::Adaptive) {
            const auto c = data.centre(theta);
            data.loglik(theta, rule, &c, nullptr, &per);
          } else {
            data.loglik(theta, rule, nullptr, nullptr, &per);
          }
          write_atomically(fit_dump, [&](std::ostream& os) {
            os << "subject_id,loglik\n";
            for (std::size_t i = 0; i < per.size(); ++i)
              os << data.subject_ids()[i] << ',' << format_double(per[i]) << '\n';
          });
        } else {
          r = fit_model(panel, m, opts);
        }
        numerical_failure = numerical_failure || !r.converged;
        std::cout << "model " << to_char(r.model) << (r.converged ? "" : " (not converged)") << '\n';
        for (std::size_t k = 0; k < r.names.size(); ++k)
          std::cout << "  " << r.names[k] << " = " << format_double(r.estimates[k]) << " (se "
                    << format_double(r.std_errors[k]) << ")\n";
        results.push_back(nlohmann::ordered_json::parse(fit_result_to_json(r)));
      }
      if (!fit_out.empty()) {
        write_atomically(fit_out, [&](std::ostream& os) { os << results.dump(2) << '\n'; });
        write_manifest(manifest_beside(fit_out), "fit", std::nullopt, 0,
                       {{"panel", fit_panel},
                        {"models", fit_models},
                        {"quad_order", opts.joint.quadrature_order},
                        {"quad_mode", fit_joint_cli.quad_mode}},
                       {fs::path(fit_out).filename().string()});
      }
      if (numerical_failure) {
        std::cerr << "visitsim: at least one model did not converge\n";
        return kExitNumerical;
      }
    } else if (*study) {
      StudyConfig sc;
      sc.scenario = study_src.load();
      sc.models = parse_model_list(study_models);
      sc.reps = study_full ? 1000 : study_reps;
      sc.master_seed = resolve_seed(study_seed, sc.scenario.seed);
      sc.threads = study_threads;
      sc.fit = study_joint_cli.options();
      const auto estimates = run_study(sc);
      const auto perf = summarize(estimates, scenario_truths(sc.scenario));
      const fs::path dir(study_out);
      write_atomically(dir / "estimates.csv",
                       [&](std::ostream& os) { write_estimates_csv(os, estimates); });
      write_atomically(dir / "performance.csv",
                       [&](std::ostream& os) { write_performance_csv(os, perf); });
      write_manifest(dir / "manifest.json", "run-study", sc.scenario, sc.master_seed,
                     {{"reps", sc.reps},
                      {"models", models_string(sc.models)},
                      {"quad_order", sc.fit.joint.quadrature_order},
                      {"quad_mode", study_joint_cli.quad_mode}},
                     {"estimates.csv", "performance.csv"});
      std::cout << "wrote " << (dir / "estimates.csv").string() << " and "
                << (dir / "performance.csv").string() << '\n';
    } else if (*summ) {
      const auto cfg = summ_src.load();
      std::ifstream is(summ_in);
      if (!is) throw ValidationError("cannot open " + summ_in);
      const auto perf = summarize(read_estimates_csv(is), scenario_truths(cfg));
      write_atomically(summ_out, [&](std::ostream& os) { write_performance_csv(os, perf); });
      write_manifest(manifest_beside(summ_out), "summarize", cfg, cfg.seed,
                     {{"estimates", summ_in}}, {fs::path(summ_out).filename().string()});
    } else if (*desc) {
      const auto cfg = desc_src.load();
      const auto seed = resolve_seed(desc_seed, cfg.seed);
      const auto d = describe_datasets(cfg, desc_reps, seed, desc_threads);
      write_atomically(desc_out, [&](std::ostream& os) { write_descriptives_csv(os, d); });
      write_manifest(manifest_beside(desc_out), "describe", cfg, seed, {{"reps", desc_reps}},
                     {fs::path(desc_out).filename().string()});
      write_descriptives_csv(std::cout, d);
    } else if (*diag) {
      const auto panel = load_panel(diag_panel);
      const auto d = diagnose_informativeness(panel, diag_cov, diag_opts);
      std::cout << "spearman rho = " << format_double(d.spearman_rho)
                << " (permutation p = " << format_double(d.spearman_p) << ")\n"
                << "Andersen-Gill hazard ratio = " << format_double(d.hazard_ratio) << " (95% CI "
                << format_double(d.hr_lower) << " to " << format_double(d.hr_upper) << ")\n";
      if (!d.applicable) std::cout << "not applicable: " << d.message << '\n';
      if (!diag_out.empty()) {
        write_atomically(diag_out, [&](std::ostream& os) { os << diagnostics_to_json(d) << '\n'; });
        write_manifest(manifest_beside(diag_out), "diagnose", std::nullopt, diag_opts.seed,
                       {{"panel", diag_panel},
                        {"covariate", diag_cov},
                        {"permutations", diag_opts.permutations}},
                       {fs::path(diag_out).filename().string()});
      }
    }
  } catch (const NumericalError& e) {
    std::cerr << "visitsim: numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const ValidationError& e) {
    std::cerr << "visitsim: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::invalid_argument& e) {
    std::cerr << "visitsim: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::out_of_range& e) {
    std::cerr << "visitsim: " << e.what() << '\n';
    return kExitValidation;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "visitsim: " << e.what() << '\n';
    return kExitValidation;
  }
  return 0;
}
