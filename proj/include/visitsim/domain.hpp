#pragma once

// Core data types shared across the toolkit: subjects with their visit
// histories, the gap-time records derived from them, and fit results.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace visitsim {

/// Raised when input data violate a structural invariant.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a numerical routine cannot produce a usable answer.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Subject {
  std::int64_t id = 0;
  int treatment = 0;           // Z in {0,1}
  double censoring_time = 0;   // C, years
  std::vector<double> visit_times;  // first entry is the baseline visit at 0
  std::vector<double> outcomes;
  std::optional<double> true_u;
  std::optional<double> true_v;

  std::size_t n_visits() const { return visit_times.size(); }
};

/// One gap between consecutive visits (or between the last visit and C).
/// `index` is 1-based: gap j spans visit j-1 to visit j.
struct GapRecord {
  std::int64_t subject_id = 0;
  int index = 1;
  double gap = 0;
  bool observed = false;
  std::vector<double> covariates;
};

/// Throws ValidationError naming the subject when an invariant fails.
void validate_subject(const Subject& s);

class PanelDataset {
 public:
  PanelDataset() = default;

  const std::vector<Subject>& subjects() const { return subjects_; }
  const std::vector<GapRecord>& gap_records() const { return gaps_; }
  const std::string& scenario_tag() const { return tag_; }

  std::size_t n_subjects() const { return subjects_.size(); }
  std::size_t n_rows() const;

  friend PanelDataset build_panel(std::vector<Subject> subjects,
                                  std::string scenario_tag);

 private:
  std::vector<Subject> subjects_;
  std::vector<GapRecord> gaps_;
  std::string tag_;
};

/// Validates every subject and derives gap records: successive visit
/// differences (observed) plus one censored gap per subject ending at C.
/// Gap covariates default to the subject's treatment indicator.
PanelDataset build_panel(std::vector<Subject> subjects,
                         std::string scenario_tag = {});

// Long-format CSV: subject_id,z,censoring_time,visit_time,y
void write_panel_csv(std::ostream& os, const PanelDataset& panel);
PanelDataset read_panel_csv(std::istream& is, std::string scenario_tag = {});

enum class ModelLabel { A, B, C, D, E };

char to_char(ModelLabel m);
ModelLabel model_from_char(char c);
std::vector<ModelLabel> parse_model_list(const std::string& csv);

struct FitResult {
  ModelLabel model = ModelLabel::D;
  std::vector<std::string> names;
  std::vector<double> estimates;
  std::vector<double> std_errors;
  std::optional<double> loglik;
  bool converged = false;
  int iterations = 0;

  void add(std::string name, double est, double se) {
    names.push_back(std::move(name));
    estimates.push_back(est);
    std_errors.push_back(se);
  }
  /// Index of a named parameter, or throws std::out_of_range.
  std::size_t index_of(const std::string& name) const;
  double estimate(const std::string& name) const {
    return estimates[index_of(name)];
  }
  double std_error(const std::string& name) const {
    return std_errors[index_of(name)];
  }
};

std::string fit_result_to_json(const FitResult& fit);
FitResult fit_result_from_json(const std::string& text);

/// Shortest round-trip decimal representation used in every CSV writer.
std::string format_double(double x);

}  // namespace visitsim
