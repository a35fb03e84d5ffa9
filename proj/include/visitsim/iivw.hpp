#pragma once

// Inverse-intensity-of-visiting weights and the weighted marginal model.

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "visitsim/domain.hpp"
#include "visitsim/survfit.hpp"

namespace visitsim {

struct WeightEntry {
  std::int64_t subject_id;
  int visit_index;  // 0 = baseline
  double weight;
};

class WeightTable {
 public:
  WeightTable() = default;
  explicit WeightTable(std::vector<WeightEntry> entries) : entries_(std::move(entries)) {}

  const std::vector<WeightEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  /// Weights in panel row order (subject by subject, visit by visit).
  std::vector<double> values() const;

  /// Number of non-positive weights, reported as a warning by callers.
  int n_nonpositive = 0;
  /// Normalised weights before the shift and first-visit override.
  std::vector<double> normalized;

 private:
  std::vector<WeightEntry> entries_;
};

/// raw = 1 / exp(z eta) at each visit, normalised to mean one by
/// raw - mean(raw) + 1, attached to the following visit; baseline gets 1.
WeightTable compute_iiv_weights(const CoxFit& coxfit, const PanelDataset& panel);

/// Weight-model covariates of each visit: those of the gap that starts there.
std::vector<std::vector<double>> visit_covariates(const PanelDataset& panel);

void write_weight_csv(std::ostream& os, const WeightTable& table);

/// Weighted least squares for E(y) = alpha0 + alpha1 Z + alpha2 t with
/// independence working correlation; cluster-robust sandwich SEs by subject.
FitResult fit_wgee(const PanelDataset& panel, const std::vector<double>& weights);
FitResult fit_wgee(const PanelDataset& panel, const WeightTable& weights);

/// Full two-stage procedure: Andersen-Gill on the treatment, weights, GEE.
FitResult fit_iivw(const PanelDataset& panel);

}  // namespace visitsim
