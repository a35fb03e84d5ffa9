#pragma once

// Random-intercept linear mixed models fitted by maximum likelihood:
// plain (D), adjusted for the centred total visit count (B), and adjusted
// for the cumulative visit count (C).

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "visitsim/domain.hpp"
#include "visitsim/optim.hpp"

namespace visitsim {

enum class CountAdjustment { None, TotalCountCentered, CumulativeCount };

struct LmmSpec {
  CountAdjustment adjustment = CountAdjustment::None;

  static LmmSpec for_model(ModelLabel m);
  ModelLabel model() const;
};

/// Stacked design for a random-intercept model; rows of subject i occupy
/// [offsets[i], offsets[i+1]).
struct LmmDesign {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
  std::vector<Eigen::Index> offsets;
  std::vector<std::string> names;

  Eigen::Index n_subjects() const { return static_cast<Eigen::Index>(offsets.size()) - 1; }
  Eigen::Index n_coef() const { return x.cols(); }

  /// Columns: intercept, treatment, time, and the count column if any.
  /// Throws NumericalError naming the first column that is collinear with
  /// the preceding ones.
  static LmmDesign from_panel(const PanelDataset& panel, const LmmSpec& spec);
};

/// Throws NumericalError naming the first linearly dependent column.
void check_full_column_rank(const Eigen::MatrixXd& x, const std::vector<std::string>& names);

struct LmmParams {
  Eigen::VectorXd alpha;
  double sigma2_v = 1;
  double sigma2_e = 1;
};

/// Marginal Gaussian log-likelihood of the random-intercept model.
double lmm_loglik(const LmmParams& params, const LmmDesign& design);
double lmm_loglik(const LmmParams& params, const PanelDataset& panel, const LmmSpec& spec);

/// Log-likelihood on the packed scale (alpha, log sigma_v, log sigma_e) with
/// its analytic gradient.
double lmm_loglik_packed(const Eigen::VectorXd& theta, const LmmDesign& design,
                         Eigen::VectorXd* grad);

struct LmmFitOptions {
  OptimOptions optim{};
};

/// Maximum likelihood fit (not REML). Reports alpha*, sigma2_v, sigma2_e.
FitResult fit_lmm(const PanelDataset& panel, const LmmSpec& spec,
                  const LmmFitOptions& options = {});
FitResult fit_lmm(const LmmDesign& design, ModelLabel label,
                  const LmmFitOptions& options = {});

}  // namespace visitsim
