#pragma once

// Joint model for a recurrent visit process and a longitudinal outcome.
//
//   visit hazard (gap scale):  r(t | Z, u) = lambda p t^(p-1) exp(beta Z + u)
//   outcome at a visit:        y = alpha0 + alpha1 Z + alpha2 t + gamma u + v + e
//
// with u ~ N(0, sigma_u^2), v ~ N(0, sigma_v^2), e ~ N(0, sigma_e^2), all
// independent. v is integrated in closed form; u by Gauss-Hermite quadrature.

#include <Eigen/Dense>
#include <array>
#include <string>
#include <vector>

#include "visitsim/domain.hpp"
#include "visitsim/optim.hpp"
#include "visitsim/quadrature.hpp"

namespace visitsim {

struct JointParams {
  double alpha0 = 0, alpha1 = 0, alpha2 = 0;
  double gamma = 0;
  double log_sigma_v = 0, log_sigma_e = 0;
  double beta = 0, log_lambda = 0, log_p = 0;
  double log_sigma_u = 0;

  // Packed order used by the optimiser and by gradient vectors.
  enum Index {
    kAlpha0, kAlpha1, kAlpha2, kGamma, kLogSigmaV, kLogSigmaE,
    kBeta, kLogLambda, kLogP, kLogSigmaU, kCount
  };
  static const std::array<const char*, kCount>& packed_names();

  Eigen::VectorXd to_vector() const;
  static JointParams from_vector(const Eigen::VectorXd& v);
};

enum class QuadratureMode {
  /// Nodes placed on the N(0, sigma_u^2) prior.
  Fixed,
  /// Nodes centred and scaled at each subject's posterior mode of u.
  Adaptive,
};

/// Per-subject centre and scale of the adaptive rule.
struct Centering {
  std::vector<double> centre;
  std::vector<double> scale;
};

/// Per-subject sufficient pieces of a panel, laid out for repeated evaluation.
class JointData {
 public:
  explicit JointData(const PanelDataset& panel);

  std::size_t n_subjects() const { return subjects_.size(); }
  const std::vector<std::int64_t>& subject_ids() const { return ids_; }

  /// Sum of per-subject log-integrals; gradient w.r.t. the packed vector.
  /// `centering` selects the adaptive rule; null means fixed nodes.
  double loglik(const Eigen::VectorXd& theta, const QuadratureRule& rule,
                const Centering* centering, Eigen::VectorXd* grad,
                std::vector<double>* per_subject = nullptr) const;

  /// Recurrent submodel only, u integrated over its prior with fixed nodes.
  double recurrent_loglik(const Eigen::VectorXd& theta, const QuadratureRule& rule) const;

  /// Posterior mode of u and inverse-curvature scale for every subject.
  Centering centre(const Eigen::VectorXd& theta) const;

 private:
  struct SubjectBlock {
    int z;
    int n;             // outcome rows
    int events;        // observed gaps
    double sum_log_gap;  // over observed gaps
    std::size_t gap_begin, gap_end;
    std::size_t row_begin;
  };
  std::vector<SubjectBlock> subjects_;
  std::vector<std::int64_t> ids_;
  std::vector<double> gaps_, log_gaps_;
  std::vector<double> time_, y_;
};

double joint_loglik(const JointParams& params, const PanelDataset& panel,
                    const QuadratureRule& rule, QuadratureMode mode = QuadratureMode::Adaptive);

struct JointFitOptions {
  int quadrature_order = 25;
  QuadratureMode mode = QuadratureMode::Adaptive;
  OptimOptions optim{};
  /// Adaptive mode: maximum number of re-centring rounds.
  int max_recentre = 8;
};

/// Starting values: plain mixed model for the outcome parameters, a Weibull
/// gap regression (started at the Andersen-Gill estimate) for the visit
/// process, gamma = 0, sigma_u = 0.5.
JointParams joint_start_values(const PanelDataset& panel);

/// Maximum likelihood fit of the joint model; reports alpha0..2, gamma, beta,
/// lambda, p, sigma2_u, sigma2_v, sigma2_e.
FitResult fit_joint(const PanelDataset& panel, const JointFitOptions& options = {});

/// Same, returning also the packed estimate.
FitResult fit_joint(const PanelDataset& panel, const JointFitOptions& options,
                    Eigen::VectorXd* packed_estimate);

/// Weibull gap regression without frailty; returns (beta, log lambda, log p).
Eigen::Vector3d fit_weibull_gaps(const PanelDataset& panel, double beta_start);

}  // namespace visitsim
