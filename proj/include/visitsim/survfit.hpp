#pragma once

// Andersen-Gill proportional intensity model on the gap-time scale, fitted
// by Cox partial likelihood (Breslow ties) with cluster-robust variance.

#include <Eigen/Dense>
#include <span>
#include <string>
#include <vector>

#include "visitsim/domain.hpp"

namespace visitsim {

/// Gap records in the layout the partial likelihood needs.
struct AgRecords {
  Eigen::VectorXd gap;
  std::vector<char> event;
  Eigen::MatrixXd x;               // one row per record
  std::vector<int> cluster;        // 0..n_clusters-1, by first appearance
  std::vector<std::int64_t> cluster_ids;
  std::vector<Eigen::Index> order;  // record indices by decreasing gap

  Eigen::Index size() const { return gap.size(); }
  Eigen::Index n_covariates() const { return x.cols(); }
  int n_clusters() const { return static_cast<int>(cluster_ids.size()); }
  int n_events() const;

  static AgRecords from_gaps(std::span<const GapRecord> records);
};

struct CoxValue {
  double loglik = 0;
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;
};

/// Breslow partial log-likelihood with gradient and Hessian. Risk set at gap
/// g is every record with gap >= g; `exclude_cluster` drops one cluster.
/// Throws ValidationError("no events") when nothing is observed.
CoxValue cox_partial_loglik(const Eigen::VectorXd& eta, const AgRecords& data,
                            int exclude_cluster = -1);
CoxValue cox_partial_loglik(const Eigen::VectorXd& eta, std::span<const GapRecord> records);

enum class RobustVariance { Jackknife, Sandwich };
enum class JackknifeMode { OneStep, ExactRefit };

struct AgOptions {
  RobustVariance robust = RobustVariance::Jackknife;
  JackknifeMode jackknife = JackknifeMode::OneStep;
  int max_iter = 50;
  double grad_tol = 1e-9;
  double decrement_tol = 1e-14;
};

struct CoxFit {
  Eigen::VectorXd eta;
  Eigen::MatrixXd naive_cov;
  Eigen::MatrixXd robust_cov;
  double loglik = 0;
  bool converged = false;
  int n_events = 0;
  int iterations = 0;
  /// Covariates without contrast; their coefficient is fixed at 0.
  std::vector<bool> dropped;
  std::string message;

  double robust_se(Eigen::Index k) const;
};

CoxFit fit_andersen_gill(const AgRecords& data, const AgOptions& options = {});
CoxFit fit_andersen_gill(std::span<const GapRecord> records, const AgOptions& options = {});

/// Grouped leave-one-cluster-out estimates (rows) around the full-data fit.
Eigen::MatrixXd jackknife_estimates(const AgRecords& data, const CoxFit& fit,
                                    JackknifeMode mode);

/// ((K-1)/K) * sum_k (est_k - mean)(est_k - mean)^T over the K rows.
Eigen::MatrixXd jackknife_covariance(const Eigen::MatrixXd& leave_one_out);

/// Per-cluster summed score residuals (rows) at eta.
Eigen::MatrixXd cluster_score_residuals(const AgRecords& data, const Eigen::VectorXd& eta);

}  // namespace visitsim
