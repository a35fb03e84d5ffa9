#include "visitsim/iivw.hpp"

#include <cmath>
#include <ostream>

namespace visitsim {

std::vector<double> WeightTable::values() const {
  std::vector<double> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.weight);
  return out;
}

std::vector<std::vector<double>> visit_covariates(const PanelDataset& panel) {
  std::vector<std::vector<double>> out;
  out.reserve(panel.n_rows());
  const auto& gaps = panel.gap_records();
  std::size_t g = 0;
  for (const auto& s : panel.subjects()) {
    // gap index j+1 starts at visit j; the final gap is the censored one
    for (std::size_t j = 0; j < s.n_visits(); ++j, ++g) out.push_back(gaps[g].covariates);
  }
  return out;
}

WeightTable compute_iiv_weights(const CoxFit& coxfit, const PanelDataset& panel) {
  if (!coxfit.converged) throw ValidationError("weight model did not converge");
  const auto cov = visit_covariates(panel);
  std::vector<double> raw(cov.size());
  double mean = 0;
  for (std::size_t r = 0; r < cov.size(); ++r) {
    if (static_cast<Eigen::Index>(cov[r].size()) != coxfit.eta.size())
      throw ValidationError("weight model and panel covariates differ in dimension");
    double lp = 0;
    for (std::size_t k = 0; k < cov[r].size(); ++k) lp += cov[r][k] * coxfit.eta[static_cast<Eigen::Index>(k)];
    raw[r] = std::exp(-lp);
    mean += raw[r];
  }
  mean /= static_cast<double>(raw.size());

  std::vector<double> normalized(raw.size());
  for (std::size_t r = 0; r < raw.size(); ++r) normalized[r] = raw[r] - mean + 1.0;

  std::vector<WeightEntry> entries;
  entries.reserve(raw.size());
  int nonpositive = 0;
  std::size_t r = 0;
  for (const auto& s : panel.subjects()) {
    for (std::size_t j = 0; j < s.n_visits(); ++j, ++r) {
      const double w = j == 0 ? 1.0 : normalized[r - 1];
      if (!(w > 0)) ++nonpositive;
      entries.push_back({s.id, static_cast<int>(j), w});
    }
  }
  WeightTable table(std::move(entries));
  table.n_nonpositive = nonpositive;
  table.normalized = std::move(normalized);
  return table;
}

void write_weight_csv(std::ostream& os, const WeightTable& table) {
  os << "subject_id,visit_index,weight\n";
  for (const auto& e : table.entries())
    os << e.subject_id << ',' << e.visit_index << ',' << format_double(e.weight) << '\n';
}

FitResult fit_wgee(const PanelDataset& panel, const std::vector<double>& weights) {
  const auto n = static_cast<Eigen::Index>(panel.n_rows());
  if (static_cast<Eigen::Index>(weights.size()) != n)
    throw ValidationError("weights do not cover every (subject, visit)");
  Eigen::MatrixXd x(n, 3);
  Eigen::VectorXd y(n), w(n);
  std::vector<Eigen::Index> offsets;
  Eigen::Index row = 0;
  for (const auto& s : panel.subjects()) {
    offsets.push_back(row);
    for (std::size_t j = 0; j < s.n_visits(); ++j, ++row) {
      x(row, 0) = 1.0;
      x(row, 1) = s.treatment;
      x(row, 2) = s.visit_times[j];
      y[row] = s.outcomes[j];
      w[row] = weights[static_cast<std::size_t>(row)];
    }
  }
  offsets.push_back(row);

  const Eigen::MatrixXd bread = x.transpose() * w.asDiagonal() * x;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(bread);
  lu.setThreshold(1e-12);
  if (!lu.isInvertible()) throw NumericalError("singular weighted normal equations");
  const Eigen::VectorXd alpha = lu.solve(x.transpose() * w.asDiagonal() * y);
  const Eigen::MatrixXd bread_inv = lu.inverse();

  const Eigen::VectorXd resid = y - x * alpha;
  Eigen::Matrix3d meat = Eigen::Matrix3d::Zero();
  for (std::size_t i = 0; i + 1 < offsets.size(); ++i) {
    const Eigen::Index b = offsets[i], m = offsets[i + 1] - b;
    const Eigen::Vector3d u = x.middleRows(b, m).transpose() *
                              (w.segment(b, m).cwiseProduct(resid.segment(b, m)));
    meat += u * u.transpose();
  }
  const double k = static_cast<double>(panel.n_subjects());
  const Eigen::MatrixXd v = (k / (k - 1)) * bread_inv * meat * bread_inv;

  FitResult fit;
  fit.model = ModelLabel::E;
  fit.converged = alpha.allFinite() && v.allFinite();
  fit.iterations = 1;
  const char* names[] = {"alpha0", "alpha1", "alpha2"};
  for (int c = 0; c < 3; ++c) fit.add(names[c], alpha[c], std::sqrt(std::max(v(c, c), 0.0)));
  return fit;
}

FitResult fit_wgee(const PanelDataset& panel, const WeightTable& weights) {
  return fit_wgee(panel, weights.values());
}

FitResult fit_iivw(const PanelDataset& panel) {
  AgOptions ag;
  ag.robust = RobustVariance::Sandwich;  // only the point estimate is used
  const CoxFit cox = fit_andersen_gill(panel.gap_records(), ag);
  if (!cox.converged) {
    FitResult fit;
    fit.model = ModelLabel::E;
    for (const char* name : {"alpha0", "alpha1", "alpha2"}) fit.add(name, std::nan(""), std::nan(""));
    return fit;
  }
  return fit_wgee(panel, compute_iiv_weights(cox, panel));
}

}  // namespace visitsim
