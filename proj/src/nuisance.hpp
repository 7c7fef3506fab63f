#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "dataset.hpp"
#include "logistic.hpp"

namespace hctb {

struct NuisanceConfig {
  bool fit_propensity = false;  // default: e is the known randomization probability n1/nR
  enum class RModel { plugin, one };
  RModel r_model = RModel::plugin;
  // Propagated to every logistic fit; replicate-evaluation paths (FRT,
  // bootstrap, conformal refits) turn this on so a constant-outcome arm yields
  // the clipped intercept fit instead of an error.
  bool allow_degenerate = false;
};

// Per-unit nuisance values evaluated over the whole dataset. Plain data so
// tests can inject constants directly.
struct NuisanceBundle {
  double e_known = 0;
  Eigen::VectorXd e;       // propensity
  Eigen::VectorXd pi;      // sampling score P(S=1|X), fit on RCT + selected ECs
  Eigen::VectorXd mu1_r;   // outcome mean, RCT treated fit
  Eigen::VectorXd mu0_r;   // outcome mean, RCT control fit
  Eigen::VectorXd mu0_re;  // outcome mean, RCT controls + selected ECs fit
  Eigen::VectorXd r;       // variance ratio, clipped
  std::vector<std::uint8_t> in_subset;  // unit is RCT or a selected EC
  int n_subset_ec = 0;
  bool rct_only = false;
  bool ridge_any = false;
};

std::vector<int> all_ec_ids(const TrialDataset& ds);

// ec_subset holds global row ids of the ECs to borrow from; pi, mu0_re and r
// are always fit against exactly that subset.
NuisanceBundle fit_bundle(const TrialDataset& ds, const std::vector<int>& ec_subset,
                          const NuisanceConfig& cfg = {});

// clip(m_R(1-m_R) / (m_E(1-m_E)), 0.1, 10): Bernoulli-variance plug-in.
double variance_ratio_value(double m_r, double m_e);

// Entropy-balancing odds q(x) = exp(lambda' (1, x_std)) solving the moment
// conditions sum_EC q (1, x) = sum_RCT (1, x); standardization uses EC moments.
struct EntropyBalance {
  Eigen::VectorXd lambda;
  Eigen::RowVectorXd center;
  Eigen::RowVectorXd scale;
  bool converged = false;

  Eigen::VectorXd q_at(const Eigen::MatrixXd& x) const;
};

EntropyBalance entropy_balance(const Eigen::MatrixXd& x_ec, const Eigen::MatrixXd& x_rct);

}  // namespace hctb
