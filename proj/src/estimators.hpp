#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "dataset.hpp"
#include "nuisance.hpp"

namespace hctb {

enum class Estimand { rd, rr, odds };

const char* estimand_name(Estimand e);
Estimand parse_estimand(const std::string& name);

// Sampling frame of the per-unit contributions. "rct" contributions are
// xi-hat values averaged over RCT units only; "borrow" and "pooled"
// contributions are phi-hat style values averaged over all n units, the
// difference being the centering weight in the variance (S_i/pi_R vs 1).
enum class Frame { rct, borrow, pooled };

struct ThetaEstimate {
  int arm = 0;
  double value = 0.0;  // mean of per-unit contributions, clamped to [0,1]
  bool clipped = false;
  Frame frame = Frame::rct;
  std::string method;
  Eigen::VectorXd per_unit;       // length n, zero outside the support
  std::vector<int> borrowed_ids;  // EC units entering through weights
  Eigen::VectorXd ec_weight;      // parallel to borrowed_ids, for ESS
};

struct ThetaPair {
  ThetaEstimate th1;
  ThetaEstimate th0;
  // set when entropy balancing failed to converge and the calibration
  // weights fell back to plug-in odds pi/(1-pi)
  bool eb_fallback = false;
};

struct EffectEstimate {
  Estimand estimand = Estimand::rd;
  std::string method;
  double point = 0.0;
  double se = 0.0;  // natural scale; delta method for RR/OR
  double ci_low = 0.0;
  double ci_high = 0.0;
  double p_asym = 1.0;
  double alpha = 0.05;
  int n_borrowed = 0;
  double ess = 0.0;
  bool boundary_clipped = false;
};

double normal_cdf(double x);
double normal_quantile(double p);

ThetaEstimate theta_unadj(const TrialDataset& ds, int arm);
ThetaEstimate theta_covadj(const TrialDataset& ds, const NuisanceBundle& nb,
                           int arm);
// ec_subset must be nonempty and match the subset the bundle was fitted
// against; callers route the empty-selection case to theta_covadj.
ThetaEstimate theta0_aipw(const TrialDataset& ds, const NuisanceBundle& nb,
                          const std::vector<int>& ec_subset);

ThetaPair borrow_naive(const TrialDataset& ds, const NuisanceBundle& nb);
ThetaPair borrow_ipw(const TrialDataset& ds, const NuisanceBundle& nb);
ThetaPair borrow_cw(const TrialDataset& ds, const NuisanceBundle& nb);
ThetaPair borrow_om(const TrialDataset& ds, const NuisanceBundle& nb);
ThetaPair borrow_acw(const TrialDataset& ds, const NuisanceBundle& nb);

double plug_in(double theta1, double theta0, Estimand estimand);

EffectEstimate asymptotic_inference(const TrialDataset& ds,
                                    const ThetaEstimate& th1,
                                    const ThetaEstimate& th0,
                                    Estimand estimand, double alpha = 0.05);

}  // namespace hctb
