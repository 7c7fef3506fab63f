#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dataset.hpp"
#include "estimators.hpp"
#include "nuisance.hpp"

namespace hctb {

std::vector<double> default_gamma_grid();

struct ConformalConfig {
  enum class Score { nn, lcnn, sar };
  Score score = Score::nn;
  // folds >= 2 runs CV+; folds == 1 is the seeded half/half single split used
  // for exactness and super-uniformity checks.
  int folds = 10;
  std::vector<double> gamma_grid = default_gamma_grid();
  int bootstrap_reps = 200;
  std::uint64_t seed = 0;
};

const char* score_name(ConformalConfig::Score s);
ConformalConfig::Score parse_score(const std::string& name);

struct ConformalPvalues {
  std::vector<int> ec_ids;  // ascending unit ids
  Eigen::VectorXd p;        // aligned with ec_ids
  ConformalConfig::Score score = ConformalConfig::Score::nn;
  bool lcnn_empty_fold = false;
};

struct SelectionResult {
  std::vector<int> ec_ids;
  Eigen::VectorXd p_values;
  double gamma = 0.0;
  std::vector<int> selected;  // {j : p_j > gamma}, ascending
  ConformalConfig::Score score = ConformalConfig::Score::nn;
  bool lcnn_empty_fold = false;
};

// Nearest same-outcome neighbor distance; +inf sentinel when the reference
// holds no unit with outcome yj. Coordinates are used as given — callers
// standardize.
double conformal_score_nn(const Eigen::RowVectorXd& xj, int yj,
                          const Eigen::MatrixXd& x_ref,
                          const Eigen::VectorXi& y_ref);

// |y - mhat| / sqrt(mhat (1-mhat)) with the variance floored at 1e-6.
double conformal_score_sar(int yj, double mhat);

// (#{calibration scores > sj} + 1) / (m + 1); strict comparison, so ties and
// the +inf sentinel count as conforming no worse than the candidate.
double conformal_p_count(const std::vector<double>& calib, double sj);

ConformalPvalues conformal_pvalues(const TrialDataset& ds,
                                   const ConformalConfig& cfg);

SelectionResult select(const ConformalPvalues& pv, double gamma);

// Eq.-(5) selective-borrow estimator: nuisances are refit against the selected
// subset; empty selection routes to the No Borrow CovAdj estimate and the
// full set reproduces Borrow AIPW bit for bit.
EffectEstimate csb_estimate(const TrialDataset& ds, const SelectionResult& sel,
                            Estimand estimand, const NuisanceConfig& ncfg = {},
                            double alpha = 0.05);

struct AdaptiveResult {
  double gamma_hat = 1.0;
  std::vector<double> gamma_grid;
  std::vector<double> tau;  // CSB point per grid value, original data, RD scale
  std::vector<double> mse;  // MSE-hat per grid value
  double tau_noborrow = 0.0;
};

// Bootstrap MSE minimization over the gamma grid; selection is recomputed on
// every resample. Deterministic for a fixed seed at any thread count.
AdaptiveResult adaptive_gamma(const TrialDataset& ds, const ConformalConfig& cfg,
                              const NuisanceConfig& ncfg = {}, int threads = 1);

}  // namespace hctb
