#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "error.hpp"

namespace hctb {

// O_i = (Y_i, A_i, X_i, S_i); s=1 marks RCT units, s=0 external controls.
// Unit ids are row indices 0..n-1 and stay stable through analysis.
struct TrialDataset {
  Eigen::MatrixXd x;
  Eigen::VectorXi y;
  Eigen::VectorXi a;
  Eigen::VectorXi s;
  std::vector<std::string> covariate_names;

  int n() const { return static_cast<int>(y.size()); }
  int p() const { return static_cast<int>(x.cols()); }
  int n_rct() const;
  int n_ec() const;
  int n_treated() const;   // RCT treated
  int n_control() const;   // RCT control

  // Enforces the type invariants: binary columns, untreated ECs, n_R >= 2 with
  // both arms present, finite covariates.
  void validate() const;
};

struct ColumnMap {
  std::string y = "y";
  std::string a = "a";
  std::string s = "s";
  // Empty means: every remaining column, in file order.
  std::vector<std::string> covariates;
};

// validate=false skips the trial-shape invariants (used for EC pool files,
// which have no treated arm); binary columns and covariates are still checked.
TrialDataset load_csv(const std::string& path, const ColumnMap& schema = {},
                      bool validate = true);
TrialDataset parse_csv(const std::string& text, const ColumnMap& schema = {},
                       bool validate = true);
std::string to_csv(const TrialDataset& ds);
void write_csv(const TrialDataset& ds, const std::string& path);

TrialDataset from_arrays(const Eigen::MatrixXd& x, const Eigen::VectorXi& y,
                         const Eigen::VectorXi& a, const Eigen::VectorXi& s,
                         std::vector<std::string> covariate_names = {});

// Rows in the given order (repeats allowed); no validation.
TrialDataset subset_rows(const TrialDataset& ds, const std::vector<int>& rows);

// Kish effective sample size (sum w)^2 / sum w^2.
double ess(const std::vector<double>& weights);

// Columns scaled to zero mean, unit (population) sd; constant columns pass through.
Eigen::MatrixXd standardize(const Eigen::MatrixXd& x);

// Greedy 1:ratio nearest-neighbor matching without replacement: RCT units in id
// order each take their `ratio` nearest unmatched pool units by Euclidean
// distance on covariates standardized over the pooled rows; distance ties go to
// the lower pool id. Returns selected pool ids, ascending.
std::vector<int> nn_match(const TrialDataset& rct, const TrialDataset& ec_pool, int ratio);

// Shortest round-trip decimal encoding, used by every writer so identical
// numbers always serialize to identical bytes.
std::string format_double(double v);

}  // namespace hctb
