#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "methods.hpp"
#include "rng.hpp"

namespace hctb {

struct FrtSpec {
  std::string method = "no-borrow-covadj";
  Estimand estimand = Estimand::rd;
  int reps = 2000;
  std::uint64_t seed = 0;
  // full recomputes everything per permutation, adaptive gamma-hat included;
  // fixed_gamma freezes the observed gamma-hat, which voids the exchangeability
  // argument and is flagged approximate in the result.
  enum class Refit { full, fixed_gamma };
  Refit refit = Refit::full;
  double gamma = 0.5;
  bool adaptive = false;
  ConformalConfig conformal;  // score overridden by method; seed overridden by
                              // a stream derived from seed
  NuisanceConfig nuisance;    // allow_degenerate is forced on for every
                              // statistic evaluation, observed included
  int threads = 1;
};

struct FrtResult {
  double p = 1.0;
  double observed_stat = 0.0;
  std::vector<double> replicate_stats;  // replicate order, +inf for failures
  int failures = 0;
  bool approximate = false;
  double runtime_s = 0.0;
};

// Uniform re-labeling of the RCT arms with (n1, n0) fixed; EC labels stay 0.
Eigen::VectorXi permute_assignment(const TrialDataset& ds, Rng& rng);

// (#{t >= observed} + 1) / (B + 1)
double frt_p_count(const std::vector<double>& replicate_stats, double observed);

// |tau-hat| on the RD scale, |log tau-hat| for RR/OR. A pure function of the
// assignment and data: every internal draw (folds, adaptive bootstrap) is
// seeded from spec.seed alone.
double frt_statistic(const TrialDataset& ds, const FrtSpec& spec);

FrtResult frt_pvalue(const TrialDataset& ds, const FrtSpec& spec);

// Exact P_A(T >= T_obs) over all C(n_R, n1) assignments, the observed one
// included in the reference set. Refuses beyond 1e6 assignments.
double frt_exact(const TrialDataset& ds, const FrtSpec& spec);

}  // namespace hctb
