#pragma once

#include <string>
#include <vector>

#include "conformal.hpp"
#include "dataset.hpp"
#include "estimators.hpp"
#include "nuisance.hpp"

namespace hctb {

struct MethodOptions {
  // CSB threshold; ignored unless the method is csb-* . adaptive replaces the
  // fixed value with the bootstrap MSE minimizer.
  double gamma = 0.5;
  bool adaptive = false;
  ConformalConfig conformal;  // score is overridden by the method slug
  NuisanceConfig nuisance;
  double alpha = 0.05;
  int threads = 1;  // adaptive-gamma bootstrap only
};

struct MethodFit {
  EffectEstimate effect;
  // csb-* extras; gamma_used is NaN for every other method
  double gamma_used;
  std::vector<int> selected;
  bool eb_fallback = false;
};

// Estimator slugs accepted by fit_method, in reporting order.
const std::vector<std::string>& method_names();
// The ten methods of the summary table ("all" in the CLI): everything except
// the supplementary sar score.
const std::vector<std::string>& table_methods();

MethodFit fit_method(const TrialDataset& ds, const std::string& method,
                     Estimand estimand, const MethodOptions& opt = {});

}  // namespace hctb
