#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "frt.hpp"
#include "methods.hpp"

namespace hctb {

struct AnalyzeRequest {
  std::vector<std::string> methods;
  std::vector<Estimand> estimands = {Estimand::rd};
  MethodOptions options;  // alpha, gamma, adaptive, conformal, nuisance
  bool with_frt = false;
  int frt_reps = 2000;
  FrtSpec::Refit refit = FrtSpec::Refit::full;
  // eif: influence-function variance (default). bootstrap: sd over
  // (S,A)-stratified resamples, log scale for RR/OR.
  enum class SeMode { eif, bootstrap };
  SeMode se_mode = SeMode::eif;
  int bootstrap_reps = 1000;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct AnalyzeRow {
  std::string method;
  Estimand estimand = Estimand::rd;
  double point = 0, se = 0, ci_low = 0, ci_high = 0, p_asym = 1;
  double frt_p = 0;  // NaN without FRT
  int frt_failures = 0;
  bool frt_approximate = false;
  // Wall clock; lives in the run manifest, never in deterministic outputs.
  double frt_runtime_s = 0;
  int n_borrowed = 0;
  double ess = 0;
  double gamma_used = 0;  // NaN unless csb
  int bootstrap_failures = 0;
  bool eb_fallback = false;
  bool boundary_clipped = false;
};

struct AnalyzeResult {
  std::vector<AnalyzeRow> rows;  // method-major over methods x estimands
  std::vector<std::string> warnings;
};

AnalyzeResult analyze(const TrialDataset& ds, const AnalyzeRequest& req);

}  // namespace hctb
