#include "methods.hpp"

#include <cmath>
#include <limits>

#include "error.hpp"

namespace hctb {

const std::vector<std::string>& method_names() {
  static const std::vector<std::string> names = {
      "no-borrow-unadj", "no-borrow-covadj", "borrow-naive", "borrow-ipw",
      "borrow-cw",       "borrow-om",        "borrow-aipw",  "borrow-acw",
      "csb-nn",          "csb-lcnn",         "csb-sar"};
  return names;
}

const std::vector<std::string>& table_methods() {
  // The ten-method reporting set; the sar score stays available by name.
  static const std::vector<std::string> names = {
      "no-borrow-unadj", "no-borrow-covadj", "borrow-naive", "borrow-ipw",
      "borrow-cw",       "borrow-om",        "borrow-aipw",  "borrow-acw",
      "csb-nn",          "csb-lcnn"};
  return names;
}

namespace {

MethodFit from_pair(const TrialDataset& ds, const ThetaPair& pair,
                    Estimand estimand, double alpha) {
  MethodFit fit;
  fit.effect = asymptotic_inference(ds, pair.th1, pair.th0, estimand, alpha);
  fit.gamma_used = std::numeric_limits<double>::quiet_NaN();
  fit.eb_fallback = pair.eb_fallback;
  return fit;
}

MethodFit fit_csb(const TrialDataset& ds, ConformalConfig::Score score,
                  Estimand estimand, const MethodOptions& opt) {
  ConformalConfig cfg = opt.conformal;
  cfg.score = score;
  double gamma = opt.gamma;
  if (opt.adaptive)
    gamma = adaptive_gamma(ds, cfg, opt.nuisance, opt.threads).gamma_hat;
  auto sel = select(conformal_pvalues(ds, cfg), gamma);
  MethodFit fit;
  fit.effect = csb_estimate(ds, sel, estimand, opt.nuisance, opt.alpha);
  fit.gamma_used = gamma;
  fit.selected = sel.selected;
  return fit;
}

}  // namespace

MethodFit fit_method(const TrialDataset& ds, const std::string& method,
                     Estimand estimand, const MethodOptions& opt) {
  MethodFit fit;
  if (method == "no-borrow-unadj") {
    ThetaPair pair{theta_unadj(ds, 1), theta_unadj(ds, 0), false};
    fit = from_pair(ds, pair, estimand, opt.alpha);
  } else if (method == "no-borrow-covadj") {
    NuisanceBundle nb = fit_bundle(ds, {}, opt.nuisance);
    ThetaPair pair{theta_covadj(ds, nb, 1), theta_covadj(ds, nb, 0), false};
    fit = from_pair(ds, pair, estimand, opt.alpha);
  } else if (method == "borrow-aipw") {
    auto ec = all_ec_ids(ds);
    NuisanceBundle nb = fit_bundle(ds, ec, opt.nuisance);
    ThetaPair pair{theta_covadj(ds, nb, 1), theta0_aipw(ds, nb, ec), false};
    fit = from_pair(ds, pair, estimand, opt.alpha);
  } else if (method == "borrow-naive" || method == "borrow-ipw" ||
             method == "borrow-cw" || method == "borrow-om" ||
             method == "borrow-acw") {
    NuisanceBundle nb = fit_bundle(ds, all_ec_ids(ds), opt.nuisance);
    ThetaPair pair = method == "borrow-naive"  ? borrow_naive(ds, nb)
                     : method == "borrow-ipw"  ? borrow_ipw(ds, nb)
                     : method == "borrow-cw"   ? borrow_cw(ds, nb)
                     : method == "borrow-om"   ? borrow_om(ds, nb)
                                               : borrow_acw(ds, nb);
    fit = from_pair(ds, pair, estimand, opt.alpha);
  } else if (method == "csb-nn" || method == "csb-lcnn" || method == "csb-sar") {
    fit = fit_csb(ds, parse_score(method.substr(4)), estimand, opt);
  } else {
    fail(Status::invalid_argument, "unknown method: " + method);
  }
  fit.effect.method = method;
  return fit;
}

}  // namespace hctb
