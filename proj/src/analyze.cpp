#include "analyze.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <limits>

#include "error.hpp"
#include "rng.hpp"
#include "threading.hpp"

namespace hctb {
namespace {

constexpr std::uint64_t kConformalStream = 0xa9a17eULL;
// High base keeps row indices clear of every small stream id on this seed.
constexpr std::uint64_t kBootStreamBase = 0x500000000ULL;

struct CellIndex {
  std::vector<int> treated, control, ec;
};

CellIndex strata(const TrialDataset& ds) {
  CellIndex c;
  for (int i = 0; i < ds.n(); ++i) {
    if (ds.s[i] == 0)
      c.ec.push_back(i);
    else if (ds.a[i] == 1)
      c.treated.push_back(i);
    else
      c.control.push_back(i);
  }
  return c;
}

std::vector<int> resample(const CellIndex& cells, Rng& rng) {
  std::vector<int> rows;
  for (const auto* cell : {&cells.treated, &cells.control, &cells.ec}) {
    const std::size_t m = cell->size();
    for (std::size_t k = 0; k < m; ++k)
      rows.push_back((*cell)[static_cast<std::size_t>(rng.uniform_int(m))]);
  }
  return rows;
}

double clamp_p(double p) { return std::min(1.0, std::max(DBL_MIN, p)); }

// Rebuilds se / CI / p from the bootstrap spread, log scale for RR/OR,
// mirroring the influence-function inference conventions.
void apply_bootstrap_se(AnalyzeRow& row, const std::vector<double>& stats,
                        double alpha) {
  const double B = static_cast<double>(stats.size());
  double mean = 0;
  for (double v : stats) mean += v;
  mean /= B;
  double ss = 0;
  for (double v : stats) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (B - 1.0));
  const double z = normal_quantile(1.0 - alpha / 2.0);
  const bool log_scale = row.estimand != Estimand::rd;
  const double center = log_scale ? std::log(row.point) : row.point;
  double stat;
  if (sd == 0.0)
    stat = center == 0.0 ? 0.0
                         : std::copysign(std::numeric_limits<double>::infinity(),
                                         center);
  else
    stat = center / sd;
  row.p_asym = clamp_p(2.0 * (1.0 - normal_cdf(std::abs(stat))));
  if (log_scale) {
    row.se = sd * row.point;
    row.ci_low = std::exp(center - z * sd);
    row.ci_high = std::exp(center + z * sd);
  } else {
    row.se = sd;
    row.ci_low = center - z * sd;
    row.ci_high = center + z * sd;
  }
}

}  // namespace

AnalyzeResult analyze(const TrialDataset& ds, const AnalyzeRequest& req) {
  if (req.methods.empty()) fail(Status::invalid_argument, "analyze: no methods");
  if (req.estimands.empty())
    fail(Status::invalid_argument, "analyze: no estimands");
  const auto& known = method_names();
  for (const auto& m : req.methods)
    if (std::find(known.begin(), known.end(), m) == known.end())
      fail(Status::invalid_argument, "analyze: unknown method: " + m);
  if (!(req.options.alpha > 0.0 && req.options.alpha < 1.0))
    fail(Status::invalid_argument, "analyze: alpha must lie in (0,1)");
  if (req.se_mode == AnalyzeRequest::SeMode::bootstrap && req.bootstrap_reps < 2)
    fail(Status::invalid_argument, "analyze: bootstrap needs >= 2 resamples");
  if (req.with_frt && req.frt_reps < 1)
    fail(Status::invalid_argument, "analyze: frt_reps must be >= 1");

  AnalyzeResult out;
  const CellIndex cells = strata(ds);
  const std::uint64_t conformal_seed =
      Rng::stream(req.seed, kConformalStream).next_u64();
  std::size_t row_index = 0;

  for (const auto& method : req.methods) {
    for (const Estimand estimand : req.estimands) {
      MethodOptions opt = req.options;
      opt.conformal.seed = conformal_seed;
      opt.threads = req.threads;
      const MethodFit fit = fit_method(ds, method, estimand, opt);

      AnalyzeRow row;
      row.method = method;
      row.estimand = estimand;
      row.point = fit.effect.point;
      row.se = fit.effect.se;
      row.ci_low = fit.effect.ci_low;
      row.ci_high = fit.effect.ci_high;
      row.p_asym = fit.effect.p_asym;
      row.n_borrowed = fit.effect.n_borrowed;
      row.ess = fit.effect.ess;
      row.gamma_used = fit.gamma_used;
      row.eb_fallback = fit.eb_fallback;
      row.boundary_clipped = fit.effect.boundary_clipped;
      row.frt_p = std::numeric_limits<double>::quiet_NaN();
      row.frt_runtime_s = std::numeric_limits<double>::quiet_NaN();

      if (req.se_mode == AnalyzeRequest::SeMode::bootstrap) {
        const int B = req.bootstrap_reps;
        std::vector<double> stats(static_cast<std::size_t>(B),
                                  std::numeric_limits<double>::quiet_NaN());
        const std::uint64_t boot_seed = kBootStreamBase + row_index;
        MethodOptions boot_opt = opt;
        boot_opt.nuisance.allow_degenerate = true;
        boot_opt.threads = 1;
        ThreadPool pool(resolve_threads(req.threads));
        pool.parallel_for(static_cast<std::size_t>(B), [&](std::size_t b) {
          Rng rng = Rng::stream(req.seed, boot_seed + 0x10000ULL * b);
          try {
            const TrialDataset db = subset_rows(ds, resample(cells, rng));
            const MethodFit fb = fit_method(db, method, estimand, boot_opt);
            stats[b] = estimand == Estimand::rd ? fb.effect.point
                                                : std::log(fb.effect.point);
          } catch (const std::exception&) {
          }
        });
        std::vector<double> good;
        for (double v : stats)
          if (std::isfinite(v)) good.push_back(v);
        row.bootstrap_failures = B - static_cast<int>(good.size());
        if (good.size() < 2)
          fail(Status::numeric, "analyze: bootstrap collapsed for " + method);
        apply_bootstrap_se(row, good, opt.alpha);
        if (row.bootstrap_failures > 0)
          out.warnings.push_back(method + "/" +
                                 estimand_name(estimand) + ": " +
                                 std::to_string(row.bootstrap_failures) +
                                 " bootstrap resamples failed");
      }

      if (req.with_frt) {
        FrtSpec fs;
        fs.method = method;
        fs.estimand = estimand;
        fs.reps = req.frt_reps;
        fs.seed = req.seed;
        fs.refit = req.refit;
        fs.gamma = req.options.gamma;
        fs.adaptive = req.options.adaptive;
        fs.conformal = req.options.conformal;
        fs.nuisance = req.options.nuisance;
        fs.threads = req.threads;
        const FrtResult fr = frt_pvalue(ds, fs);
        row.frt_p = fr.p;
        row.frt_failures = fr.failures;
        row.frt_approximate = fr.approximate;
        row.frt_runtime_s = fr.runtime_s;
        if (fr.failures > 0)
          out.warnings.push_back(method + "/" + estimand_name(estimand) +
                                 ": " + std::to_string(fr.failures) +
                                 " FRT replicates failed");
      }

      if (row.eb_fallback)
        out.warnings.push_back(method + "/" + estimand_name(estimand) +
                               ": entropy balancing fell back to plug-in odds");
      if (row.boundary_clipped)
        out.warnings.push_back(method + "/" + estimand_name(estimand) +
                               ": theta estimate clipped at the boundary");
      out.rows.push_back(std::move(row));
      ++row_index;
    }
  }
  return out;
}

}  // namespace hctb
