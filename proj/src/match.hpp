#pragma once

#include <string>
#include <vector>

#include "dataset.hpp"

namespace hctb {

struct BalanceRow {
  std::string covariate;
  double smd_pre = 0;   // RCT base vs full pool, signed
  double smd_post = 0;  // RCT base vs selected ECs
};

struct MatchResult {
  TrialDataset combined;  // RCT rows followed by the selected pool rows
  std::vector<int> selected_pool_ids;
  std::vector<BalanceRow> balance;
  std::vector<std::string> warnings;
};

// 1:ratio nearest-neighbor construction of a hybrid dataset. The match base is
// the s=1 rows of `rct` (s=0 rows are dropped with a warning); every pool row
// must be untreated and joins the output as an EC. Covariate schemas must
// agree by name.
MatchResult match_ecs(const TrialDataset& rct, const TrialDataset& pool,
                      int ratio);

}  // namespace hctb
