#pragma once

// Stratified involvement scoring: per-stratum mean positive/negative scores
// with 95% confidence intervals, monotonicity checking, and the min-max
// two-model ensemble.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "ctaudit/evaluator.hpp"

namespace ctaudit {

// Combine the positive-class probabilities of two models that differ only in
// the Gabor stem: positive = max of the two, negative = min of the two
// complements, which is algebraically 1 - positive, so the returned pair sums
// to 1 exactly.  Returns (p_negative, p_positive).
std::pair<double, double> minmax_ensemble(double p_gabor, double p_plain);

struct StratumStats {
  Stratum stratum = Stratum::ct0;
  long n = 0;
  double mean_positive = 0.0;  // percent
  double mean_negative = 0.0;  // percent, always 100 - mean_positive
  double ci_positive = 0.0;    // 1.96 * s / sqrt(n), percent; see ci_defined
  double ci_negative = 0.0;
  bool ci_defined = false;  // false when n < 2
};

// The single place the negative column is derived: mean_negative is the exact
// complement of mean_positive (the per-record identity the ensemble
// guarantees, enforced at the aggregate), and the CI is shared because
// complementing scores leaves deviations unchanged.
StratumStats make_stratum_stats(Stratum stratum, long n, double mean_positive_pct,
                                double ci_pct, bool ci_defined);

struct StrataReport {
  std::string label;  // artifact id, or "minmax(<a>,<b>)" for ensembles
  std::vector<StratumStats> strata;  // nonempty strata only, ascending order
};

// Score each record's p_positive and aggregate per stratum.  Every record
// must carry a stratum; unreadable images are skipped and do not count
// toward n.  Empty strata are omitted from the report.
StrataReport score_strata(ModelArtifact& artifact, const std::vector<SampleRecord>& records,
                          int batch_size = 16);

// Min-max ensemble of two artifacts over the same records.
StrataReport score_strata_ensemble(ModelArtifact& gabor_model, ModelArtifact& plain_model,
                                   const std::vector<SampleRecord>& records, int batch_size = 16);

// Shared aggregation path (used by both scorers and directly testable).
StrataReport aggregate_strata(const std::string& label,
                              const std::vector<SampleRecord>& records,
                              const std::vector<Prediction>& predictions);

struct MonotonicityResult {
  double spearman_rho = 0.0;
  bool monotone = false;    // strictly increasing mean positive across strata
  bool degenerate = false;  // all means equal: rho undefined, reported 0
};

// Spearman rank correlation between stratum order and mean positive score.
// Requires at least two nonempty strata.
MonotonicityResult monotonicity_check(const StrataReport& report);

// Rank correlation with average ranks for ties (exposed for direct testing).
double spearman_rho(const std::vector<double>& xs, const std::vector<double>& ys);

// CSV columns: stratum,n,mean_pos,mean_neg,ci_pos,ci_neg (CI fields empty
// when undefined).
void write_strata_csv(const StrataReport& report, const std::filesystem::path& path);

}  // namespace ctaudit
