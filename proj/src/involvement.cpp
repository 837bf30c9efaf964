#include "ctaudit/involvement.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>

#include "ctaudit/common.hpp"

namespace ctaudit {

std::pair<double, double> minmax_ensemble(double p_gabor, double p_plain) {
  if (!(p_gabor >= 0.0 && p_gabor <= 1.0) || !(p_plain >= 0.0 && p_plain <= 1.0)) {
    throw ContractError("minmax_ensemble: probabilities must lie in [0, 1]");
  }
  const double p_positive = std::max(p_gabor, p_plain);
  const double p_negative = std::min(1.0 - p_gabor, 1.0 - p_plain);
  return {p_negative, p_positive};
}

StratumStats make_stratum_stats(Stratum stratum, long n, double mean_positive_pct, double ci_pct,
                                bool ci_defined) {
  StratumStats s;
  s.stratum = stratum;
  s.n = n;
  s.mean_positive = mean_positive_pct;
  s.mean_negative = 100.0 - mean_positive_pct;
  s.ci_positive = ci_defined ? ci_pct : 0.0;
  s.ci_negative = s.ci_positive;
  s.ci_defined = ci_defined;
  return s;
}

StrataReport aggregate_strata(const std::string& label,
                              const std::vector<SampleRecord>& records,
                              const std::vector<Prediction>& predictions) {
  if (records.size() != predictions.size()) {
    throw ContractError("aggregate_strata: records and predictions are misaligned");
  }

  std::map<Stratum, std::vector<double>> by_stratum;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!records[i].stratum) {
      throw ContractError("aggregate_strata: record without a stratum: " +
                          records[i].image_path.string());
    }
    if (!predictions[i].ok) continue;  // unreadable image; does not count toward n
    by_stratum[*records[i].stratum].push_back(predictions[i].p_positive);
  }

  StrataReport report;
  report.label = label;
  for (const auto& [stratum, scores] : by_stratum) {
    const long n = static_cast<long>(scores.size());
    const double mean = std::accumulate(scores.begin(), scores.end(), 0.0) / n;
    double ci = 0.0;
    bool ci_defined = false;
    if (n >= 2) {
      double ss = 0.0;
      for (double v : scores) ss += (v - mean) * (v - mean);
      const double sample_std = std::sqrt(ss / static_cast<double>(n - 1));
      ci = 1.96 * sample_std / std::sqrt(static_cast<double>(n)) * 100.0;
      ci_defined = true;
    }
    report.strata.push_back(make_stratum_stats(stratum, n, mean * 100.0, ci, ci_defined));
  }
  return report;
}

StrataReport score_strata(ModelArtifact& artifact, const std::vector<SampleRecord>& records,
                          int batch_size) {
  const std::vector<Prediction> preds = predict_proba(artifact, records, batch_size);
  return aggregate_strata(artifact_id(artifact.provenance), records, preds);
}

StrataReport score_strata_ensemble(ModelArtifact& gabor_model, ModelArtifact& plain_model,
                                   const std::vector<SampleRecord>& records, int batch_size) {
  const std::vector<Prediction> a = predict_proba(gabor_model, records, batch_size);
  const std::vector<Prediction> b = predict_proba(plain_model, records, batch_size);

  std::vector<Prediction> combined(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!a[i].ok || !b[i].ok) {
      combined[i].ok = false;
      combined[i].error = !a[i].ok ? a[i].error : b[i].error;
      continue;
    }
    combined[i].ok = true;
    std::tie(combined[i].p_negative, combined[i].p_positive) =
        minmax_ensemble(a[i].p_positive, b[i].p_positive);
  }
  const std::string label = "minmax(" + artifact_id(gabor_model.provenance) + "," +
                            artifact_id(plain_model.provenance) + ")";
  return aggregate_strata(label, records, combined);
}

namespace {

// Average ranks (1-based), ties get the mean of their positions.
std::vector<double> average_ranks(const std::vector<double>& values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&values](std::size_t a, std::size_t b) { return values[a] < values[b]; });

  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;  // mean of positions i..j
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

bool has_ties(const std::vector<double>& values) {
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  return std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end();
}

}  // namespace

double spearman_rho(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 2) {
    throw ContractError("spearman_rho: need two aligned sequences of length >= 2");
  }
  const std::vector<double> rx = average_ranks(xs);
  const std::vector<double> ry = average_ranks(ys);
  const std::size_t n = xs.size();

  if (!has_ties(xs) && !has_ties(ys)) {
    // Classic difference form; exact for permutation ranks.
    double sum_d2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = rx[i] - ry[i];
      sum_d2 += d * d;
    }
    const double nn = static_cast<double>(n);
    return 1.0 - 6.0 * sum_d2 / (nn * (nn * nn - 1.0));
  }

  // Ties: Pearson correlation of the average ranks.
  const double mean_rank = (static_cast<double>(n) + 1.0) / 2.0;
  double cov = 0.0, var_x = 0.0, var_y = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = rx[i] - mean_rank;
    const double dy = ry[i] - mean_rank;
    cov += dx * dy;
    var_x += dx * dx;
    var_y += dy * dy;
  }
  if (var_x == 0.0 || var_y == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return cov / std::sqrt(var_x * var_y);
}

MonotonicityResult monotonicity_check(const StrataReport& report) {
  if (report.strata.size() < 2) {
    throw ContractError("monotonicity_check: need at least two nonempty strata");
  }
  std::vector<double> xs, ys;
  for (const StratumStats& s : report.strata) {
    xs.push_back(static_cast<double>(s.stratum));
    ys.push_back(s.mean_positive);
  }

  MonotonicityResult out;
  const double rho = spearman_rho(xs, ys);
  if (std::isnan(rho)) {
    out.spearman_rho = 0.0;
    out.degenerate = true;
  } else {
    out.spearman_rho = rho;
  }
  out.monotone = true;
  for (std::size_t i = 1; i < ys.size(); ++i) {
    if (!(ys[i] > ys[i - 1])) {
      out.monotone = false;
      break;
    }
  }
  return out;
}

void write_strata_csv(const StrataReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write strata CSV: " + path.string());

  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return std::string(buf);
  };

  out << "stratum,n,mean_pos,mean_neg,ci_pos,ci_neg\n";
  for (const StratumStats& s : report.strata) {
    out << format_stratum(s.stratum) << ',' << s.n << ',' << fmt(s.mean_positive) << ','
        << fmt(s.mean_negative) << ',';
    if (s.ci_defined) {
      out << fmt(s.ci_positive) << ',' << fmt(s.ci_negative) << '\n';
    } else {
      out << ",\n";
    }
  }
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace ctaudit
