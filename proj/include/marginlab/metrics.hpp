#pragma once

// Threshold-free OOD evaluation (AUROC, FPR at a fixed TPR) and Spearman rank
// correlation. Scores follow one polarity: higher means more in-distribution.

#include <numeric>

#include "marginlab/numeric.hpp"

namespace marginlab {

struct ScoreSample {
  Vector scores_id;
  Vector scores_ood;
};

namespace detail {

inline void validate_scores(const ScoreSample& s, const char* where) {
  if (s.scores_id.empty() || s.scores_ood.empty())
    fail(ErrorKind::invalid_argument, std::string(where) + ": empty score array");
  for (double v : s.scores_id) check_finite(v, where);
  for (double v : s.scores_ood) check_finite(v, where);
}

/// 1-based mid-ranks; tied values share the average of their ranks.
inline Vector mid_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  Vector ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace detail

/// Mann-Whitney form of the AUROC: P(id > ood) + P(id = ood)/2, via mid-ranks
/// of the pooled sample in O(n log n).
inline double auroc(const ScoreSample& s) {
  detail::validate_scores(s, "auroc");
  const std::size_t n_id = s.scores_id.size();
  const std::size_t n_ood = s.scores_ood.size();
  Vector pooled;
  pooled.reserve(n_id + n_ood);
  pooled.insert(pooled.end(), s.scores_id.begin(), s.scores_id.end());
  pooled.insert(pooled.end(), s.scores_ood.begin(), s.scores_ood.end());
  const Vector ranks = detail::mid_ranks(pooled);
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < n_id; ++i) rank_sum += ranks[i];
  const double u = rank_sum - 0.5 * static_cast<double>(n_id) * static_cast<double>(n_id + 1);
  return u / (static_cast<double>(n_id) * static_cast<double>(n_ood));
}

/// Fraction of OOD scores accepted (score >= τ) at the threshold τ equal to the
/// ⌈level·N_id⌉-th largest ID score. No interpolation between order statistics.
inline double fpr_at_tpr(const ScoreSample& s, double level = 0.95) {
  detail::validate_scores(s, "fpr_at_tpr");
  require(level > 0.0 && level < 1.0, ErrorKind::invalid_argument,
          "fpr_at_tpr: level must lie in (0, 1)");
  Vector id = s.scores_id;
  std::sort(id.begin(), id.end(), std::greater<>());
  auto rank = static_cast<std::size_t>(std::ceil(level * static_cast<double>(id.size()) - 1e-12));
  rank = std::clamp<std::size_t>(rank, 1, id.size());
  const double tau = id[rank - 1];
  const auto accepted = std::count_if(s.scores_ood.begin(), s.scores_ood.end(),
                                      [tau](double v) { return v >= tau; });
  return static_cast<double>(accepted) / static_cast<double>(s.scores_ood.size());
}

/// Pearson correlation of mid-ranks.
inline double spearman(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size(), ErrorKind::invalid_argument, "spearman: length mismatch");
  require(x.size() >= 3, ErrorKind::invalid_argument, "spearman: need at least 3 points");
  const Vector rx = detail::mid_ranks(x);
  const Vector ry = detail::mid_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0)
    fail(ErrorKind::undefined_correlation, "spearman: constant input array");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace marginlab
