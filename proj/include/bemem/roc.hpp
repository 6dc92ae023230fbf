#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace bemem {

class DegenerateLabels : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RocPoint {
  double threshold;
  double fpr;
  double tpr;
};

/// Threshold-free classifier summary. A generation is predicted memorised
/// when its score is >= the threshold.
struct RocSummary {
  double auc = 0.0;
  double f1 = 0.0;                 // best F1 over all thresholds
  double f1_threshold = 0.0;
  double tpr_at_1pct_fpr = 0.0;    // best TPR with FPR <= 0.01
  double threshold_at_1pct = 0.0;
  double f1_at_1pct = 0.0;         // F1 at that operating point
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::vector<RocPoint> curve;     // descending thresholds, starts at (0,0)
};

/// AUC as P(score_pos > score_neg) + 0.5 P(tie), computed by rank sums.
inline double auc_pairwise(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("auc: length mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // counts are integers so the pair tally is exact; ties get half credit
  std::size_t pos = 0, neg = 0;
  for (int l : labels) (l ? pos : neg)++;
  if (pos == 0 || neg == 0) throw DegenerateLabels("auc: need at least one positive and one negative");
  double twice_wins = 0.0;  // 2 * (wins + ties/2)
  std::size_t neg_below = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::size_t p_here = 0, n_here = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] ? p_here : n_here)++;
      ++j;
    }
    twice_wins += 2.0 * static_cast<double>(p_here) * static_cast<double>(neg_below) +
                  static_cast<double>(p_here) * static_cast<double>(n_here);
    neg_below += n_here;
    i = j;
  }
  return twice_wins / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

inline RocSummary roc_metrics(std::span<const double> scores, std::span<const int> labels,
                              double max_fpr = 0.01) {
  RocSummary r;
  r.auc = auc_pairwise(scores, labels);
  for (int l : labels) (l ? r.positives : r.negatives)++;
  const double np = static_cast<double>(r.positives), nn = static_cast<double>(r.negatives);

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  r.curve.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  r.threshold_at_1pct = std::numeric_limits<double>::infinity();
  r.f1_threshold = std::numeric_limits<double>::infinity();
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double thr = scores[order[i]];
    while (i < order.size() && scores[order[i]] == thr) {
      (labels[order[i]] ? tp : fp)++;
      ++i;
    }
    const double tpr = static_cast<double>(tp) / np;
    const double fpr = static_cast<double>(fp) / nn;
    r.curve.push_back({thr, fpr, tpr});
    const double f1 = 2.0 * static_cast<double>(tp) /
                      (2.0 * static_cast<double>(tp) + static_cast<double>(fp) + (np - static_cast<double>(tp)));
    if (f1 > r.f1) {
      r.f1 = f1;
      r.f1_threshold = thr;
    }
    if (fpr <= max_fpr && tpr > r.tpr_at_1pct_fpr) {
      r.tpr_at_1pct_fpr = tpr;
      r.threshold_at_1pct = thr;
      r.f1_at_1pct = f1;
    }
  }
  return r;
}

}  // namespace bemem
