#ifndef ICF_METRICS_HPP
#define ICF_METRICS_HPP

#include <optional>
#include <string>
#include <vector>

namespace icf {

enum class Cohort { All, FewShot, New };

Cohort cohort_from_string(const std::string& s);
std::string to_string(Cohort c);

struct MetricsReport {
  Cohort cohort = Cohort::All;
  std::optional<double> rmse;
  std::optional<double> ndcg;
  std::optional<double> auc;
  long num_users = 0;
  long num_pairs = 0;
};

// sqrt(mean squared difference). Inputs must have equal nonzero length; any
// clamping of predictions happens upstream.
double rmse(const std::vector<double>& pred, const std::vector<double>& truth);

struct ScoredItem {
  double pred;
  double relevance;
  int item;  // used for deterministic tie-breaking (ascending)
};

// Mean NDCG over users. Items ranked by pred descending (ties by ascending
// item index); DCG = sum rel_pos / log2(pos + 1) over positions 1..K (cutoff 0
// means the full list); users with IDCG = 0 are excluded from the mean.
double ndcg(const std::vector<std::vector<ScoredItem>>& per_user, int cutoff = 0);

// NDCG for one user by brute force: DCG of the tie-broken predicted ordering
// divided by the max DCG over all permutations. Test oracle; O(n!).
double ndcg_single_bruteforce(const std::vector<ScoredItem>& items, int cutoff = 0);

// Fraction of (positive, negative) pairs ranked correctly, ties as 0.5.
// Sort-and-rank, O(n log n).
double auc(const std::vector<double>& pos_scores, const std::vector<double>& neg_scores);

// O(n^2) pairwise definition. Test oracle.
double auc_bruteforce(const std::vector<double>& pos_scores,
                      const std::vector<double>& neg_scores);

}  // namespace icf

#endif
