#ifndef ICF_EVALUATE_HPP
#define ICF_EVALUATE_HPP

#include "icf/metrics.hpp"
#include "icf/relation.hpp"

namespace icf {

struct EvalOptions {
  int ndcg_cutoff = 0;     // 0 = full per-user list
  int negative_ratio = 5;  // implicit feedback test negatives per positive
  int fallback_items = 10;
  int gc_neighbor_cap = 50;
  uint64_t seed = 1;  // negatives + cold-start fallbacks
};

// Scores one cohort of test ratings. Key users are scored transductively;
// query/new users inductively through the relation model (required for the
// few_shot and new cohorts unless every user is a key user). Explicit data
// reports RMSE+NDCG with predictions clamped to [1,5]; implicit data reports
// AUC+NDCG against a negative-sampled test set.
MetricsReport evaluate(const MfParams& mf, const RelationParams* rel, const RatingDataset& ds,
                       const SplitIndices& split, const UserPartition& partition, Cohort cohort,
                       const EvalOptions& opt);

std::string metrics_csv(const std::vector<MetricsReport>& reports);

}  // namespace icf

#endif
