#ifndef ICF_DATASET_HPP
#define ICF_DATASET_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "icf/matrix.hpp"

namespace icf {

enum class Feedback { Explicit, Implicit };

struct Rating {
  int user;
  int item;
  double value;
  int64_t timestamp;  // -1 when absent
};

// Sparse (user, item, value) observations with dense 0-based index maps.
struct RatingDataset {
  int num_users = 0;
  int num_items = 0;
  Feedback feedback = Feedback::Explicit;
  std::vector<Rating> triples;
  // dense index -> original id (identity when constructed synthetically)
  std::vector<int64_t> user_ids;
  std::vector<int64_t> item_ids;
};

enum class DataFormat { Ml100kUData, GenericCsv };

DataFormat format_from_string(const std::string& s);

// Loads tab-separated `user \t item \t rating \t timestamp` (ml100k_udata) or
// CSV with header `user_id,item_id,rating,timestamp` (timestamp optional).
// Ids are remapped to dense 0-based indices in ascending original-id order;
// duplicate (user, item) pairs keep the latest timestamp.
RatingDataset load_movielens(const std::string& path, DataFormat format,
                             Feedback feedback = Feedback::Explicit);

struct SplitIndices {
  std::vector<int> train;       // indices into triples
  std::vector<int> validation;  // 5% of the training portion
  std::vector<int> test;
};

// Seeded uniform split: round(n * test_fraction) test triples, then 5% of the
// remaining training portion moved to validation.
SplitIndices holdout_split(const RatingDataset& ds, double test_fraction, uint64_t seed);

enum class PartitionStrategy { Threshold, Random };

struct UserPartition {
  std::vector<int> key_users;    // ascending
  std::vector<int> query_users;  // ascending
  PartitionStrategy strategy = PartitionStrategy::Threshold;
  int delta = 0;
  double gamma = 0.0;
};

// Threshold: key = users with more than delta train ratings, query = the rest.
// Random: ceil(gamma * M) users sampled uniformly as key.
UserPartition partition_users_threshold(const RatingDataset& ds, const SplitIndices& split,
                                        int delta);
UserPartition partition_users_random(const RatingDataset& ds, double gamma, uint64_t seed);

// For each positive (u, i), draws `ratio` items uniformly from the items u has
// not interacted with (resampling on collision with positives) and appends
// them as value-0 triples. Users who interacted with every item are skipped.
RatingDataset negative_sample(const RatingDataset& ds, int ratio, uint64_t seed);

struct SynthFactors {
  Matrix user_factors;  // M x d
  Matrix item_factors;  // N x d
  double scale = 1.0;   // observed value = scale * (p . q + noise) + offset
  double offset = 0.0;
};

// Low-rank synthetic explicit-feedback instance: P* (M x d), Q* (N x d) with
// N(0,1)/sqrt(d) entries, each entry observed with probability `density`,
// values affinely rescaled into [1, 5].
std::pair<RatingDataset, SynthFactors> synth_low_rank(int num_users, int num_items, int rank,
                                                      double density, double noise_sd,
                                                      uint64_t seed);

// ---- helpers shared by the model pipeline ----

// Per-user triple-index lists over a subset of triples (e.g. the train split).
std::vector<std::vector<int>> ratings_by_user(const RatingDataset& ds,
                                              const std::vector<int>& subset);

// Count of subset ratings per user.
std::vector<int> rating_counts(const RatingDataset& ds, const std::vector<int>& subset);

bool write_generic_csv(const RatingDataset& ds, const std::string& path);

}  // namespace icf

#endif
