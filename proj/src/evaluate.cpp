#include "icf/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <unordered_set>

#include "icf/kernels.hpp"

namespace icf {

namespace {

double clamp_rating(double s) { return std::min(5.0, std::max(1.0, s)); }

struct ScoringPlan {
  std::vector<int> users;                      // cohort users, ascending
  std::vector<int> pair_idx;                   // test triple indices to score
  std::vector<InferredUser> inductive;         // per cohort user needing inference
  std::vector<int> inductive_of;               // user -> index into inductive, or -1
};

}  // namespace

MetricsReport evaluate(const MfParams& mf, const RelationParams* rel, const RatingDataset& ds,
                       const SplitIndices& split, const UserPartition& partition, Cohort cohort,
                       const EvalOptions& opt) {
  std::vector<char> is_key(ds.num_users, 0), in_cohort(ds.num_users, 0);
  for (int u : partition.key_users) is_key[u] = 1;

  switch (cohort) {
    case Cohort::All:
      std::fill(in_cohort.begin(), in_cohort.end(), 1);
      break;
    case Cohort::FewShot:
      for (int u : partition.query_users) in_cohort[u] = 1;
      break;
    case Cohort::New:
      // users the trained model has never seen
      for (int u = 0; u < ds.num_users; ++u) in_cohort[u] = !is_key[u];
      break;
  }

  // a user is scored transductively only if the model owns their row
  std::vector<int> row_of(ds.num_users, -1);
  for (int u = 0; u < ds.num_users; ++u)
    if (is_key[u]) row_of[u] = mf.row_of(u);

  std::vector<int> pair_idx;
  std::vector<char> touched(ds.num_users, 0);
  for (int idx : split.test) {
    const Rating& r = ds.triples[idx];
    if (!in_cohort[r.user]) continue;
    pair_idx.push_back(idx);
    touched[r.user] = 1;
  }
  if (pair_idx.empty())
    throw EvalError("evaluate: empty " + to_string(cohort) + " cohort");

  // inductive users: anyone touched without a transductive row
  std::vector<int> inductive_users;
  for (int u = 0; u < ds.num_users; ++u)
    if (touched[u] && row_of[u] < 0) inductive_users.push_back(u);
  if (!inductive_users.empty() && rel == nullptr)
    throw EvalError("evaluate: cohort " + to_string(cohort) + " needs a relation model for " +
                    std::to_string(inductive_users.size()) + " non-key users");

  // histories = train ratings (observed-but-untrained for non-key users)
  std::vector<std::vector<int>> by_user = ratings_by_user(ds, split.train);
  std::vector<int> inductive_of(ds.num_users, -1);
  std::vector<InferredUser> inferred(inductive_users.size());
  for (size_t i = 0; i < inductive_users.size(); ++i) inductive_of[inductive_users[i]] = static_cast<int>(i);
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < static_cast<long>(inductive_users.size()); ++i) {
    const int u = inductive_users[i];
    std::vector<int> items;
    std::vector<double> values;
    for (int idx : by_user[u]) {
      items.push_back(ds.triples[idx].item);
      values.push_back(ds.triples[idx].value);
    }
    inferred[i] = infer_user(items, values, mf, *rel,
                             mix_seed(opt.seed, 0xeef + static_cast<uint64_t>(u)),
                             opt.fallback_items, opt.gc_neighbor_cap);
  }

  auto score_pair = [&](int user, int item) {
    if (row_of[user] >= 0) return predict_key(mf, row_of[user], item);
    return predict_inferred(mf, inferred[inductive_of[user]], item);
  };

  MetricsReport report;
  report.cohort = cohort;

  if (ds.feedback == Feedback::Explicit) {
    std::vector<double> pred(pair_idx.size()), truth(pair_idx.size());
#pragma omp parallel for schedule(static)
    for (long t = 0; t < static_cast<long>(pair_idx.size()); ++t) {
      const Rating& r = ds.triples[pair_idx[t]];
      pred[t] = clamp_rating(score_pair(r.user, r.item));
      truth[t] = r.value;
    }
    report.rmse = rmse(pred, truth);

    std::vector<std::vector<ScoredItem>> per_user(ds.num_users);
    for (size_t t = 0; t < pair_idx.size(); ++t) {
      const Rating& r = ds.triples[pair_idx[t]];
      per_user[r.user].push_back({pred[t], r.value, r.item});
    }
    std::vector<std::vector<ScoredItem>> grouped;
    for (int u = 0; u < ds.num_users; ++u)
      if (!per_user[u].empty()) grouped.push_back(std::move(per_user[u]));
    report.num_users = static_cast<long>(grouped.size());
    report.num_pairs = static_cast<long>(pair_idx.size());
    report.ndcg = ndcg(grouped, opt.ndcg_cutoff);
    return report;
  }

  // implicit: positives from the test slice, negatives sampled per positive,
  // avoiding every interaction the dataset holds for that user
  std::vector<std::unordered_set<int>> all_pos(ds.num_users);
  for (const Rating& r : ds.triples)
    if (r.value > 0.0) all_pos[r.user].insert(r.item);

  struct EvalPair {
    int user;
    int item;
    double label;
  };
  std::vector<EvalPair> pairs;
  Rng rng(mix_seed(opt.seed, 0x7e57));
  for (int idx : pair_idx) {
    const Rating& r = ds.triples[idx];
    if (r.value <= 0.0) continue;
    pairs.push_back({r.user, r.item, 1.0});
    if (static_cast<int>(all_pos[r.user].size()) >= ds.num_items) {
      std::fprintf(stderr, "evaluate: user %d interacted with every item, no negatives\n", r.user);
      continue;
    }
    for (int k = 0; k < opt.negative_ratio; ++k) {
      int item;
      do {
        item = rng.uniform_int(ds.num_items);
      } while (all_pos[r.user].count(item) > 0);
      pairs.push_back({r.user, item, 0.0});
    }
  }
  if (pairs.empty()) throw EvalError("evaluate: no positive test interactions in cohort");

  std::vector<double> scores(pairs.size());
#pragma omp parallel for schedule(static)
  for (long t = 0; t < static_cast<long>(pairs.size()); ++t)
    scores[t] = score_pair(pairs[t].user, pairs[t].item);

  std::vector<double> pos, neg;
  std::vector<std::vector<ScoredItem>> per_user(ds.num_users);
  for (size_t t = 0; t < pairs.size(); ++t) {
    (pairs[t].label > 0.0 ? pos : neg).push_back(scores[t]);
    per_user[pairs[t].user].push_back({scores[t], pairs[t].label, pairs[t].item});
  }
  std::vector<std::vector<ScoredItem>> grouped;
  for (int u = 0; u < ds.num_users; ++u)
    if (!per_user[u].empty()) grouped.push_back(std::move(per_user[u]));

  report.num_users = static_cast<long>(grouped.size());
  report.num_pairs = static_cast<long>(pairs.size());
  report.auc = auc(pos, neg);
  report.ndcg = ndcg(grouped, opt.ndcg_cutoff);
  return report;
}

std::string metrics_csv(const std::vector<MetricsReport>& reports) {
  std::string out = "cohort,metric,value,num_users,num_pairs\n";
  char buf[128];
  for (const MetricsReport& r : reports) {
    auto emit = [&](const char* metric, double value) {
      std::snprintf(buf, sizeof(buf), "%s,%s,%.17g,%ld,%ld\n", to_string(r.cohort).c_str(), metric,
                    value, r.num_users, r.num_pairs);
      out += buf;
    };
    if (r.rmse) emit("rmse", *r.rmse);
    if (r.ndcg) emit("ndcg", *r.ndcg);
    if (r.auc) emit("auc", *r.auc);
  }
  return out;
}

}  // namespace icf
