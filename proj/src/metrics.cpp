#include "icf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "icf/common.hpp"

namespace icf {

Cohort cohort_from_string(const std::string& s) {
  if (s == "all") return Cohort::All;
  if (s == "few_shot") return Cohort::FewShot;
  if (s == "new") return Cohort::New;
  throw ConfigError("unknown cohort '" + s + "'");
}

std::string to_string(Cohort c) {
  switch (c) {
    case Cohort::All: return "all";
    case Cohort::FewShot: return "few_shot";
    case Cohort::New: return "new";
  }
  return "?";
}

double rmse(const std::vector<double>& pred, const std::vector<double>& truth) {
  if (pred.empty() || pred.size() != truth.size())
    throw EvalError("rmse: need equal nonzero-length inputs, got " + std::to_string(pred.size()) +
                    " and " + std::to_string(truth.size()));
  double ss = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - truth[i];
    ss += d * d;
  }
  return std::sqrt(ss / static_cast<double>(pred.size()));
}

namespace {

double dcg_of_order(const std::vector<ScoredItem>& items, const std::vector<int>& order,
                    int cutoff) {
  const int limit = cutoff > 0 ? std::min<int>(cutoff, order.size()) : static_cast<int>(order.size());
  double dcg = 0.0;
  for (int pos = 1; pos <= limit; ++pos)
    dcg += items[order[pos - 1]].relevance / std::log2(static_cast<double>(pos) + 1.0);
  return dcg;
}

// predicted order: pred desc, ties by ascending item index
std::vector<int> predicted_order(const std::vector<ScoredItem>& items) {
  std::vector<int> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (items[a].pred != items[b].pred) return items[a].pred > items[b].pred;
    return items[a].item < items[b].item;
  });
  return order;
}

std::vector<int> ideal_order(const std::vector<ScoredItem>& items) {
  std::vector<int> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (items[a].relevance != items[b].relevance) return items[a].relevance > items[b].relevance;
    return items[a].item < items[b].item;
  });
  return order;
}

}  // namespace

double ndcg(const std::vector<std::vector<ScoredItem>>& per_user, int cutoff) {
  double sum = 0.0;
  long counted = 0;
  for (const auto& items : per_user) {
    if (items.empty()) throw EvalError("ndcg: user with empty item list");
    const double idcg = dcg_of_order(items, ideal_order(items), cutoff);
    if (idcg <= 0.0) continue;
    sum += dcg_of_order(items, predicted_order(items), cutoff) / idcg;
    ++counted;
  }
  if (counted == 0) throw EvalError("ndcg: every user has zero ideal gain");
  return sum / static_cast<double>(counted);
}

double ndcg_single_bruteforce(const std::vector<ScoredItem>& items, int cutoff) {
  std::vector<int> perm(items.size());
  std::iota(perm.begin(), perm.end(), 0);
  double best = 0.0;
  std::vector<int> p = perm;
  std::sort(p.begin(), p.end());
  do {
    best = std::max(best, dcg_of_order(items, p, cutoff));
  } while (std::next_permutation(p.begin(), p.end()));
  if (best <= 0.0) return -1.0;  // caller decides how to treat zero-gain users
  return dcg_of_order(items, predicted_order(items), cutoff) / best;
}

double auc(const std::vector<double>& pos_scores, const std::vector<double>& neg_scores) {
  if (pos_scores.empty() || neg_scores.empty())
    throw EvalError("auc: both score lists must be nonempty");

  struct Entry {
    double score;
    bool positive;
  };
  std::vector<Entry> all;
  all.reserve(pos_scores.size() + neg_scores.size());
  for (double s : pos_scores) all.push_back({s, true});
  for (double s : neg_scores) all.push_back({s, false});
  std::sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) { return a.score < b.score; });

  // Mann-Whitney U via average ranks over tie groups
  double rank_sum_pos = 0.0;
  size_t i = 0;
  while (i < all.size()) {
    size_t j = i;
    while (j < all.size() && all[j].score == all[i].score) ++j;
    const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (size_t k = i; k < j; ++k)
      if (all[k].positive) rank_sum_pos += avg_rank;
    i = j;
  }
  const double np = static_cast<double>(pos_scores.size());
  const double nn = static_cast<double>(neg_scores.size());
  const double u = rank_sum_pos - np * (np + 1.0) / 2.0;
  return u / (np * nn);
}

double auc_bruteforce(const std::vector<double>& pos_scores,
                      const std::vector<double>& neg_scores) {
  if (pos_scores.empty() || neg_scores.empty())
    throw EvalError("auc: both score lists must be nonempty");
  double wins = 0.0;
  for (double p : pos_scores)
    for (double n : neg_scores) {
      if (p > n)
        wins += 1.0;
      else if (p == n)
        wins += 0.5;
    }
  return wins / (static_cast<double>(pos_scores.size()) * static_cast<double>(neg_scores.size()));
}

}  // namespace icf
