#ifndef ICF_RELATION_HPP
#define ICF_RELATION_HPP

#include <utility>
#include <vector>

#include "icf/mf.hpp"

namespace icf {

enum class AttentionNorm { Softmax, LinearRatio };

AttentionNorm norm_from_string(const std::string& s);
std::string to_string(AttentionNorm n);

// Aggregated rated-item vector for one query user.
struct UserContext {
  std::vector<double> d;      // sum of item embeddings over the history
  std::vector<int> history;   // item ids, ascending
  bool fallback_used = false;
};

// Sum of Q rows over the history; an empty history falls back to
// fallback_size seeded random items (fallback_used = true) and throws
// ColdStartError when fallback_size is 0.
UserContext build_context(const std::vector<int>& history_items, const Matrix& item_embeddings,
                          uint64_t seed, int fallback_size);

struct RelationHead {
  ParamTensor e;   // 2d x 1 score vector
  ParamTensor wq;  // d x d
  ParamTensor wk;  // d x d
  ParamTensor wv;  // d x d
  std::vector<int> key_sample;  // rows into P, fixed per head
};

struct RelationParams {
  int heads = 0;
  int dim = 0;
  AttentionNorm normalization = AttentionNorm::Softmax;
  std::vector<RelationHead> head;
  ParamTensor wo;  // d x (heads*d)

  RelationParams() = default;
  RelationParams(int num_heads, int d, AttentionNorm norm);
  // W_v = I and W_o = [I/L ... I/L], so the initial embedding is close to the
  // mean of the sampled key embeddings.
  void init_params(uint64_t seed);
  void sample_keys(int num_key_rows, int sample_size, uint64_t seed);

  std::vector<ParamTensor*> tensors();
  std::vector<const ParamTensor*> tensors() const;
};

struct AttentionWeights {
  std::vector<std::pair<int, double>> weights;  // (key row, weight)
};

// Raw score per sampled key user u of head l:
//   s_u = e . [W_q d_u' (+) W_k p_u]            (+ (W_q d_u').(W_k p_u)/sqrt(d) in softmax mode)
// softmax mode normalizes exp(s - max)/sum; linear_ratio normalizes s/sum(s)
// and throws on |sum| < 1e-12.
AttentionWeights head_attention(const UserContext& ctx, const RelationParams& rel, int head_index,
                                const Matrix& key_embeddings);

// W_o applied to the concatenation over heads of the weight-summed
// value-projected key embeddings.
std::vector<double> inductive_embedding(const UserContext& ctx, const RelationParams& rel,
                                        const Matrix& key_embeddings);

// Mean over the batch of -log softmax of the diagonal of meta . inductive^T.
// paper_sign flips the sign of the per-user log-probability term.
double contrastive_loss(const Matrix& meta_batch, const Matrix& inductive_batch,
                        bool paper_sign = false);

// d(loss)/d(inductive rows); meta rows are frozen.
void contrastive_loss_backward(const Matrix& meta_batch, const Matrix& inductive_batch,
                               Matrix& d_inductive, bool paper_sign = false);

enum class AdaptMode { Interpolation, Extrapolation };

AdaptMode adapt_mode_from_string(const std::string& s);
std::string to_string(AdaptMode m);

struct AdaptOptions {
  AdaptMode mode = AdaptMode::Interpolation;
  int heads = 4;
  int sample_size = 200;
  AttentionNorm normalization = AttentionNorm::Softmax;
  double lambda = 10.0;  // contrastive weight (extrapolation)
  double learning_rate = 0.001;
  int batch_size = 512;
  int max_epochs = 100;
  int patience = 5;
  int fallback_items = 10;
  bool resample_keys_each_epoch = false;
  bool paper_sign_contrastive = false;
  int gc_neighbor_cap = 50;
  uint64_t init_seed = 1;
  uint64_t shuffle_seed = 2;
  bool verbose = false;
};

struct AdaptResult {
  RelationParams rel;
  MfParams model;  // copy of the stage-1 model with finetuned predictor
};

// Query-side state prepared once per adaptation run: contexts and (gc)
// per-level history lists are fixed because Q stays frozen.
struct AdaptData {
  std::vector<int> users;    // global ids, ascending (one slot each)
  std::vector<int> slot_of;  // global user -> slot or -1
  std::vector<UserContext> ctx;
  std::vector<std::vector<std::vector<int>>> gc_lists;
  std::vector<int> meta_row;  // slot -> P row (-1 outside extrapolation)
  std::vector<int> sup_idx;   // train triple indices of the query users
  std::vector<int> valid_idx;
  double mean_bias = 0.0;
};

AdaptData prepare_adapt_data(const MfParams& mf, const RatingDataset& ds,
                             const SplitIndices& split, const std::vector<int>& query_users,
                             const AdaptOptions& opt);

// One mini-batch of the stage-2 objective: mean pointwise loss of predictions
// using inductive embeddings, plus lambda * contrastive when lambda != 0.
// Adds gradients into the relation tensors and theta's predictor tensors
// (embeddings and biases untouched). The exact code path adapt() optimizes.
double adapt_batch_loss_and_grad(MfParams& theta, RelationParams& rel, const RatingDataset& ds,
                                 const AdaptData& data, const std::vector<int>& batch_pairs,
                                 double lambda, bool paper_sign);

// Stage-2 adaptation: learns the relation model and finetunes the predictor
// on the query users' train ratings, with P and Q frozen. Interpolation
// requires query users disjoint from key users; extrapolation reuses the key
// users as query users and adds lambda * contrastive_loss.
AdaptResult adapt(const MfParams& mf, const RatingDataset& ds, const SplitIndices& split,
                  const UserPartition& partition, const AdaptOptions& opt);

// Per-level item lists for a query user's history (gc backbone input).
std::vector<std::vector<int>> level_items_from_history(const std::vector<int>& items,
                                                       const std::vector<double>& values,
                                                       int levels, int cap, uint64_t seed);

struct InferredUser {
  UserContext ctx;
  std::vector<double> embedding;                 // p tilde
  std::vector<std::vector<int>> level_items;     // gc input
  double bias = 0.0;                             // mean key-user bias
};

// Pure composition build_context -> inductive_embedding; values may be empty
// (treated as maximal level for gc bucketing).
InferredUser infer_user(const std::vector<int>& history, const std::vector<double>& values,
                        const MfParams& mf, const RelationParams& rel, uint64_t fallback_seed,
                        int fallback_items, int gc_neighbor_cap = 50);

double predict_inferred(const MfParams& mf, const InferredUser& user, int item);

// All items ranked by score descending (ties by ascending item), truncated to k.
std::vector<std::pair<int, double>> top_k_items(const MfParams& mf, const InferredUser& user,
                                                int k);

struct AttentionDumpRow {
  int query_user;  // global user id
  int head;
  int key_user;  // global user id
  double weight;
};

// Full per-head attention table for the given query users.
std::vector<AttentionDumpRow> export_attention(const MfParams& mf, const RelationParams& rel,
                                               const RatingDataset& ds,
                                               const SplitIndices& split,
                                               const std::vector<int>& users,
                                               int fallback_items, uint64_t fallback_seed);

}  // namespace icf

#endif
