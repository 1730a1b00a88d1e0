#ifndef ICF_MF_HPP
#define ICF_MF_HPP

#include <vector>

#include "icf/dataset.hpp"
#include "icf/mlp.hpp"
#include "icf/optim.hpp"

namespace icf {

enum class Backbone { Dot, Nn, Gc };

Backbone backbone_from_string(const std::string& s);
std::string to_string(Backbone b);

// Bipartite rating graph bucketed by rating level, neighbor lists capped and
// kept in ascending index order so aggregation is permutation-invariant.
struct GcGraph {
  int levels = 0;
  // [user_row][level] -> item indices
  std::vector<std::vector<std::vector<int>>> user_items;
  // [item][level] -> user rows (rows of P)
  std::vector<std::vector<std::vector<int>>> item_users;
};

GcGraph build_gc_graph(const RatingDataset& ds, const std::vector<int>& triple_subset,
                       const std::vector<int>& user_row_of, int num_rows, int levels,
                       int neighbor_cap, uint64_t seed);

// Rating level bucket for a value; explicit data uses m in {1..5}.
int rating_level(double value, int levels);

// Per-rating-level aggregation weights plus the combination layers and the
// three-layer output network of the graph-convolution backbone.
struct GcPredictor {
  int levels = 0;
  std::vector<ParamTensor> wq;  // per level, d x d, applied to item aggregates
  std::vector<ParamTensor> wp;  // per level, d x d, applied to user aggregates
  ParamTensor fc_w, fc_b;       // user-side combine: d x (levels*d), d
  ParamTensor fc2_w, fc2_b;     // item-side combine
  Mlp out;                      // 4d -> h -> h -> 1, relu

  void init(int dim, int hidden, int num_levels, Rng& rng);
  std::vector<ParamTensor*> tensors();
};

// Stage-1 factorization model over key users. Row r of P belongs to global
// user key_users[r]; items keep global indices.
struct MfParams {
  Backbone backbone = Backbone::Nn;
  Feedback feedback = Feedback::Explicit;
  int dim = 0;
  int hidden = 0;
  int num_items = 0;
  std::vector<int> key_users;  // ascending global user ids

  ParamTensor P;          // M_k x d
  ParamTensor Q;          // N x d
  ParamTensor user_bias;  // M_k x 1
  ParamTensor item_bias;  // N x 1
  double global_bias = 0.0;

  Mlp nn;           // nn backbone, in = 3d, tanh
  GcPredictor gc;   // gc backbone
  GcGraph graph;    // gc backbone neighbor lists (train edges of key users)

  MfParams() = default;
  MfParams(Backbone b, Feedback fb, int num_key_users, int items, int d, int h, int gc_levels);
  void init_params(uint64_t init_seed);

  int row_of(int global_user) const;  // -1 when not a key user
  double mean_user_bias() const;

  std::vector<ParamTensor*> all_tensors();
  std::vector<const ParamTensor*> all_tensors() const;
  // The predictor parameters theta (finetuned during adaptation).
  std::vector<ParamTensor*> predictor_tensors();
};

// A user as seen by the predictor: embedding + bias + (gc) per-level history.
struct UserRef {
  const double* embedding = nullptr;
  double bias = 0.0;
  // gc backbone: item lists per rating level; null means no history
  const std::vector<std::vector<int>>* level_items = nullptr;
};

struct PredictCache {
  // inputs
  const double* p = nullptr;
  const double* q = nullptr;
  int item = -1;
  // nn
  std::vector<double> z;  // [p || q || p*q]
  double dot = 0.0;
  Mlp::Cache mlp;
  // gc
  std::vector<double> mu_u, mu_i;      // levels*d mean embeddings
  std::vector<int> cnt_u, cnt_i;       // list sizes per level
  std::vector<double> zu, zi;          // pre-relu per level (levels*d)
  std::vector<double> mcat, ncat;      // relu outputs (levels*d)
  std::vector<double> m_u, n_i;        // combined d-vectors
  std::vector<double> x;               // 4d concat
};

double predict(const MfParams& mf, const UserRef& user, int item, PredictCache& cache);

// Convenience: no-cache prediction.
double predict(const MfParams& mf, const UserRef& user, int item);

// Prediction for a key user by row.
double predict_key(const MfParams& mf, int row, int item);

struct BackwardOptions {
  bool into_embeddings = true;  // accumulate gradients for P, Q and biases
  double* dp = nullptr;         // when set, receives +d(score)/d(p) * dscore
};

// Accumulates d(score)/d(params) * dscore into `grads` (layout of
// mf.all_tensors(): P, Q, user_bias, item_bias, then predictor tensors).
// user_row is the P row (-1 for an override embedding).
void predict_backward(const MfParams& mf, const UserRef& user, int user_row, int item,
                      const PredictCache& cache, double dscore, GradSet& grads,
                      const BackwardOptions& opt);

// Explicit: squared error. Implicit: numerically stable binary cross-entropy
// of sigmoid(score) against the 0/1 target.
double pointwise_loss(double score, double target, Feedback feedback);
double pointwise_loss_backward(double score, double target, Feedback feedback);

// Forward/backward over one mini-batch of key-user ratings: adds the mean
// gradient into each tensor's .grad and returns the mean pointwise loss.
// user_row maps global user -> P row. This is the exact code path pretrain
// optimizes, exposed so gradient checks exercise it directly; `workspace`
// (optional) carries the per-thread buffers between calls.
double mf_batch_loss_and_grad(MfParams& mf, const RatingDataset& ds, const std::vector<int>& pairs,
                              const std::vector<int>& user_row,
                              std::vector<GradSet>* workspace = nullptr);

struct PretrainOptions {
  Backbone backbone = Backbone::Nn;
  int dim = 16;
  int hidden = 32;
  double learning_rate = 0.001;
  int batch_size = 512;
  double weight_decay = 0.0;
  int max_epochs = 100;
  int patience = 5;
  bool strict_bias = false;  // true drops the global mean offset
  int gc_neighbor_cap = 50;
  uint64_t init_seed = 1;
  uint64_t shuffle_seed = 2;
  bool verbose = false;
};

// Mini-batch Adam over the observed train entries of the key users, early
// stopping on validation loss; returns the best-validation snapshot.
MfParams pretrain(const RatingDataset& ds, const SplitIndices& split,
                  const std::vector<int>& key_users, const PretrainOptions& opt);

// Mean pointwise loss of transductive predictions over the given triples
// (key-user triples only).
double mean_loss_key(const MfParams& mf, const RatingDataset& ds, const std::vector<int>& idx);

}  // namespace icf

#endif
