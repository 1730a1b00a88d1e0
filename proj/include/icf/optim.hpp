#ifndef ICF_OPTIM_HPP
#define ICF_OPTIM_HPP

#include <functional>
#include <string>
#include <vector>

#include "icf/matrix.hpp"

namespace icf {

struct AdamConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // L2 coefficient; applied only to tensors flagged as embedding tables.
  double weight_decay = 0.0;
};

// One named trainable tensor with its gradient and Adam state.
struct ParamTensor {
  std::string name;
  Matrix value;
  Matrix grad;
  Matrix adam_m;
  Matrix adam_v;
  long step_count = 0;
  // L2 weight decay targets embedding tables (P, Q) only.
  bool embedding_table = false;

  ParamTensor() = default;
  ParamTensor(std::string n, int rows, int cols, bool is_embedding = false)
      : name(std::move(n)),
        value(rows, cols),
        grad(rows, cols),
        adam_m(rows, cols),
        adam_v(rows, cols),
        embedding_table(is_embedding) {}

  void zero_grad() { grad.fill(0.0); }
  void reset_adam() {
    adam_m.fill(0.0);
    adam_v.fill(0.0);
    step_count = 0;
  }
};

// Bias-corrected Adam update. Adds weight_decay * value to the gradient first
// for embedding tables, increments step_count and zeroes the gradient after
// the update. Throws TrainingError on a nonfinite gradient.
void adam_step(ParamTensor& p, const AdamConfig& cfg);

// Central-difference gradient check. loss_fn must populate the .grad of every
// tensor in params (after an internal zero_grad) and return the loss; it must
// be deterministic. Returns the max over `probes` random coordinates of
//   |analytic - fd| / max(1e-8, |analytic| + |fd|).
double grad_check(const std::function<double()>& loss_fn, std::vector<ParamTensor*> params,
                  int probes, double fd_epsilon, uint64_t seed);

// Per-thread gradient buffers mirroring a tensor list. Batch workers each own
// one GradSet; reduce_grads folds them into the tensors' .grad fields in
// ascending thread order, which keeps training deterministic for a fixed
// thread count.
struct GradSet {
  std::vector<Matrix> g;

  void init(const std::vector<ParamTensor*>& ts) {
    g.clear();
    g.reserve(ts.size());
    for (const ParamTensor* t : ts) g.emplace_back(t->value.rows, t->value.cols);
  }
  void zero() {
    for (Matrix& m : g) m.fill(0.0);
  }
};

void reduce_grads(const std::vector<GradSet>& parts, const std::vector<ParamTensor*>& ts,
                  double scale);

}  // namespace icf

#endif
