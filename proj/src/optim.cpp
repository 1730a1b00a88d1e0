#include "icf/optim.hpp"

#include <cmath>

#include "icf/common.hpp"

namespace icf {

void adam_step(ParamTensor& p, const AdamConfig& cfg) {
  if (!p.grad.all_finite())
    throw TrainingError("adam_step: nonfinite gradient for parameter '" + p.name + "'");
  const double wd = p.embedding_table ? cfg.weight_decay : 0.0;
  p.step_count += 1;
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double correct1 = 1.0 - std::pow(b1, static_cast<double>(p.step_count));
  const double correct2 = 1.0 - std::pow(b2, static_cast<double>(p.step_count));
  for (size_t i = 0; i < p.value.size(); ++i) {
    const double g = p.grad.data[i] + wd * p.value.data[i];
    const double m = b1 * p.adam_m.data[i] + (1.0 - b1) * g;
    const double v = b2 * p.adam_v.data[i] + (1.0 - b2) * g * g;
    p.adam_m.data[i] = m;
    p.adam_v.data[i] = v;
    const double mhat = m / correct1;
    const double vhat = v / correct2;
    p.value.data[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
  }
  p.zero_grad();
}

void reduce_grads(const std::vector<GradSet>& parts, const std::vector<ParamTensor*>& ts,
                  double scale) {
  for (size_t k = 0; k < ts.size(); ++k) {
    Matrix& dst = ts[k]->grad;
    for (const GradSet& part : parts) {
      const Matrix& src = part.g[k];
      for (size_t i = 0; i < dst.size(); ++i) dst.data[i] += scale * src.data[i];
    }
  }
}

double grad_check(const std::function<double()>& loss_fn, std::vector<ParamTensor*> params,
                  int probes, double fd_epsilon, uint64_t seed) {
  for (ParamTensor* p : params) p->zero_grad();
  loss_fn();
  std::vector<Matrix> analytic;
  analytic.reserve(params.size());
  for (ParamTensor* p : params) analytic.push_back(p->grad);

  size_t total = 0;
  for (ParamTensor* p : params) total += p->value.size();
  if (total == 0) return 0.0;

  Rng rng(seed);
  double worst = 0.0;
  for (int probe = 0; probe < probes; ++probe) {
    size_t flat = rng.below(total);
    size_t t = 0;
    while (flat >= params[t]->value.size()) {
      flat -= params[t]->value.size();
      ++t;
    }
    double* coord = &params[t]->value.data[flat];
    const double saved = *coord;

    *coord = saved + fd_epsilon;
    const double lp = loss_fn();
    *coord = saved - fd_epsilon;
    const double lm = loss_fn();
    *coord = saved;

    const double fd = (lp - lm) / (2.0 * fd_epsilon);
    const double an = analytic[t].data[flat];
    const double rel = std::fabs(an - fd) / std::max(1e-8, std::fabs(an) + std::fabs(fd));
    if (rel > worst) worst = rel;
  }
  return worst;
}

}  // namespace icf
