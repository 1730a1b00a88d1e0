#include "icf/mlp.hpp"

#include <cmath>

#include "icf/kernels.hpp"

namespace icf {

void xavier_init(Matrix& w, int fan_in, int fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  for (double& v : w.data) v = rng.uniform(-bound, bound);
}

Mlp::Mlp(const std::string& prefix, int in, int h, Activation a)
    : w1(prefix + ".w1", h, in),
      b1(prefix + ".b1", h, 1),
      w2(prefix + ".w2", h, h),
      b2(prefix + ".b2", h, 1),
      w3(prefix + ".w3", 1, h),
      b3(prefix + ".b3", 1, 1),
      act(a),
      in_dim(in),
      hidden(h) {}

void Mlp::init_xavier(Rng& rng) {
  xavier_init(w1.value, in_dim, hidden, rng);
  xavier_init(w2.value, hidden, hidden, rng);
  xavier_init(w3.value, hidden, 1, rng);
  b1.value.fill(0.0);
  b2.value.fill(0.0);
  b3.value.fill(0.0);
}

double Mlp::forward(const double* x, Cache& cache) const {
  cache.x.assign(x, x + in_dim);
  cache.z1.resize(hidden);
  cache.a1.resize(hidden);
  cache.z2.resize(hidden);
  cache.a2.resize(hidden);
  kernels::matvec_serial(w1.value, x, cache.z1.data());
  for (int i = 0; i < hidden; ++i) {
    cache.z1[i] += b1.value.data[i];
    cache.a1[i] = activate_scalar(act, cache.z1[i]);
  }
  kernels::matvec_serial(w2.value, cache.a1.data(), cache.z2.data());
  for (int i = 0; i < hidden; ++i) {
    cache.z2[i] += b2.value.data[i];
    cache.a2[i] = activate_scalar(act, cache.z2[i]);
  }
  return kernels::dot(w3.value.row_ptr(0), cache.a2.data(), hidden) + b3.value.data[0];
}

void Mlp::backward(const Cache& cache, double dout, Matrix* g, double* dx) const {
  // layer 3
  std::vector<double> da2(hidden), dz2(hidden), da1(hidden), dz1(hidden);
  for (int i = 0; i < hidden; ++i) da2[i] = dout * w3.value.data[i];
  for (int i = 0; i < hidden; ++i) dz2[i] = activate_backward_scalar(act, cache.z2[i], da2[i]);
  kernels::matvec_transposed_serial(w2.value, dz2.data(), da1.data());
  for (int i = 0; i < hidden; ++i) dz1[i] = activate_backward_scalar(act, cache.z1[i], da1[i]);

  if (g) {
    // layout matches tensors(): w1 b1 w2 b2 w3 b3
    for (int i = 0; i < hidden; ++i) {
      double* row = g[0].row_ptr(i);
      const double d = dz1[i];
      for (int j = 0; j < in_dim; ++j) row[j] += d * cache.x[j];
      g[1].data[i] += d;
    }
    for (int i = 0; i < hidden; ++i) {
      double* row = g[2].row_ptr(i);
      const double d = dz2[i];
      for (int j = 0; j < hidden; ++j) row[j] += d * cache.a1[j];
      g[3].data[i] += d;
    }
    for (int j = 0; j < hidden; ++j) g[4].data[j] += dout * cache.a2[j];
    g[5].data[0] += dout;
  }

  if (dx) kernels::matvec_transposed_serial(w1.value, dz1.data(), dx);
}

std::vector<ParamTensor*> Mlp::tensors() { return {&w1, &b1, &w2, &b2, &w3, &b3}; }

std::vector<const ParamTensor*> Mlp::tensors() const { return {&w1, &b1, &w2, &b2, &w3, &b3}; }

}  // namespace icf
