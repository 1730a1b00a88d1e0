#ifndef ICF_MLP_HPP
#define ICF_MLP_HPP

#include <vector>

#include "icf/activations.hpp"
#include "icf/optim.hpp"

namespace icf {

// Three affine layers in -> hidden -> hidden -> 1, with the given activation
// on the two hidden layers and a linear scalar output.
struct Mlp {
  ParamTensor w1, b1, w2, b2, w3, b3;
  Activation act = Activation::Tanh;
  int in_dim = 0;
  int hidden = 0;

  Mlp() = default;
  Mlp(const std::string& prefix, int in, int h, Activation a);

  void init_xavier(Rng& rng);

  struct Cache {
    std::vector<double> x;   // input
    std::vector<double> z1;  // pre-activation 1
    std::vector<double> a1;
    std::vector<double> z2;  // pre-activation 2
    std::vector<double> a2;
  };

  double forward(const double* x, Cache& cache) const;

  // Accumulates parameter gradients into grads[0..5] (layout of tensors());
  // when dx != nullptr, writes d(out)/d(x) * dout there (overwriting).
  void backward(const Cache& cache, double dout, Matrix* grads, double* dx) const;

  std::vector<ParamTensor*> tensors();
  std::vector<const ParamTensor*> tensors() const;
};

// Xavier-uniform fill: +-sqrt(6 / (fan_in + fan_out)).
void xavier_init(Matrix& w, int fan_in, int fan_out, Rng& rng);

}  // namespace icf

#endif
