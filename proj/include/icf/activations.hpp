#ifndef ICF_ACTIVATIONS_HPP
#define ICF_ACTIVATIONS_HPP

#include <string>

#include "icf/matrix.hpp"

namespace icf {

enum class Activation { Tanh, Relu, Sigmoid };

Activation activation_from_string(const std::string& s);
std::string to_string(Activation a);

double activate_scalar(Activation kind, double x);
// d/dx at x, multiplied by the upstream gradient. relu'(0) is defined as 0.
double activate_backward_scalar(Activation kind, double x, double upstream);

Matrix activate(Activation kind, const Matrix& x);
Matrix activate_backward(Activation kind, const Matrix& x, const Matrix& upstream);

inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace icf

#endif
