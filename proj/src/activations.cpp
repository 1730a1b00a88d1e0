#include "icf/activations.hpp"

#include <cmath>

#include "icf/common.hpp"

namespace icf {

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::Relu;
  if (s == "sigmoid") return Activation::Sigmoid;
  throw ConfigError("unknown activation kind '" + s + "'");
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::Tanh: return "tanh";
    case Activation::Relu: return "relu";
    case Activation::Sigmoid: return "sigmoid";
  }
  return "?";
}

double activate_scalar(Activation kind, double x) {
  switch (kind) {
    case Activation::Tanh: return std::tanh(x);
    case Activation::Relu: return x > 0.0 ? x : 0.0;
    case Activation::Sigmoid: return sigmoid(x);
  }
  return 0.0;
}

double activate_backward_scalar(Activation kind, double x, double upstream) {
  switch (kind) {
    case Activation::Tanh: {
      const double t = std::tanh(x);
      return (1.0 - t * t) * upstream;
    }
    case Activation::Relu:
      return x > 0.0 ? upstream : 0.0;
    case Activation::Sigmoid: {
      const double s = sigmoid(x);
      return s * (1.0 - s) * upstream;
    }
  }
  return 0.0;
}

Matrix activate(Activation kind, const Matrix& x) {
  Matrix out(x.rows, x.cols);
  for (size_t i = 0; i < x.size(); ++i) out.data[i] = activate_scalar(kind, x.data[i]);
  return out;
}

Matrix activate_backward(Activation kind, const Matrix& x, const Matrix& upstream) {
  check_same_shape(x, upstream, "activate_backward");
  Matrix out(x.rows, x.cols);
  for (size_t i = 0; i < x.size(); ++i)
    out.data[i] = activate_backward_scalar(kind, x.data[i], upstream.data[i]);
  return out;
}

}  // namespace icf
