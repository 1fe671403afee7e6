#pragma once

#include "prolab/core.hpp"

namespace prolab {

/// One-hidden-layer tanh network, out = W2 tanh(W1 x + b1) + b2, with all
/// parameters stored in a single flat vector (W1, b1, W2, b2; column-major).
class Mlp {
 public:
  struct Activations {
    Vector input;
    Vector hidden;  // post-tanh
  };

  Mlp() = default;
  Mlp(int inputs, int hidden, int outputs);

  int inputs() const { return inputs_; }
  int hidden() const { return hidden_; }
  int outputs() const { return outputs_; }
  Eigen::Index parameter_count() const { return params_.size(); }

  Vector& params() { return params_; }
  const Vector& params() const { return params_; }
  void set_params(const Vector& params);

  Eigen::Map<const Matrix> w1() const;
  Eigen::Map<const Vector> b1() const;
  Eigen::Map<const Matrix> w2() const;
  Eigen::Map<const Vector> b2() const;

  /// Gaussian weights scaled by 1/sqrt(fan-in), zero biases. With
  /// `zero_output` the output layer starts at exactly zero.
  void initialize(RandomState& rng, bool zero_output = false);

  Vector forward(const Vector& input) const;
  Vector forward(const Vector& input, Activations& cache) const;

  /// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(output).
  void backward(const Activations& cache, const Vector& d_output, Eigen::Ref<Vector> grad) const;

 private:
  Eigen::Index b1_offset() const { return Eigen::Index(hidden_) * inputs_; }
  Eigen::Index w2_offset() const { return b1_offset() + hidden_; }
  Eigen::Index b2_offset() const { return w2_offset() + Eigen::Index(outputs_) * hidden_; }

  int inputs_ = 0;
  int hidden_ = 0;
  int outputs_ = 0;
  Vector params_;
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;  // decoupled (AdamW)
};

class Adam {
 public:
  Adam(Eigen::Index size, AdamConfig config);
  void step(Eigen::Ref<Vector> params, const Vector& grad);
  std::size_t steps() const { return t_; }

 private:
  AdamConfig config_;
  Vector m_;
  Vector v_;
  std::size_t t_ = 0;
};

/// Central finite-difference gradient of `f` at `x`.
template <typename F>
Vector finite_difference_gradient(F&& f, const Vector& x, double h = 1e-5) {
  Vector g(x.size());
  Vector probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double xi = probe[i];
    probe[i] = xi + h;
    const double up = f(probe);
    probe[i] = xi - h;
    const double down = f(probe);
    probe[i] = xi;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

/// ||a - b|| / max(||a||, ||b||); zero when both vanish.
inline double relative_error(const Vector& a, const Vector& b) {
  const double scale = std::max(a.norm(), b.norm());
  return scale == 0.0 ? 0.0 : (a - b).norm() / scale;
}

}  // namespace prolab
