#include "prolab/mlp.hpp"

#include <cmath>

namespace prolab {

Mlp::Mlp(int inputs, int hidden, int outputs) : inputs_(inputs), hidden_(hidden), outputs_(outputs) {
  if (inputs < 1 || hidden < 1 || outputs < 1)
    throw ParameterError("network dimensions must be positive");
  params_ = Vector::Zero(Eigen::Index(hidden) * inputs + hidden + Eigen::Index(outputs) * hidden + outputs);
}

void Mlp::set_params(const Vector& params) {
  if (params.size() != params_.size())
    throw ArityError("parameter vector has " + std::to_string(params.size()) + " entries, expected " +
                     std::to_string(params_.size()));
  params_ = params;
}

Eigen::Map<const Matrix> Mlp::w1() const { return {params_.data(), hidden_, inputs_}; }
Eigen::Map<const Vector> Mlp::b1() const { return {params_.data() + b1_offset(), hidden_}; }
Eigen::Map<const Matrix> Mlp::w2() const { return {params_.data() + w2_offset(), outputs_, hidden_}; }
Eigen::Map<const Vector> Mlp::b2() const { return {params_.data() + b2_offset(), outputs_}; }

void Mlp::initialize(RandomState& rng, bool zero_output) {
  std::normal_distribution<double> normal(0.0, 1.0);
  params_.setZero();
  const double s1 = 1.0 / std::sqrt(double(inputs_));
  for (Eigen::Index i = 0; i < b1_offset(); ++i) params_[i] = s1 * normal(rng);
  if (zero_output) return;
  const double s2 = 1.0 / std::sqrt(double(hidden_));
  for (Eigen::Index i = w2_offset(); i < b2_offset(); ++i) params_[i] = s2 * normal(rng);
}

Vector Mlp::forward(const Vector& input) const {
  Activations cache;
  return forward(input, cache);
}

Vector Mlp::forward(const Vector& input, Activations& cache) const {
  if (input.size() != inputs_)
    throw ArityError("network input has " + std::to_string(input.size()) + " entries, expected " +
                     std::to_string(inputs_));
  cache.input = input;
  cache.hidden = (w1() * input + b1()).array().tanh().matrix();
  return w2() * cache.hidden + b2();
}

void Mlp::backward(const Activations& cache, const Vector& d_output, Eigen::Ref<Vector> grad) const {
  Eigen::Map<Matrix> g_w1(grad.data(), hidden_, inputs_);
  Eigen::Map<Vector> g_b1(grad.data() + b1_offset(), hidden_);
  Eigen::Map<Matrix> g_w2(grad.data() + w2_offset(), outputs_, hidden_);
  Eigen::Map<Vector> g_b2(grad.data() + b2_offset(), outputs_);

  g_w2.noalias() += d_output * cache.hidden.transpose();
  g_b2 += d_output;
  const Vector d_pre = ((w2().transpose() * d_output).array() * (1.0 - cache.hidden.array().square())).matrix();
  g_w1.noalias() += d_pre * cache.input.transpose();
  g_b1 += d_pre;
}

Adam::Adam(Eigen::Index size, AdamConfig config)
    : config_(config), m_(Vector::Zero(size)), v_(Vector::Zero(size)) {
  if (!(config.learning_rate > 0.0)) throw ParameterError("learning rate must be positive");
}

void Adam::step(Eigen::Ref<Vector> params, const Vector& grad) {
  ++t_;
  m_ = config_.beta1 * m_ + (1 - config_.beta1) * grad;
  v_ = config_.beta2 * v_ + (1 - config_.beta2) * grad.cwiseAbs2();
  const double c1 = 1 - std::pow(config_.beta1, double(t_));
  const double c2 = 1 - std::pow(config_.beta2, double(t_));
  if (config_.weight_decay > 0) params *= 1 - config_.learning_rate * config_.weight_decay;
  params.array() -= config_.learning_rate * (m_.array() / c1) / ((v_.array() / c2).sqrt() + config_.epsilon);
}

}  // namespace prolab
