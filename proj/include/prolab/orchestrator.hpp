#pragma once

#include "prolab/core.hpp"
#include "prolab/environment.hpp"
#include "prolab/mlp.hpp"
#include "prolab/rewards.hpp"

#include <span>
#include <vector>

namespace prolab {

inline constexpr double kKlLogFloor = 1e-12;

/// Maps prompt features to a point on the simplex: softmax over a
/// one-hidden-layer network with K outputs.
struct Orchestrator {
  int feature_dim = 0;
  int objectives = 0;
  double tau = kDefaultTemperature;  // temperature used to build the training targets
  Mlp net;

  Vector logits(const Vector& x) const;
};

struct WeightTargetRecord {
  int prompt_index = 0;
  WeightVector target;
};

/// One supervised example: prompt features and the weight vector to predict.
struct WeightExample {
  Vector features;
  WeightVector target;
};

struct OrchestratorTrainConfig {
  int hidden = 32;
  double learning_rate = 1e-5;
  int batch_size = 32;
  int epochs = 10;
  double weight_decay = 0.0;
  bool zero_output_init = false;
};

struct OrchestratorTrainResult {
  Orchestrator params;
  std::vector<double> loss_history;  // mean loss per epoch
};

Orchestrator init_orchestrator(int feature_dim, int objectives, int hidden, RandomState& rng,
                               bool zero_output = false);

WeightVector forward(const Orchestrator& orchestrator, const Vector& x);

/// Target for each pair: normalize_weights(reward_vector(models, x, chosen), tau).
/// Rejected responses are never scored.
std::vector<WeightTargetRecord> build_targets(std::span<const PreferencePair> pairs,
                                              std::span<const RewardModel> models, const World& world,
                                              double tau = kDefaultTemperature);

std::vector<WeightExample> to_examples(std::span<const WeightTargetRecord> targets, const World& world);

/// (1/M) sum_i KL(f(x_i) || w_i) with the target clamped at 1e-12 inside the
/// logarithm; accumulates the gradient of that mean into `grad` when non-null.
double kl_loss_and_grad(const Orchestrator& orchestrator, std::span<const WeightExample> batch, Vector* grad);

/// Mini-batch AdamW on kl_loss_and_grad.
OrchestratorTrainResult train_orchestrator(std::span<const WeightExample> examples,
                                           const OrchestratorTrainConfig& config, RandomState& rng,
                                           double tau = kDefaultTemperature);

}  // namespace prolab
