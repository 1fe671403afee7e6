#pragma once

#include "prolab/core.hpp"
#include "prolab/environment.hpp"
#include "prolab/mlp.hpp"
#include "prolab/softmax.hpp"

#include <span>
#include <vector>

namespace prolab {

inline constexpr double kDefaultTemperature = 0.1;

/// Scorer r(x, y) for one objective: prompt features concatenated with a
/// one-hot response id, one tanh hidden layer, scalar output g(x, y).
///
/// The pairwise loss only sees g(x, y+) - g(x, y-), so any prompt-dependent
/// offset of g is unidentified. Scores are reported centered over the
/// response catalog, r(x, y) = g(x, y) - mean_y' g(x, y'), which leaves the
/// loss unchanged and pins that offset at zero.
struct RewardModel {
  int objective = 0;
  int feature_dim = 0;
  int responses = 0;
  Mlp net;

  Vector input(const Vector& x, ResponseId y) const;
  double raw_score(const Vector& x, ResponseId y) const;
  /// Centered scores of every catalog response at `x`.
  Vector scores(const Vector& x) const;
  double score(const Vector& x, ResponseId y) const;
};

struct RewardTrainConfig {
  int hidden = 16;
  double learning_rate = 1e-2;
  int epochs = 40;
  int batch_size = 32;
  double weight_decay = 0.0;
  bool zero_output_init = false;
};

struct RewardTrainResult {
  RewardModel model;
  std::vector<double> loss_history;  // mean loss per epoch
};

RewardModel init_reward_model(int objective, int feature_dim, int responses, int hidden, RandomState& rng,
                              bool zero_output = false);

/// Keeps the pairs' prompts and responses, orienting each so that `chosen`
/// is the response labeled preferred for `objective`.
std::vector<PreferencePair> project_to_objective(std::span<const MultiObjectivePreferencePair> pairs, int objective);

/// Mean of -log sigmoid(r(x, y+) - r(x, y-)); accumulates the gradient of
/// that mean into `grad` when non-null.
double reward_loss_and_grad(const RewardModel& model, std::span<const PreferencePair> pairs,
                            const Matrix& features, Vector* grad);

RewardTrainResult train_reward_model(std::span<const PreferencePair> pairs, int objective, const Matrix& features,
                                     int responses, const RewardTrainConfig& config, RandomState& rng);

/// Fraction of pairs where the model scores the chosen response higher.
double pairwise_accuracy(const RewardModel& model, std::span<const PreferencePair> pairs, const Matrix& features);

/// [r_1(x, y), ..., r_K(x, y)]; models[k] must be the model for objective k.
RewardVector reward_vector(std::span<const RewardModel> models, const Vector& x, ResponseId y);

/// Per-objective prompts x responses tables of model scores over a world.
std::vector<Matrix> reward_tables(std::span<const RewardModel> models, const World& world);

/// sum_k w_k r_k.
double scalarize(const RewardVector& r, const WeightVector& w);

/// sum_k w_k tables[k].row(prompt) over the catalog.
Vector scalarize_row(std::span<const Matrix> tables, int prompt, const WeightVector& w);

/// softmax(r / tau), the weights implied by a reward vector.
WeightVector normalize_weights(const RewardVector& r, double tau = kDefaultTemperature);

}  // namespace prolab
