#pragma once

#include "prolab/core.hpp"

#include <span>
#include <vector>

namespace prolab {

enum class RewardFamily { Linear, Network };
enum class WeightFamily { Constant, Piecewise, Smooth };

struct WorldConfig {
  int feature_dim = 4;
  int objectives = 2;
  int responses = 16;
  int prompts = 64;

  RewardFamily reward_family = RewardFamily::Linear;
  int embedding_dim = 4;
  int reward_hidden = 8;  // network family only
  double reward_scale = 1.0;
  bool center_rewards = true;  // subtract the catalog mean per prompt and objective
  /// Also divide by the catalog standard deviation, so every objective has
  /// the same spread (reward_scale) at every prompt.
  bool standardize_rewards = true;

  WeightFamily weight_family = WeightFamily::Smooth;
  std::vector<double> constant_weight;  // constant family; empty means uniform
  double weight_sharpness = 2.0;

  double ref_floor = 0.01;  // c: every reference probability is >= c
  double ref_concentration = 1.0;

  /// Scale of the Bradley-Terry logit; 0 makes preferences deterministic.
  double preference_noise = 1.0;

  void validate() const;
};

/// Parameters of the ground-truth reward functions. Responses carry a random
/// embedding; the linear family scores emb(y) . (A_k x + b_k), the network
/// family v_k . tanh(W_k [x; emb(y)] + c_k).
struct RewardFamilyParams {
  Matrix embeddings;             // responses x embedding_dim
  std::vector<Matrix> maps;      // A_k or W_k
  std::vector<Vector> offsets;   // b_k or c_k
  std::vector<Vector> readouts;  // v_k (network family only)
};

/// constant: pieces[0]; piecewise: pieces[x_0 >= 0 ? 0 : 1];
/// smooth: softmax(sharpness * (map x + bias)).
struct WeightFamilyParams {
  Matrix map;
  Vector bias;
  std::vector<Vector> pieces;
};

struct World {
  WorldConfig config;
  std::uint64_t seed = 0;

  Matrix features;              // prompts x feature_dim
  std::vector<Matrix> rewards;  // one prompts x responses table per objective
  Matrix ref_policy;            // prompts x responses
  Matrix true_weights;          // prompts x objectives
  RewardFamilyParams reward_params;
  WeightFamilyParams weight_params;

  int objectives() const { return config.objectives; }
  int responses() const { return config.responses; }
  int prompts() const { return config.prompts; }
  int feature_dim() const { return config.feature_dim; }

  Vector prompt_features(int prompt) const { return features.row(prompt).transpose(); }
  RewardVector true_reward_vector(int prompt, ResponseId response) const;
  WeightVector true_weight(int prompt) const;
  /// sum_k w_k r_k(x, y) over the whole catalog.
  Vector scalarized_true_rewards(int prompt, const WeightVector& w) const;
};

World build_world(const WorldConfig& config, std::uint64_t seed);

/// Ground-truth reward of objective k for every catalog response at `x`.
Vector evaluate_reward_family(const WorldConfig& config, const RewardFamilyParams& params, int objective,
                              const Vector& x);
WeightVector evaluate_weight_family(const WorldConfig& config, const WeightFamilyParams& params,
                                    const Vector& x);

struct PreferencePair {
  int prompt_index = 0;
  ResponseId chosen = 0;
  ResponseId rejected = 0;

  bool operator==(const PreferencePair&) const = default;
};

/// labels[k] == 1 means response_a is preferred for objective k.
struct MultiObjectivePreferencePair {
  int prompt_index = 0;
  ResponseId response_a = 0;
  ResponseId response_b = 0;
  std::vector<int> labels;

  bool operator==(const MultiObjectivePreferencePair&) const = default;
};

/// True with probability sigmoid(score_diff / noise); a hard decision when
/// noise is zero (ties broken by a fair coin).
bool bradley_terry_prefers_first(double score_diff, double noise, RandomState& rng);

PreferencePair sample_preference_pair(const World& world, int prompt_index, RandomState& rng);
MultiObjectivePreferencePair sample_multiobjective_pair(const World& world, int prompt_index, RandomState& rng);

/// `count` pairs with prompts drawn uniformly from `prompt_pool` (all prompts when empty).
std::vector<PreferencePair> sample_preference_dataset(const World& world, int count, RandomState& rng,
                                                      std::span<const int> prompt_pool = {});
std::vector<MultiObjectivePreferencePair> sample_multiobjective_dataset(const World& world, int count,
                                                                        RandomState& rng,
                                                                        std::span<const int> prompt_pool = {});

/// Deterministic split of prompt indices into (train, held_out).
std::pair<std::vector<int>, std::vector<int>> split_prompts(int prompts, double held_out_fraction,
                                                            std::uint64_t seed);

}  // namespace prolab
