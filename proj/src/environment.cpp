#include "prolab/environment.hpp"

#include "prolab/softmax.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace prolab {

namespace {

Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, RandomState& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  Matrix m(rows, cols);
  // fill row by row so the draw order does not depend on Eigen storage order
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal(rng);
  return m;
}

Vector gaussian_vector(Eigen::Index size, double stddev, RandomState& rng) {
  return gaussian_matrix(size, 1, stddev, rng).col(0);
}

std::pair<int, int> distinct_pair(int responses, RandomState& rng) {
  if (responses < 2) throw DataError("need at least two responses to form a pair");
  const int a = uniform_index(rng, responses);
  int b = uniform_index(rng, responses - 1);
  if (b >= a) ++b;
  return {a, b};
}

int draw_prompt(const World& world, std::span<const int> pool, RandomState& rng) {
  if (pool.empty()) return uniform_index(rng, world.prompts());
  return pool[static_cast<std::size_t>(uniform_index(rng, static_cast<int>(pool.size())))];
}

void check_prompt(const World& world, int prompt) {
  if (prompt < 0 || prompt >= world.prompts())
    throw DataError("prompt index " + std::to_string(prompt) + " out of range");
}

}  // namespace

void WorldConfig::validate() const {
  if (objectives < 2) throw ConfigError("need at least two objectives (K >= 2)");
  if (responses < 2) throw ConfigError("need at least two responses (|Y| >= 2)");
  if (prompts < 1) throw ConfigError("need at least one prompt");
  if (feature_dim < 1) throw ConfigError("feature dimension must be positive");
  if (embedding_dim < 1) throw ConfigError("embedding dimension must be positive");
  if (reward_family == RewardFamily::Network && reward_hidden < 1)
    throw ConfigError("reward network needs a positive hidden width");
  if (!(ref_floor > 0.0)) throw ConfigError("reference floor c must be positive");
  if (ref_floor * responses > 1.0 + 1e-12) throw ConfigError("reference floor c exceeds 1/|Y|");
  if (!(preference_noise >= 0.0)) throw ConfigError("preference noise must be non-negative");
  if (!std::isfinite(reward_scale)) throw ConfigError("reward scale must be finite");
  if (!(weight_sharpness >= 0.0)) throw ConfigError("weight sharpness must be non-negative");
  if (weight_family == WeightFamily::Constant && !constant_weight.empty()) {
    if (static_cast<int>(constant_weight.size()) != objectives)
      throw ConfigError("constant weight has the wrong number of entries");
    try {
      WeightVector(Eigen::Map<const Vector>(constant_weight.data(), objectives));
    } catch (const DataError& e) {
      throw ConfigError(std::string("constant weight is not on the simplex: ") + e.what());
    }
  }
}

Vector evaluate_reward_family(const WorldConfig& config, const RewardFamilyParams& params, int objective,
                              const Vector& x) {
  const auto k = static_cast<std::size_t>(objective);
  Vector scores(config.responses);
  if (config.reward_family == RewardFamily::Linear) {
    const Vector projected = params.maps[k] * x + params.offsets[k];
    scores = params.embeddings * projected / std::sqrt(2.0 * config.embedding_dim);
  } else {
    Vector input(config.feature_dim + config.embedding_dim);
    input.head(config.feature_dim) = x;
    for (int y = 0; y < config.responses; ++y) {
      input.tail(config.embedding_dim) = params.embeddings.row(y).transpose();
      const Vector hidden = (params.maps[k] * input + params.offsets[k]).array().tanh().matrix();
      scores[y] = params.readouts[k].dot(hidden) / std::sqrt(double(config.reward_hidden)) * 2.0;
    }
  }
  if (config.center_rewards || config.standardize_rewards) scores.array() -= scores.mean();
  if (config.standardize_rewards) {
    const double sd = std::sqrt(scores.squaredNorm() / double(scores.size()));
    if (sd > 0.0) scores /= sd;
  }
  return scores * config.reward_scale;
}

WeightVector evaluate_weight_family(const WorldConfig& config, const WeightFamilyParams& params,
                                    const Vector& x) {
  switch (config.weight_family) {
    case WeightFamily::Constant:
      return WeightVector(params.pieces.at(0));
    case WeightFamily::Piecewise:
      return WeightVector(params.pieces.at(x[0] >= 0.0 ? 0 : 1));
    case WeightFamily::Smooth:
      break;
  }
  return WeightVector(softmax(Vector(config.weight_sharpness * (params.map * x + params.bias))));
}

World build_world(const WorldConfig& config, std::uint64_t seed) {
  config.validate();
  RandomState rng(seed);
  World world;
  world.config = config;
  world.seed = seed;

  const int d = config.feature_dim;
  const int K = config.objectives;
  const int Y = config.responses;
  const int P = config.prompts;
  const int e = config.embedding_dim;

  world.features = gaussian_matrix(P, d, 1.0, rng);

  auto& rp = world.reward_params;
  rp.embeddings = gaussian_matrix(Y, e, 1.0, rng);
  for (int k = 0; k < K; ++k) {
    if (config.reward_family == RewardFamily::Linear) {
      rp.maps.push_back(gaussian_matrix(e, d, 1.0 / std::sqrt(double(d)), rng));
      rp.offsets.push_back(gaussian_vector(e, 1.0, rng));
    } else {
      rp.maps.push_back(gaussian_matrix(config.reward_hidden, d + e, 1.0 / std::sqrt(double(d + e)), rng));
      rp.offsets.push_back(gaussian_vector(config.reward_hidden, 0.5, rng));
      rp.readouts.push_back(gaussian_vector(config.reward_hidden, 1.0, rng));
    }
  }

  auto& wp = world.weight_params;
  switch (config.weight_family) {
    case WeightFamily::Constant:
      if (config.constant_weight.empty())
        wp.pieces.push_back(Vector::Constant(K, 1.0 / K));
      else
        wp.pieces.push_back(Eigen::Map<const Vector>(config.constant_weight.data(), K));
      break;
    case WeightFamily::Piecewise:
      for (int piece = 0; piece < 2; ++piece)
        wp.pieces.push_back(softmax(Vector(config.weight_sharpness * gaussian_vector(K, 1.0, rng))));
      break;
    case WeightFamily::Smooth:
      wp.map = gaussian_matrix(K, d, 1.0 / std::sqrt(double(d)), rng);
      wp.bias = gaussian_vector(K, 0.5, rng);
      break;
  }

  const double mix = 1.0 - config.ref_floor * Y;
  world.ref_policy.resize(P, Y);
  for (int i = 0; i < P; ++i) {
    const Vector raw = softmax(Vector(config.ref_concentration * gaussian_vector(Y, 1.0, rng)));
    world.ref_policy.row(i) = (mix * raw.array() + config.ref_floor).matrix().transpose();
    world.ref_policy.row(i) /= world.ref_policy.row(i).sum();
  }

  world.rewards.assign(static_cast<std::size_t>(K), Matrix(P, Y));
  world.true_weights.resize(P, K);
  for (int i = 0; i < P; ++i) {
    const Vector x = world.prompt_features(i);
    for (int k = 0; k < K; ++k)
      world.rewards[static_cast<std::size_t>(k)].row(i) = evaluate_reward_family(config, rp, k, x).transpose();
    world.true_weights.row(i) = evaluate_weight_family(config, wp, x).values().transpose();
  }
  return world;
}

RewardVector World::true_reward_vector(int prompt, ResponseId response) const {
  RewardVector r(objectives());
  for (int k = 0; k < objectives(); ++k) r[k] = rewards[static_cast<std::size_t>(k)](prompt, response);
  return r;
}

WeightVector World::true_weight(int prompt) const {
  return WeightVector(true_weights.row(prompt).transpose());
}

Vector World::scalarized_true_rewards(int prompt, const WeightVector& w) const {
  if (w.size() != objectives()) throw ArityError("weight vector length does not match K");
  Vector s = Vector::Zero(responses());
  for (int k = 0; k < objectives(); ++k) s += w[k] * rewards[static_cast<std::size_t>(k)].row(prompt).transpose();
  return s;
}

bool bradley_terry_prefers_first(double score_diff, double noise, RandomState& rng) {
  const double u = uniform01(rng);
  if (noise == 0.0) {
    if (score_diff == 0.0) return u < 0.5;
    return score_diff > 0.0;
  }
  return u < sigmoid(score_diff / noise);
}

PreferencePair sample_preference_pair(const World& world, int prompt_index, RandomState& rng) {
  check_prompt(world, prompt_index);
  const auto [a, b] = distinct_pair(world.responses(), rng);
  const Vector s = world.scalarized_true_rewards(prompt_index, world.true_weight(prompt_index));
  if (bradley_terry_prefers_first(s[a] - s[b], world.config.preference_noise, rng))
    return {prompt_index, a, b};
  return {prompt_index, b, a};
}

MultiObjectivePreferencePair sample_multiobjective_pair(const World& world, int prompt_index, RandomState& rng) {
  check_prompt(world, prompt_index);
  const auto [a, b] = distinct_pair(world.responses(), rng);
  MultiObjectivePreferencePair pair{prompt_index, a, b, {}};
  pair.labels.reserve(static_cast<std::size_t>(world.objectives()));
  for (int k = 0; k < world.objectives(); ++k) {
    const Matrix& table = world.rewards[static_cast<std::size_t>(k)];
    const double diff = table(prompt_index, a) - table(prompt_index, b);
    pair.labels.push_back(bradley_terry_prefers_first(diff, world.config.preference_noise, rng) ? 1 : 0);
  }
  return pair;
}

std::vector<PreferencePair> sample_preference_dataset(const World& world, int count, RandomState& rng,
                                                      std::span<const int> prompt_pool) {
  std::vector<PreferencePair> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) out.push_back(sample_preference_pair(world, draw_prompt(world, prompt_pool, rng), rng));
  return out;
}

std::vector<MultiObjectivePreferencePair> sample_multiobjective_dataset(const World& world, int count,
                                                                        RandomState& rng,
                                                                        std::span<const int> prompt_pool) {
  std::vector<MultiObjectivePreferencePair> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i)
    out.push_back(sample_multiobjective_pair(world, draw_prompt(world, prompt_pool, rng), rng));
  return out;
}

std::pair<std::vector<int>, std::vector<int>> split_prompts(int prompts, double held_out_fraction,
                                                            std::uint64_t seed) {
  std::vector<int> order(static_cast<std::size_t>(prompts));
  std::iota(order.begin(), order.end(), 0);
  RandomState rng(seed);
  for (int i = prompts - 1; i > 0; --i) std::swap(order[std::size_t(i)], order[std::size_t(uniform_index(rng, i + 1))]);
  const auto held = static_cast<std::size_t>(std::lround(held_out_fraction * prompts));
  std::vector<int> held_out(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(held));
  std::vector<int> train(order.begin() + static_cast<std::ptrdiff_t>(held), order.end());
  std::sort(held_out.begin(), held_out.end());
  std::sort(train.begin(), train.end());
  return {train, held_out};
}

}  // namespace prolab
