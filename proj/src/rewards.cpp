#include "prolab/rewards.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace prolab {

Vector RewardModel::input(const Vector& x, ResponseId y) const {
  if (x.size() != feature_dim) throw ArityError("prompt features have the wrong dimension");
  if (y < 0 || y >= responses) throw DataError("response id " + std::to_string(y) + " out of range");
  Vector in = Vector::Zero(feature_dim + responses);
  in.head(feature_dim) = x;
  in[feature_dim + y] = 1.0;
  return in;
}

double RewardModel::raw_score(const Vector& x, ResponseId y) const { return net.forward(input(x, y))[0]; }

Vector RewardModel::scores(const Vector& x) const {
  Vector out(responses);
  for (ResponseId y = 0; y < responses; ++y) out[y] = raw_score(x, y);
  out.array() -= out.mean();
  return out;
}

double RewardModel::score(const Vector& x, ResponseId y) const {
  if (y < 0 || y >= responses) throw DataError("response id " + std::to_string(y) + " out of range");
  return scores(x)[y];
}

RewardModel init_reward_model(int objective, int feature_dim, int responses, int hidden, RandomState& rng,
                              bool zero_output) {
  RewardModel model{objective, feature_dim, responses, Mlp(feature_dim + responses, hidden, 1)};
  model.net.initialize(rng, zero_output);
  return model;
}

std::vector<PreferencePair> project_to_objective(std::span<const MultiObjectivePreferencePair> pairs, int objective) {
  std::vector<PreferencePair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    if (objective < 0 || objective >= static_cast<int>(p.labels.size()))
      throw ArityError("objective index exceeds label count");
    if (p.labels[static_cast<std::size_t>(objective)])
      out.push_back({p.prompt_index, p.response_a, p.response_b});
    else
      out.push_back({p.prompt_index, p.response_b, p.response_a});
  }
  return out;
}

double reward_loss_and_grad(const RewardModel& model, std::span<const PreferencePair> pairs,
                            const Matrix& features, Vector* grad) {
  if (pairs.empty()) throw DataError("reward loss needs at least one pair");
  const double inv = 1.0 / static_cast<double>(pairs.size());
  Mlp::Activations pos, neg;
  Vector d_out(1);
  double loss = 0.0;
  for (const auto& p : pairs) {
    const Vector x = features.row(p.prompt_index).transpose();
    const double margin = model.net.forward(model.input(x, p.chosen), pos)[0] -
                          model.net.forward(model.input(x, p.rejected), neg)[0];
    loss -= log_sigmoid(margin);
    if (grad) {
      // d/dm of -log sigmoid(m) is -sigmoid(-m)
      d_out[0] = -sigmoid(-margin) * inv;
      model.net.backward(pos, d_out, *grad);
      d_out[0] = -d_out[0];
      model.net.backward(neg, d_out, *grad);
    }
  }
  return loss * inv;
}

RewardTrainResult train_reward_model(std::span<const PreferencePair> pairs, int objective, const Matrix& features,
                                     int responses, const RewardTrainConfig& config, RandomState& rng) {
  if (pairs.empty()) throw DataError("cannot train a reward model on an empty dataset");
  if (config.batch_size < 1 || config.epochs < 0) throw ParameterError("invalid batch size or epoch count");
  RewardTrainResult result{
      init_reward_model(objective, static_cast<int>(features.cols()), responses, config.hidden, rng,
                        config.zero_output_init),
      {}};
  RewardModel& model = result.model;
  Adam adam(model.net.parameter_count(), {.learning_rate = config.learning_rate, .weight_decay = config.weight_decay});

  std::vector<PreferencePair> shuffled(pairs.begin(), pairs.end());
  Vector grad(model.net.parameter_count());
  std::size_t step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < shuffled.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t len = std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), shuffled.size() - start);
      grad.setZero();
      const double loss = reward_loss_and_grad(model, std::span(shuffled).subspan(start, len), features, &grad);
      if (!std::isfinite(loss) || !grad.allFinite()) throw NumericalError("reward model loss diverged", step);
      adam.step(model.net.params(), grad);
      epoch_loss += loss * static_cast<double>(len);
      ++step;
    }
    result.loss_history.push_back(epoch_loss / static_cast<double>(shuffled.size()));
  }
  return result;
}

double pairwise_accuracy(const RewardModel& model, std::span<const PreferencePair> pairs, const Matrix& features) {
  if (pairs.empty()) throw DataError("accuracy needs at least one pair");
  std::size_t correct = 0;
  for (const auto& p : pairs) {
    const Vector x = features.row(p.prompt_index).transpose();
    if (model.raw_score(x, p.chosen) > model.raw_score(x, p.rejected)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(pairs.size());
}

RewardVector reward_vector(std::span<const RewardModel> models, const Vector& x, ResponseId y) {
  if (models.empty()) throw ArityError("no reward models given");
  RewardVector r(static_cast<Eigen::Index>(models.size()));
  for (std::size_t k = 0; k < models.size(); ++k) {
    if (models[k].objective != static_cast<int>(k))
      throw ArityError("reward model at position " + std::to_string(k) + " scores objective " +
                       std::to_string(models[k].objective));
    r[static_cast<Eigen::Index>(k)] = models[k].score(x, y);
  }
  return r;
}

std::vector<Matrix> reward_tables(std::span<const RewardModel> models, const World& world) {
  if (static_cast<int>(models.size()) != world.objectives())
    throw ArityError("expected " + std::to_string(world.objectives()) + " reward models, got " +
                     std::to_string(models.size()));
  std::vector<Matrix> tables(models.size(), Matrix(world.prompts(), world.responses()));
  for (std::size_t k = 0; k < models.size(); ++k) {
    if (models[k].objective != static_cast<int>(k))
      throw ArityError("reward model at position " + std::to_string(k) + " scores objective " +
                       std::to_string(models[k].objective));
    if (models[k].responses != world.responses()) throw ArityError("reward model catalog size does not match the world");
    for (int i = 0; i < world.prompts(); ++i) tables[k].row(i) = models[k].scores(world.prompt_features(i)).transpose();
  }
  return tables;
}

double scalarize(const RewardVector& r, const WeightVector& w) {
  if (r.size() != w.size())
    throw ArityError("reward vector has " + std::to_string(r.size()) + " entries but weights have " +
                     std::to_string(w.size()));
  return w.values().dot(r);
}

Vector scalarize_row(std::span<const Matrix> tables, int prompt, const WeightVector& w) {
  if (static_cast<int>(tables.size()) != w.size()) throw ArityError("table count does not match weight length");
  Vector s = Vector::Zero(tables.front().cols());
  for (std::size_t k = 0; k < tables.size(); ++k) s += w[static_cast<int>(k)] * tables[k].row(prompt).transpose();
  return s;
}

WeightVector normalize_weights(const RewardVector& r, double tau) {
  if (!(tau > 0.0)) throw ParameterError("temperature must be positive");
  if (r.size() == 0 || !r.allFinite()) throw DataError("reward vector is empty or non-finite");
  return WeightVector(softmax(r, tau));
}

}  // namespace prolab
