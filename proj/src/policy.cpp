#include "prolab/policy.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>

namespace prolab {

TabularPolicy::TabularPolicy(Matrix probabilities, double tolerance) : probs_(std::move(probabilities)) {
  for (Eigen::Index i = 0; i < probs_.rows(); ++i) {
    if (!probs_.row(i).allFinite() || (probs_.row(i).array() < 0.0).any())
      throw DataError("policy row " + std::to_string(i) + " has negative or non-finite entries");
    if (std::abs(probs_.row(i).sum() - 1.0) > tolerance)
      throw DataError("policy row " + std::to_string(i) + " does not sum to 1");
  }
}

TabularPolicy gibbs_policy_table(const Matrix& rewards, double beta, const Matrix& ref) {
  if (rewards.rows() != ref.rows() || rewards.cols() != ref.cols()) throw ArityError("reward and reference shapes differ");
  Matrix out(rewards.rows(), rewards.cols());
  for (Eigen::Index i = 0; i < rewards.rows(); ++i)
    out.row(i) = gibbs_policy(rewards.row(i).transpose(), beta, ref.row(i).transpose()).transpose();
  return TabularPolicy(std::move(out));
}

namespace {

double objective_at(const Vector& logits, const Vector& reward, double beta, const Vector& log_ref) {
  const Vector log_pi = log_softmax(logits);
  const Vector pi = log_pi.array().exp().matrix();
  return pi.dot(reward) - beta * pi.dot(log_pi - log_ref);
}

struct AscentDirection {
  Vector gradient;
  Vector direction;
};

AscentDirection ascent_direction(const Vector& logits, const Vector& reward, double beta, const Vector& log_ref,
                                 bool natural) {
  const Vector log_pi = log_softmax(logits);
  const Vector pi = log_pi.array().exp().matrix();
  const Vector a = reward - beta * (log_pi - log_ref);
  const Vector centered = (a.array() - pi.dot(a)).matrix();
  Vector g = (pi.array() * centered.array()).matrix();
  Vector d = natural ? centered : g;
  return {std::move(g), std::move(d)};
}

}  // namespace

PolicyOptimResult optimize_policy(const Matrix& rewards, double beta, const Matrix& ref,
                                  const PolicyOptimConfig& config, const PolicyStepObserver& observer) {
  if (!(beta > 0.0)) throw ParameterError("beta must be positive");
  if (rewards.rows() != ref.rows() || rewards.cols() != ref.cols()) throw ArityError("reward and reference shapes differ");
  if ((ref.array() <= 0.0).any()) throw DataError("reference policy must be strictly positive");

  const Eigen::Index P = rewards.rows();
  const Matrix log_ref = ref.array().log().matrix();
  Matrix logits = log_ref;
  Matrix probs = ref;
  Vector values(P);
  Vector steps = Vector::Constant(P, config.initial_step);
  std::vector<bool> done(static_cast<std::size_t>(P), false);

  for (Eigen::Index i = 0; i < P; ++i)
    values[i] = objective_at(logits.row(i).transpose(), rewards.row(i).transpose(), beta, log_ref.row(i).transpose());

  PolicyOptimResult result{TabularPolicy(ref), {values.mean()}, 0};
  if (observer) observer(0, probs);

  for (int step = 1; step <= config.max_steps; ++step) {
    bool any_active = false;
    for (Eigen::Index i = 0; i < P; ++i) {
      if (done[static_cast<std::size_t>(i)] && !config.run_all_steps) continue;
      const Vector theta = logits.row(i).transpose();
      const Vector r = rewards.row(i).transpose();
      const Vector lr = log_ref.row(i).transpose();
      const auto [g, d] = ascent_direction(theta, r, beta, lr, config.natural_gradient);
      if (!config.run_all_steps && g.cwiseAbs().maxCoeff() < config.gradient_tolerance) {
        done[static_cast<std::size_t>(i)] = true;
        continue;
      }
      any_active = true;
      const double slope = g.dot(d);
      double t = steps[i];
      bool accepted = false;
      for (int halving = 0; halving < 60; ++halving, t *= 0.5) {
        const Vector candidate = theta + t * d;
        const double v = objective_at(candidate, r, beta, lr);
        if (!std::isfinite(v)) throw NumericalError("policy objective became non-finite", std::size_t(step));
        if (v >= values[i] + config.armijo * t * slope) {
          accepted = v > values[i];
          logits.row(i) = candidate.transpose();
          values[i] = v;
          steps[i] = std::min(2.0 * t, config.max_step);
          break;
        }
      }
      if (!accepted) done[static_cast<std::size_t>(i)] = true;
      probs.row(i) = softmax(logits.row(i).transpose()).transpose();
    }
    result.objective_history.push_back(values.mean());
    result.steps = step;
    if (observer) observer(step, probs);
    if (!any_active && !config.run_all_steps) break;
  }
  result.policy = TabularPolicy(probs);
  return result;
}

Matrix fixed_reward_table(std::span<const Matrix> tables, const WeightVector& w) {
  if (static_cast<int>(tables.size()) != w.size()) throw ArityError("table count does not match weight length");
  Matrix out = Matrix::Zero(tables.front().rows(), tables.front().cols());
  for (std::size_t k = 0; k < tables.size(); ++k) out += w[static_cast<int>(k)] * tables[k];
  return out;
}

Matrix orchestrator_weights(const Orchestrator& orchestrator, const World& world) {
  if (orchestrator.objectives != world.objectives()) throw ArityError("orchestrator K does not match the world");
  Matrix out(world.prompts(), world.objectives());
  for (int i = 0; i < world.prompts(); ++i)
    out.row(i) = forward(orchestrator, world.prompt_features(i)).values().transpose();
  return out;
}

Matrix adaptive_reward_table(std::span<const Matrix> tables, const Orchestrator& orchestrator, const World& world) {
  const Matrix weights = orchestrator_weights(orchestrator, world);
  Matrix out = Matrix::Zero(world.prompts(), world.responses());
  for (std::size_t k = 0; k < tables.size(); ++k)
    out += (tables[k].array().colwise() * weights.col(static_cast<Eigen::Index>(k)).array()).matrix();
  return out;
}

PolicyOptimResult optimize_policy_fixed(const WeightVector& w, std::span<const RewardModel> models,
                                        const World& world, double beta, const PolicyOptimConfig& config) {
  const auto tables = reward_tables(models, world);
  return optimize_policy(fixed_reward_table(tables, w), beta, world.ref_policy, config);
}

PolicyOptimResult optimize_policy_adaptive(const Orchestrator& orchestrator, std::span<const RewardModel> models,
                                           const World& world, double beta, const PolicyOptimConfig& config) {
  const auto tables = reward_tables(models, world);
  return optimize_policy(adaptive_reward_table(tables, orchestrator, world), beta, world.ref_policy, config);
}

Vector ConditionedPolicy::input(const Vector& x, const WeightVector& w) const {
  if (x.size() != feature_dim) throw ArityError("prompt features have the wrong dimension");
  if (w.size() != objectives) throw ArityError("weight vector has the wrong length");
  Vector in(feature_dim + objectives);
  in << x, w.values();
  return in;
}

Vector ConditionedPolicy::probabilities(const Vector& x, const WeightVector& w) const {
  return softmax(net.forward(input(x, w)));
}

ConditionedPolicy init_conditioned_policy(int feature_dim, int objectives, int responses, int hidden,
                                          RandomState& rng) {
  ConditionedPolicy policy{feature_dim, objectives, responses, Mlp(feature_dim + objectives, hidden, responses)};
  policy.net.initialize(rng, /*zero_output=*/true);
  return policy;
}

double conditioned_nll_and_grad(const ConditionedPolicy& policy, std::span<const ConditionedRecord> records,
                                Vector* grad) {
  if (records.empty()) throw DataError("likelihood needs at least one record");
  const double inv = 1.0 / static_cast<double>(records.size());
  Mlp::Activations cache;
  double loss = 0.0;
  for (const auto& rec : records) {
    if (rec.response < 0 || rec.response >= policy.responses) throw DataError("response id out of range");
    const Vector log_p = log_softmax(policy.net.forward(policy.input(rec.features, rec.weights), cache));
    loss -= log_p[rec.response];
    if (grad) {
      Vector d_z = log_p.array().exp().matrix();
      d_z[rec.response] -= 1.0;
      policy.net.backward(cache, d_z * inv, *grad);
    }
  }
  return loss * inv;
}

std::vector<double> fit_conditioned(ConditionedPolicy& policy, std::span<const ConditionedRecord> records,
                                    const ConditionedTrainConfig& config, RandomState& rng) {
  if (records.empty()) throw DataError("cannot fit a conditioned policy without records");
  if (config.batch_size < 1 || config.epochs < 0) throw ParameterError("invalid batch size or epoch count");
  Adam adam(policy.net.parameter_count(), {.learning_rate = config.learning_rate, .weight_decay = config.weight_decay});
  std::vector<std::size_t> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<ConditionedRecord> batch;
  Vector grad(policy.net.parameter_count());
  std::vector<double> history;
  std::size_t step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(records[order[i]]);
      grad.setZero();
      const double loss = conditioned_nll_and_grad(policy, batch, &grad);
      if (!std::isfinite(loss) || !grad.allFinite()) throw NumericalError("conditioned policy loss diverged", step);
      adam.step(policy.net.params(), grad);
      epoch_loss += loss * static_cast<double>(end - start);
      ++step;
    }
    history.push_back(epoch_loss / static_cast<double>(order.size()));
  }
  return history;
}

ConditionedTrainResult fit_conditioned_offline(std::span<const ConditionedRecord> records, int responses,
                                               const ConditionedTrainConfig& config, RandomState& rng) {
  if (records.empty()) throw DataError("cannot fit a conditioned policy without records");
  const auto& first = records.front();
  ConditionedTrainResult result{
      init_conditioned_policy(static_cast<int>(first.features.size()), first.weights.size(), responses,
                              config.hidden, rng),
      {}};
  result.loss_history = fit_conditioned(result.policy, records, config, rng);
  return result;
}

std::vector<ConditionedRecord> build_offline_records(const World& world, std::span<const RewardModel> models,
                                                     std::span<const int> prompt_pool, int count, double tau,
                                                     RandomState& rng) {
  std::vector<ConditionedRecord> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int n = 0; n < count; ++n) {
    const int p = prompt_pool.empty()
                      ? uniform_index(rng, world.prompts())
                      : prompt_pool[static_cast<std::size_t>(uniform_index(rng, static_cast<int>(prompt_pool.size())))];
    const Vector x = world.prompt_features(p);
    const ResponseId y = sample_categorical(world.ref_policy.row(p).transpose(), rng);
    out.push_back({x, normalize_weights(reward_vector(models, x, y), tau), y});
  }
  return out;
}

OnlineResult online_refine(const ConditionedPolicy& policy, const Orchestrator& orchestrator,
                           std::span<const RewardModel> models, const World& world, std::span<const int> prompts,
                           const OnlineConfig& config, RandomState& rng) {
  if (config.candidates < 1) throw ParameterError("need at least one candidate per prompt (M >= 1)");
  if (prompts.empty()) throw DataError("online refinement needs prompts");
  const auto tables = reward_tables(models, world);

  struct PromptCache {
    Vector features;
    WeightVector weights;
    Vector scalarized;
  };
  std::vector<PromptCache> cache;
  cache.reserve(prompts.size());
  for (int p : prompts) {
    const Vector x = world.prompt_features(p);
    WeightVector w = forward(orchestrator, x);
    Vector s = scalarize_row(tables, p, w);
    cache.push_back({x, std::move(w), std::move(s)});
  }

  OnlineResult result{policy, {}};
  std::vector<ConditionedRecord> kept;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    kept.clear();
    OnlineEpochStats stats;
    for (int n = 0; n < config.prompts_per_epoch; ++n) {
      const auto& pc = cache[static_cast<std::size_t>(uniform_index(rng, static_cast<int>(cache.size())))];
      const Vector probs = result.policy.probabilities(pc.features, pc.weights);
      ResponseId best = -1;
      double best_score = -std::numeric_limits<double>::infinity();
      for (int m = 0; m < config.candidates; ++m) {
        const ResponseId y = sample_categorical(probs, rng);
        stats.mean_sampled_reward += pc.scalarized[y];
        if (pc.scalarized[y] > best_score) {
          best_score = pc.scalarized[y];
          best = y;
        }
      }
      stats.mean_kept_reward += best_score;
      kept.push_back({pc.features, pc.weights, best});
    }
    if (kept.empty()) break;
    stats.mean_sampled_reward /= double(config.prompts_per_epoch) * config.candidates;
    stats.mean_kept_reward /= double(config.prompts_per_epoch);
    const auto history = fit_conditioned(result.policy, kept, config.fit, rng);
    stats.loss = history.empty() ? 0.0 : history.back();
    for (const auto& pc : cache)
      stats.drift += total_variation(result.policy.probabilities(pc.features, pc.weights),
                                     policy.probabilities(pc.features, pc.weights));
    stats.drift /= double(cache.size());
    result.epochs.push_back(stats);
  }
  return result;
}

double mean_adapter_reward(const ConditionedPolicy& policy, const Orchestrator& orchestrator,
                           std::span<const Matrix> tables, const World& world, std::span<const int> prompts) {
  if (prompts.empty()) throw DataError("need at least one prompt");
  double total = 0.0;
  for (int p : prompts) {
    const Vector x = world.prompt_features(p);
    const WeightVector w = forward(orchestrator, x);
    total += policy.probabilities(x, w).dot(scalarize_row(tables, p, w));
  }
  return total / static_cast<double>(prompts.size());
}

std::string encode_weighted_prompt(std::string_view prompt_id, const WeightVector& w) {
  if (prompt_id.empty() || prompt_id.find_first_of(" \t\n\r") != std::string_view::npos)
    throw ParameterError("prompt id must be a non-empty token without whitespace");
  std::string out(prompt_id);
  char buf[64];
  for (int k = 0; k < w.size(); ++k) {
    out += " <W" + std::to_string(k + 1) + "> ";
    const auto res = std::to_chars(buf, buf + sizeof buf, w[k], std::chars_format::fixed, kWeightDecimals);
    out.append(buf, res.ptr);
  }
  return out;
}

DecodedPrompt decode_weighted_prompt(std::string_view encoding, int expected_objectives) {
  std::vector<std::string_view> tokens;
  std::size_t pos = 0;
  while (pos < encoding.size()) {
    const std::size_t start = encoding.find_first_not_of(' ', pos);
    if (start == std::string_view::npos) break;
    const std::size_t end = std::min(encoding.find(' ', start), encoding.size());
    tokens.push_back(encoding.substr(start, end - start));
    pos = end;
  }
  if (tokens.size() < 3 || tokens.size() % 2 == 0) throw ParseError("malformed weighted prompt: wrong token count");
  if (tokens[0].starts_with("<W")) throw ParseError("malformed weighted prompt: missing prompt id");
  const int K = static_cast<int>(tokens.size() - 1) / 2;
  if (expected_objectives > 0 && K != expected_objectives)
    throw ParseError("weighted prompt has " + std::to_string(K) + " weights, expected " +
                     std::to_string(expected_objectives));

  Vector values(K);
  for (int k = 0; k < K; ++k) {
    const std::string tag = "<W" + std::to_string(k + 1) + ">";
    if (tokens[std::size_t(1 + 2 * k)] != tag) throw ParseError("expected tag " + tag);
    const std::string_view text = tokens[std::size_t(2 + 2 * k)];
    double v = 0.0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size() || !std::isfinite(v) || v < 0.0)
      throw ParseError("bad weight value '" + std::string(text) + "'");
    values[k] = v;
  }
  const double tolerance = K * 0.5 * std::pow(10.0, -kWeightDecimals) + 1e-12;
  if (std::abs(values.sum() - 1.0) > tolerance) throw ParseError("weights are off the simplex");
  return {std::string(tokens[0]), WeightVector(values, tolerance)};
}

}  // namespace prolab
