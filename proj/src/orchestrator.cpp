#include "prolab/orchestrator.hpp"

#include "prolab/softmax.hpp"

#include <algorithm>
#include <cmath>

namespace prolab {

Vector Orchestrator::logits(const Vector& x) const {
  if (x.size() != feature_dim) throw ArityError("prompt features have the wrong dimension");
  return net.forward(x);
}

Orchestrator init_orchestrator(int feature_dim, int objectives, int hidden, RandomState& rng, bool zero_output) {
  if (feature_dim < 1 || objectives < 1 || hidden < 1) throw ParameterError("orchestrator dimensions must be >= 1");
  Orchestrator o{feature_dim, objectives, kDefaultTemperature, Mlp(feature_dim, hidden, objectives)};
  o.net.initialize(rng, zero_output);
  return o;
}

WeightVector forward(const Orchestrator& orchestrator, const Vector& x) {
  return WeightVector(softmax(orchestrator.logits(x)));
}

std::vector<WeightTargetRecord> build_targets(std::span<const PreferencePair> pairs,
                                              std::span<const RewardModel> models, const World& world, double tau) {
  if (static_cast<int>(models.size()) != world.objectives())
    throw ArityError("expected one reward model per objective");
  std::vector<WeightTargetRecord> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    const RewardVector r = reward_vector(models, world.prompt_features(p.prompt_index), p.chosen);
    out.push_back({p.prompt_index, normalize_weights(r, tau)});
  }
  return out;
}

std::vector<WeightExample> to_examples(std::span<const WeightTargetRecord> targets, const World& world) {
  std::vector<WeightExample> out;
  out.reserve(targets.size());
  for (const auto& t : targets) out.push_back({world.prompt_features(t.prompt_index), t.target});
  return out;
}

double kl_loss_and_grad(const Orchestrator& orchestrator, std::span<const WeightExample> batch, Vector* grad) {
  if (batch.empty()) throw DataError("KL loss needs a non-empty batch");
  const double inv = 1.0 / static_cast<double>(batch.size());
  Mlp::Activations cache;
  double loss = 0.0;
  for (const auto& ex : batch) {
    const Vector& q = ex.target.values();
    if (q.size() != orchestrator.objectives) throw ArityError("target length does not match K");
    if (std::abs(q.sum() - 1.0) > 1e-6 || (q.array() < -1e-6).any()) throw DataError("target is off the simplex");
    if (ex.features.size() != orchestrator.feature_dim) throw ArityError("prompt features have the wrong dimension");

    const Vector z = orchestrator.net.forward(ex.features, cache);
    const Vector log_p = log_softmax(z);
    const Vector p = log_p.array().exp().matrix();
    const Vector log_q = q.array().max(kKlLogFloor).log().matrix();
    const Vector g = log_p - log_q;
    loss += p.dot(g);
    if (grad) {
      // d/dz of sum p (log p - log q) = p * (g - <p, g>)
      const Vector d_z = (p.array() * (g.array() - p.dot(g))).matrix() * inv;
      orchestrator.net.backward(cache, d_z, *grad);
    }
  }
  return loss * inv;
}

OrchestratorTrainResult train_orchestrator(std::span<const WeightExample> examples,
                                           const OrchestratorTrainConfig& config, RandomState& rng, double tau) {
  if (examples.empty()) throw DataError("cannot train the orchestrator without targets");
  if (config.batch_size < 1 || config.epochs < 0) throw ParameterError("invalid batch size or epoch count");
  const int d = static_cast<int>(examples.front().features.size());
  const int K = examples.front().target.size();
  OrchestratorTrainResult result{init_orchestrator(d, K, config.hidden, rng, config.zero_output_init), {}};
  result.params.tau = tau;
  Orchestrator& model = result.params;
  Adam adam(model.net.parameter_count(), {.learning_rate = config.learning_rate, .weight_decay = config.weight_decay});

  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<WeightExample> batch;
  Vector grad(model.net.parameter_count());
  std::size_t step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(examples[order[i]]);
      grad.setZero();
      const double loss = kl_loss_and_grad(model, batch, &grad);
      if (!std::isfinite(loss) || !grad.allFinite()) throw NumericalError("orchestrator loss diverged", step);
      adam.step(model.net.params(), grad);
      epoch_loss += loss * static_cast<double>(end - start);
      ++step;
    }
    result.loss_history.push_back(epoch_loss / static_cast<double>(order.size()));
  }
  return result;
}

}  // namespace prolab
