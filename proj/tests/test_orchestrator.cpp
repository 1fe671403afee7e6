#include "prolab/orchestrator.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace prolab;

namespace {

double oracle_kl_loss(const Orchestrator& o, std::span<const WeightExample> batch) {
  double total = 0.0;
  for (const auto& ex : batch) {
    const Vector z = o.net.forward(ex.features);
    const Vector p = (z.array() - z.maxCoeff()).exp().matrix() / (z.array() - z.maxCoeff()).exp().sum();
    for (Eigen::Index k = 0; k < p.size(); ++k)
      total += p[k] * (std::log(p[k]) - std::log(std::max(ex.target.values()[k], 1e-12)));
  }
  return total / double(batch.size());
}

std::vector<WeightExample> random_examples(int n, int d, int K, double sharpness, RandomState& rng) {
  std::normal_distribution<double> normal;
  std::vector<WeightExample> out;
  for (int i = 0; i < n; ++i) {
    Vector x(d), logits(K);
    for (auto& v : x) v = normal(rng);
    for (auto& v : logits) v = sharpness * normal(rng);
    out.push_back({x, WeightVector(softmax(logits))});
  }
  return out;
}

std::vector<WeightExample> smooth_examples(const World& world, int n, RandomState& rng) {
  std::normal_distribution<double> normal;
  std::vector<WeightExample> out;
  for (int i = 0; i < n; ++i) {
    Vector x(world.feature_dim());
    for (auto& v : x) v = normal(rng);
    out.push_back({x, evaluate_weight_family(world.config, world.weight_params, x)});
  }
  return out;
}

double mean_kl(const Orchestrator& o, std::span<const WeightExample> examples) {
  return kl_loss_and_grad(o, examples, nullptr);
}

}  // namespace

TEST_CASE("initialization") {
  RandomState a(1), b(1);
  const Orchestrator o1 = init_orchestrator(4, 3, 16, a);
  const Orchestrator o2 = init_orchestrator(4, 3, 16, b);
  CHECK(o1.net.params() == o2.net.params());

  RandomState c(2);
  const Orchestrator zero = init_orchestrator(4, 3, 16, c, true);
  for (int i = 0; i < 20; ++i) {
    const WeightVector w = forward(zero, Vector::Random(4));
    for (int k = 0; k < 3; ++k) CHECK(w[k] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  }

  std::normal_distribution<double> normal;
  RandomState rng(3);
  double sum = 0.0, sq = 0.0;
  int count = 0;
  for (int i = 0; i < 2000; ++i) {
    Vector x(4);
    for (auto& v : x) v = normal(rng);
    const Vector pre = o1.net.w1() * x + o1.net.b1();
    sum += pre.sum();
    sq += pre.squaredNorm();
    count += int(pre.size());
  }
  const double sd = std::sqrt(sq / count - (sum / count) * (sum / count));
  CHECK(sd >= 0.1);
  CHECK(sd <= 3.0);
}

TEST_CASE("forward lands strictly inside the simplex") {
  RandomState rng(4);
  const Orchestrator o = init_orchestrator(5, 4, 8, rng);
  for (int i = 0; i < 1000; ++i) {
    const Vector w = forward(o, 3.0 * Vector::Random(5)).values();
    CHECK(std::abs(w.sum() - 1.0) < 1e-9);
    CHECK(w.minCoeff() > 0.0);
  }
  CHECK_THROWS_AS(forward(o, Vector::Zero(4)), ArityError);
}

TEST_CASE("kl loss value, sign and zero at the target") {
  RandomState rng(5);
  const Orchestrator o = init_orchestrator(3, 3, 8, rng);
  auto batch = random_examples(20, 3, 3, 2.0, rng);
  CHECK(mean_kl(o, batch) >= 0.0);
  CHECK(mean_kl(o, batch) == doctest::Approx(oracle_kl_loss(o, batch)).epsilon(1e-12));

  for (auto& ex : batch) ex.target = forward(o, ex.features);
  Vector grad = Vector::Zero(o.net.parameter_count());
  CHECK(std::abs(kl_loss_and_grad(o, batch, &grad)) < 1e-14);
  CHECK(grad.cwiseAbs().maxCoeff() < 1e-12);

  // argument order: KL(prediction || target)
  std::vector<WeightExample> one{{Vector::Zero(3), WeightVector((Vector(3) << 0.7, 0.2, 0.1).finished())}};
  RandomState zr(6);
  const Orchestrator uniform = init_orchestrator(3, 3, 4, zr, true);
  double expected = 0.0;
  for (double q : {0.7, 0.2, 0.1}) expected += (1.0 / 3.0) * std::log((1.0 / 3.0) / q);
  CHECK(mean_kl(uniform, one) == doctest::Approx(expected));
}

TEST_CASE("kl loss gradient matches finite differences") {
  RandomState rng(7);
  for (int point = 0; point < 10; ++point) {
    const Orchestrator o = init_orchestrator(4, 3, 10, rng);
    const auto batch = random_examples(16, 4, 3, 3.0, rng);
    Vector grad = Vector::Zero(o.net.parameter_count());
    kl_loss_and_grad(o, batch, &grad);
    const Vector fd = finite_difference_gradient(
        [&](const Vector& params) {
          Orchestrator probe = o;
          probe.net.set_params(params);
          return oracle_kl_loss(probe, batch);
        },
        o.net.params());
    CHECK(relative_error(grad, fd) < 1e-4);
  }
}

TEST_CASE("near one-hot targets stay finite through the clamp") {
  RandomState rng(8);
  const Orchestrator o = init_orchestrator(2, 2, 4, rng);
  const std::vector<WeightExample> batch{{Vector::Ones(2), WeightVector((Vector(2) << 1.0, 0.0).finished())}};
  Vector grad = Vector::Zero(o.net.parameter_count());
  const double loss = kl_loss_and_grad(o, batch, &grad);
  CHECK(std::isfinite(loss));
  CHECK(grad.allFinite());
  CHECK(loss == doctest::Approx(oracle_kl_loss(o, batch)).epsilon(1e-12));
}

TEST_CASE("off-simplex targets are rejected") {
  RandomState rng(9);
  const Orchestrator o = init_orchestrator(2, 2, 4, rng);
  const std::vector<WeightExample> batch{{Vector::Ones(2), WeightVector((Vector(2) << 0.5, 0.5001).finished(), 1e-3)}};
  CHECK_THROWS_AS(kl_loss_and_grad(o, batch, nullptr), DataError);
  CHECK_THROWS_AS(train_orchestrator({}, {}, rng), DataError);
}

TEST_CASE("default hyperparameters") {
  const OrchestratorTrainConfig c;
  CHECK(c.learning_rate == 1e-5);
  CHECK(c.batch_size == 32);
  CHECK(kKlLogFloor == 1e-12);
}

TEST_CASE("constant targets are fit") {
  RandomState rng(10);
  const WeightVector target((Vector(3) << 0.6, 0.3, 0.1).finished());
  std::vector<WeightExample> examples;
  for (auto& ex : random_examples(256, 4, 3, 1.0, rng)) examples.push_back({ex.features, target});
  const auto result = train_orchestrator(examples, {.learning_rate = 1e-2, .epochs = 60}, rng);
  CHECK(result.loss_history.back() < 1e-3);
  for (int i = 0; i < 50; ++i) CHECK(total_variation(forward(result.params, Vector::Random(4)).values(), target.values()) < 0.01);

  const auto& h = result.loss_history;
  for (std::size_t e = 5; e + 5 <= h.size(); e += 5)
    CHECK(std::accumulate(h.begin() + long(e), h.begin() + long(e + 5), 0.0) <=
          std::accumulate(h.begin() + long(e - 5), h.begin() + long(e), 0.0) + 1e-9);
}

TEST_CASE("generalization error shrinks with more samples") {
  const World world = build_world(WorldConfig{}, 11);
  std::vector<double> small, large;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    RandomState rng(seed);
    const auto test = smooth_examples(world, 500, rng);
    const auto train = smooth_examples(world, 1000, rng);
    const OrchestratorTrainConfig cfg{.learning_rate = 1e-2, .epochs = 40};
    RandomState r1(seed * 3), r2(seed * 3);
    small.push_back(mean_kl(train_orchestrator(std::span(train).first(100), cfg, r1).params, test));
    large.push_back(mean_kl(train_orchestrator(train, cfg, r2).params, test));
  }
  std::sort(small.begin(), small.end());
  std::sort(large.begin(), large.end());
  CHECK(large[2] < small[2]);
}

TEST_CASE("permuting objectives permutes the trained map") {
  RandomState data(12);
  const auto examples = random_examples(200, 3, 3, 1.5, data);
  const std::vector<int> perm{2, 0, 1};
  std::vector<WeightExample> permuted;
  for (const auto& ex : examples) {
    Vector t(3);
    for (int k = 0; k < 3; ++k) t[k] = ex.target[perm[std::size_t(k)]];
    permuted.push_back({ex.features, WeightVector(t)});
  }
  const OrchestratorTrainConfig cfg{.learning_rate = 1e-2, .epochs = 5, .zero_output_init = true};
  RandomState a(13), b(13);
  const Orchestrator base = train_orchestrator(examples, cfg, a).params;
  const Orchestrator perm_model = train_orchestrator(permuted, cfg, b).params;
  for (int i = 0; i < 20; ++i) {
    const Vector x = Vector::Random(3);
    const Vector w = forward(base, x).values();
    const Vector wp = forward(perm_model, x).values();
    for (int k = 0; k < 3; ++k) CHECK(std::abs(wp[k] - w[perm[std::size_t(k)]]) < 1e-10);
  }
}

TEST_CASE("targets from identical models are uniform") {
  const World world = build_world(WorldConfig{}, 14);
  RandomState rng(15);
  RewardModel first = init_reward_model(0, world.feature_dim(), world.responses(), 8, rng);
  RewardModel second = first;
  second.objective = 1;
  const std::vector<RewardModel> models{first, second};
  const auto pairs = sample_preference_dataset(world, 100, rng);
  for (const auto& t : build_targets(pairs, models, world)) {
    CHECK(t.target[0] == doctest::Approx(0.5).epsilon(1e-15));
  }
}

TEST_CASE("targets are normalize_weights of the chosen response's reward vector") {
  const World world = build_world(WorldConfig{}, 16);
  RandomState rng(17);
  const std::vector<RewardModel> models{init_reward_model(0, 4, 16, 8, rng), init_reward_model(1, 4, 16, 8, rng)};
  const auto pairs = sample_preference_dataset(world, 200, rng);
  const auto targets = build_targets(pairs, models, world, 0.3);
  REQUIRE(targets.size() == pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    CHECK(targets[i].prompt_index == pairs[i].prompt_index);
    const Vector x = world.prompt_features(pairs[i].prompt_index);
    const Vector expected = normalize_weights(reward_vector(models, x, pairs[i].chosen), 0.3).values();
    CHECK((targets[i].target.values() - expected).cwiseAbs().maxCoeff() == 0.0);
  }
  const auto examples = to_examples(targets, world);
  CHECK(examples[7].features == world.prompt_features(targets[7].prompt_index));
}

TEST_CASE("a dominant objective shows up in the mean target") {
  WorldConfig c;
  c.weight_family = WeightFamily::Constant;
  c.constant_weight = {0.9, 0.1};
  const World world = build_world(c, 18);
  RandomState rng(19);
  const auto mo = sample_multiobjective_dataset(world, 8000, rng);
  std::vector<RewardModel> models;
  for (int k = 0; k < 2; ++k)
    models.push_back(train_reward_model(project_to_objective(mo, k), k, world.features, world.responses(), {.epochs = 20}, rng).model);
  const auto targets = build_targets(sample_preference_dataset(world, 2000, rng), models, world);
  double mean_w1 = 0.0;
  for (const auto& t : targets) mean_w1 += t.target[0];
  CHECK(mean_w1 / double(targets.size()) > 0.5);
}
