#include "prolab/policy.hpp"

#include <doctest.h>

#include <cmath>

using namespace prolab;

namespace {

Vector random_simplex(int n, RandomState& rng, double spread = 1.0) {
  std::normal_distribution<double> normal;
  Vector z(n);
  for (auto& v : z) v = spread * normal(rng);
  return softmax(z);
}

Vector random_rewards(int n, RandomState& rng) {
  std::normal_distribution<double> normal;
  Vector r(n);
  for (auto& v : r) v = normal(rng);
  return r;
}

double enumerate_value(const Vector& pi, const Vector& r, double beta, const Vector& ref) {
  double v = 0.0;
  for (Eigen::Index y = 0; y < pi.size(); ++y)
    if (pi[y] > 0.0) v += pi[y] * r[y] - beta * pi[y] * std::log(pi[y] / ref[y]);
  return v;
}

World small_world(int prompts, std::uint64_t seed) {
  WorldConfig c;
  c.prompts = prompts;
  return build_world(c, seed);
}

double conditioned_oracle_nll(const ConditionedPolicy& policy, std::span<const ConditionedRecord> records) {
  double total = 0.0;
  for (const auto& rec : records) {
    Vector in(rec.features.size() + rec.weights.size());
    in << rec.features, rec.weights.values();
    const Vector z = policy.net.forward(in);
    const double m = z.maxCoeff();
    total += -(z[rec.response] - m - std::log((z.array() - m).exp().sum()));
  }
  return total / double(records.size());
}

}  // namespace

TEST_CASE("kl-regularized value") {
  const Vector ref = (Vector(4) << 0.1, 0.2, 0.3, 0.4).finished();
  const Vector r = (Vector(4) << 1.0, -0.5, 0.25, 2.0).finished();
  CHECK(kl_regularized_value(ref, r, 0.3, ref) == doctest::Approx(ref.dot(r)).epsilon(1e-15));

  const Vector pi = (Vector(4) << 0.4, 0.1, 0.1, 0.4).finished();
  const double by_hand = 0.4 * 1.0 + 0.1 * -0.5 + 0.1 * 0.25 + 0.4 * 2.0 -
                         0.3 * (0.4 * std::log(0.4 / 0.1) + 0.1 * std::log(0.1 / 0.2) + 0.1 * std::log(0.1 / 0.3) +
                                0.4 * std::log(0.4 / 0.4));
  CHECK(std::abs(kl_regularized_value(pi, r, 0.3, ref) - by_hand) < 1e-12);

  CHECK_THROWS_AS(kl_regularized_value(pi, r, 0.0, ref), ParameterError);
  const Vector hole = (Vector(4) << 0.0, 0.2, 0.4, 0.4).finished();
  CHECK_THROWS_AS(kl_regularized_value(pi, r, 0.3, hole), NumericalError);
  CHECK_THROWS_AS(kl_regularized_value(pi, Vector(Vector::Zero(3)), 0.3, ref), ArityError);
}

TEST_CASE("gibbs policy closed forms") {
  const Vector ref = (Vector(3) << 0.2, 0.5, 0.3).finished();
  const Vector constant = Vector::Constant(3, 4.2);
  CHECK((gibbs_policy(constant, 0.1, ref) - ref).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(kl_regularized_value(gibbs_policy(constant, 0.1, ref), constant, 0.1, ref) == doctest::Approx(4.2));

  const double beta = 0.37;
  const Vector two = gibbs_policy((Vector(2) << beta * std::log(2.0), 0.0).finished(), beta, Vector::Constant(2, 0.5));
  CHECK(two[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  CHECK(two[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));

  const Vector r = (Vector(3) << 1.0, -1.0, 0.5).finished();
  CHECK(total_variation(gibbs_policy(r, 1e6, ref), ref) < 1e-4);

  const Vector huge = (Vector(3) << 1e4, 0.0, -1e4).finished();
  CHECK(gibbs_policy(huge, 1e-3, ref).allFinite());
  CHECK_THROWS_AS(gibbs_policy(r, 0.0, ref), ParameterError);
  CHECK_THROWS_AS(gibbs_policy(r, -1.0, ref), ParameterError);
}

TEST_CASE("gibbs policy is optimal") {
  RandomState rng(1);
  for (int n : {2, 5, 12, 20}) {
    const Vector ref = random_simplex(n, rng);
    const Vector r = random_rewards(n, rng);
    const double beta = 0.05 + uniform01(rng);
    const Vector star = gibbs_policy(r, beta, ref);
    const double best = kl_regularized_value(star, r, beta, ref);
    CHECK(best == doctest::Approx(enumerate_value(star, r, beta, ref)).epsilon(1e-12));
    for (int trial = 0; trial < 1000; ++trial)
      CHECK(kl_regularized_value(random_simplex(n, rng, 3.0), r, beta, ref) <= best + 1e-12);
    for (int y = 0; y < n; ++y) CHECK(kl_regularized_value(Vector(Vector::Unit(n, y)), r, beta, ref) <= best + 1e-12);
  }
}

TEST_CASE("scaling rewards and beta together leaves the gibbs policy unchanged") {
  RandomState rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const Vector ref = random_simplex(8, rng);
    const Vector r = random_rewards(8, rng);
    const double beta = 0.1 + uniform01(rng), alpha = 0.1 + 10.0 * uniform01(rng);
    CHECK((gibbs_policy(Vector(alpha * r), alpha * beta, ref) - gibbs_policy(r, beta, ref)).cwiseAbs().maxCoeff() <
          1e-14);
  }
}

TEST_CASE("the gibbs policy of w beats the gibbs policy of any other weight under w") {
  RandomState rng(3);
  const Vector ref = random_simplex(10, rng);
  const Matrix tables = (Matrix(3, 10) << random_rewards(10, rng).transpose(), random_rewards(10, rng).transpose(),
                         random_rewards(10, rng).transpose())
                            .finished();
  const double beta = 0.2;
  for (int trial = 0; trial < 200; ++trial) {
    const Vector w = random_simplex(3, rng), v = random_simplex(3, rng);
    const Vector rw = tables.transpose() * w, rv = tables.transpose() * v;
    const double own = kl_regularized_value(gibbs_policy(rw, beta, ref), rw, beta, ref);
    const double other = kl_regularized_value(gibbs_policy(rv, beta, ref), rw, beta, ref);
    CHECK(own >= other - 1e-9);
    if ((rw - rv).array().abs().maxCoeff() > 1e-3 && ((rw - rv).array() - (rw - rv).mean()).abs().maxCoeff() > 1e-3)
      CHECK(own > other);
  }
}

TEST_CASE("gradient ascent converges to the gibbs policy") {
  RandomState rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const int prompts = 3, n = 2 + uniform_index(rng, 19);
    Matrix rewards(prompts, n), ref(prompts, n);
    for (int i = 0; i < prompts; ++i) {
      rewards.row(i) = random_rewards(n, rng).transpose();
      ref.row(i) = random_simplex(n, rng).transpose();
    }
    const double beta = trial % 2 ? 0.05 : 1.0;
    for (bool natural : {true, false}) {
      if (!natural && beta < 1.0) continue;
      PolicyOptimConfig cfg;
      cfg.natural_gradient = natural;
      cfg.max_steps = natural ? 20000 : 200000;
      const auto result = optimize_policy(rewards, beta, ref, cfg);
      const TabularPolicy oracle = gibbs_policy_table(rewards, beta, ref);
      for (int i = 0; i < prompts; ++i) CHECK(total_variation(result.policy.row(i), oracle.row(i)) < 1e-3);
      for (std::size_t s = 1; s < result.objective_history.size(); ++s)
        CHECK(result.objective_history[s] >= result.objective_history[s - 1] - 1e-12);
    }
  }
}

TEST_CASE("fixed and adaptive optimization") {
  const World world = small_world(8, 5);
  RandomState rng(6);
  const std::vector<RewardModel> models{init_reward_model(0, 4, 16, 8, rng), init_reward_model(1, 4, 16, 8, rng)};
  const auto tables = reward_tables(models, world);
  const double beta = 0.1;

  const Orchestrator flat = init_orchestrator(4, 2, 8, rng, true);
  const auto fixed = optimize_policy_fixed(WeightVector::uniform(2), models, world, beta);
  const auto adaptive_flat = optimize_policy_adaptive(flat, models, world, beta);
  CHECK((fixed.policy.probabilities() - adaptive_flat.policy.probabilities()).cwiseAbs().maxCoeff() < 1e-12);

  const Orchestrator orch = init_orchestrator(4, 2, 8, rng);
  const auto adaptive = optimize_policy_adaptive(orch, models, world, beta);
  for (int i = 0; i < world.prompts(); ++i) {
    const Vector r = scalarize_row(tables, i, forward(orch, world.prompt_features(i)));
    CHECK(total_variation(adaptive.policy.row(i), gibbs_policy(r, beta, world.ref_policy.row(i).transpose())) < 1e-3);
  }

  const Matrix w = orchestrator_weights(orch, world);
  CHECK(w.rows() == world.prompts());
  CHECK((w.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(fixed_reward_table(tables, WeightVector::uniform(3)), ArityError);
}

TEST_CASE("different adapter weights give different optimal rows on identical tables") {
  std::vector<Matrix> tables{(Matrix(2, 3) << 1.0, 0.0, 0.2, 1.0, 0.0, 0.2).finished(),
                             (Matrix(2, 3) << 0.0, 1.0, 0.2, 0.0, 1.0, 0.2).finished()};
  Matrix weights(2, 2);
  weights << 0.9, 0.1, 0.1, 0.9;
  Matrix reward = Matrix::Zero(2, 3);
  for (int k = 0; k < 2; ++k) reward += (tables[std::size_t(k)].array().colwise() * weights.col(k).array()).matrix();
  const Matrix ref = Matrix::Constant(2, 3, 1.0 / 3.0);
  const auto result = optimize_policy(reward, 0.1, ref);
  Eigen::Index a, b;
  result.policy.probabilities().row(0).maxCoeff(&a);
  result.policy.probabilities().row(1).maxCoeff(&b);
  CHECK(a == 0);
  CHECK(b == 1);
}

TEST_CASE("conditioned policy likelihood") {
  RandomState rng(7);
  const ConditionedPolicy zero = init_conditioned_policy(3, 2, 5, 8, rng);
  std::vector<ConditionedRecord> records;
  for (int i = 0; i < 12; ++i)
    records.push_back({Vector::Random(3), WeightVector(random_simplex(2, rng)), uniform_index(rng, 5)});
  CHECK(conditioned_nll_and_grad(zero, records, nullptr) == doctest::Approx(std::log(5.0)));
  CHECK_THROWS_AS(conditioned_nll_and_grad(zero, {}, nullptr), DataError);

  for (int point = 0; point < 10; ++point) {
    ConditionedPolicy policy = zero;
    std::normal_distribution<double> normal(0.0, 0.5);
    for (auto& p : policy.net.params()) p = normal(rng);
    Vector grad = Vector::Zero(policy.net.parameter_count());
    const double loss = conditioned_nll_and_grad(policy, records, &grad);
    CHECK(loss == doctest::Approx(conditioned_oracle_nll(policy, records)).epsilon(1e-12));
    const Vector fd = finite_difference_gradient(
        [&](const Vector& params) {
          ConditionedPolicy probe = policy;
          probe.net.set_params(params);
          return conditioned_oracle_nll(probe, records);
        },
        policy.net.params());
    CHECK(relative_error(grad, fd) < 1e-4);
  }
}

TEST_CASE("a single record is memorized") {
  RandomState rng(8);
  const std::vector<ConditionedRecord> one{{Vector::Ones(3), WeightVector::uniform(2), 4}};
  const auto result = fit_conditioned_offline(one, 6, {.learning_rate = 5e-2, .epochs = 300}, rng);
  CHECK(result.policy.probabilities(one[0].features, one[0].weights)[4] > 0.99);
  CHECK(result.loss_history.back() < result.loss_history.front());
  CHECK_THROWS_AS(fit_conditioned_offline({}, 6, {}, rng), DataError);
}

TEST_CASE("offline records are labeled by normalized reward vectors") {
  const World world = small_world(10, 9);
  RandomState rng(10);
  const std::vector<RewardModel> models{init_reward_model(0, 4, 16, 8, rng), init_reward_model(1, 4, 16, 8, rng)};
  const std::vector<int> pool{1, 4, 7};
  const auto records = build_offline_records(world, models, pool, 50, 0.1, rng);
  CHECK(records.size() == 50);
  for (const auto& r : records) {
    bool in_pool = false;
    for (int p : pool)
      if (r.features == world.prompt_features(p)) {
        in_pool = true;
        CHECK((r.weights.values() - normalize_weights(reward_vector(models, r.features, r.response), 0.1).values())
                  .cwiseAbs()
                  .maxCoeff() == 0.0);
      }
    CHECK(in_pool);
  }
}

TEST_CASE("online refinement") {
  const World world = small_world(16, 11);
  RandomState rng(12);
  const std::vector<RewardModel> models{init_reward_model(0, 4, 16, 8, rng), init_reward_model(1, 4, 16, 8, rng)};
  const Orchestrator orch = init_orchestrator(4, 2, 8, rng);
  const ConditionedPolicy start = init_conditioned_policy(4, 2, 16, 8, rng);
  const std::vector<int> prompts{0, 1, 2, 3, 4, 5};

  OnlineConfig single{.epochs = 1, .prompts_per_epoch = 400, .candidates = 1};
  const auto m1 = online_refine(start, orch, models, world, prompts, single, rng);
  CHECK(m1.epochs.front().mean_kept_reward == doctest::Approx(m1.epochs.front().mean_sampled_reward).epsilon(1e-12));

  const auto m4 = online_refine(start, orch, models, world, prompts, {.prompts_per_epoch = 400}, rng);
  REQUIRE(m4.epochs.size() == 2);
  for (const auto& e : m4.epochs) {
    CHECK(e.mean_kept_reward >= e.mean_sampled_reward);
    CHECK(e.drift >= 0.0);
  }

  single.candidates = 0;
  CHECK_THROWS_AS(online_refine(start, orch, models, world, prompts, single, rng), ParameterError);

  const OnlineConfig defaults;
  CHECK(defaults.epochs == 2);
  CHECK(defaults.prompts_per_epoch == 5000);
  CHECK(defaults.candidates == 4);
}

TEST_CASE("weighted prompt template") {
  CHECK(encode_weighted_prompt("P7", WeightVector((Vector(2) << 0.25, 0.75).finished())) ==
        "P7 <W1> 0.2500 <W2> 0.7500");
  CHECK(encode_weighted_prompt("q", WeightVector::uniform(1)) == "q <W1> 1.0000");

  const DecodedPrompt d = decode_weighted_prompt("P7 <W1> 0.2500 <W2> 0.7500", 2);
  CHECK(d.prompt_id == "P7");
  CHECK(d.weights[1] == 0.75);

  RandomState rng(13);
  for (int K = 1; K <= 8; ++K)
    for (int trial = 0; trial < 200; ++trial) {
      const WeightVector w(random_simplex(K, rng, 2.0));
      const std::string s = encode_weighted_prompt("id-" + std::to_string(trial), w);
      const DecodedPrompt back = decode_weighted_prompt(s, K);
      CHECK((back.weights.values() - w.values()).cwiseAbs().maxCoeff() <= 5e-5);
      CHECK(encode_weighted_prompt(back.prompt_id, back.weights) == s);
    }

  for (const char* bad : {"", "P7", "P7 <W1>", "P7 <W2> 1.0000", "P7 <W1> abc", "P7 <W1> 0.5000 <W2>",
                          "P7 <W1> 0.6000 <W2> 0.6000", "<W1> 1.0000", "P7 <W1> -1.0000 <W2> 2.0000",
                          "P7 <W1> 0.5000 <W3> 0.5000"})
    CHECK_THROWS_AS(decode_weighted_prompt(bad), ParseError);
  CHECK_THROWS_AS(decode_weighted_prompt("P7 <W1> 0.2500 <W2> 0.7500", 3), ParseError);
  CHECK_THROWS_AS(encode_weighted_prompt("two words", WeightVector::uniform(2)), ParameterError);
  CHECK_THROWS_AS(encode_weighted_prompt("", WeightVector::uniform(2)), ParameterError);
}
