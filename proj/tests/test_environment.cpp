#include "prolab/environment.hpp"
#include "prolab/serialize.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

using namespace prolab;

namespace {

// Straight loops over the stored family parameters, no library evaluation.
Matrix reevaluate_rewards(const World& w, int k) {
  const WorldConfig& c = w.config;
  const auto& p = w.reward_params;
  Matrix out(c.prompts, c.responses);
  for (int i = 0; i < c.prompts; ++i) {
    std::vector<double> raw(static_cast<std::size_t>(c.responses));
    for (int y = 0; y < c.responses; ++y) {
      double s = 0.0;
      if (c.reward_family == RewardFamily::Linear) {
        for (int e = 0; e < c.embedding_dim; ++e) {
          double proj = p.offsets[k][e];
          for (int j = 0; j < c.feature_dim; ++j) proj += p.maps[k](e, j) * w.features(i, j);
          s += p.embeddings(y, e) * proj;
        }
        s /= std::sqrt(2.0 * c.embedding_dim);
      } else {
        for (int h = 0; h < c.reward_hidden; ++h) {
          double pre = p.offsets[k][h];
          for (int j = 0; j < c.feature_dim; ++j) pre += p.maps[k](h, j) * w.features(i, j);
          for (int e = 0; e < c.embedding_dim; ++e) pre += p.maps[k](h, c.feature_dim + e) * p.embeddings(y, e);
          s += p.readouts[k][h] * std::tanh(pre);
        }
        s *= 2.0 / std::sqrt(double(c.reward_hidden));
      }
      raw[std::size_t(y)] = s;
    }
    double mean = 0.0;
    for (double s : raw) mean += s;
    mean /= c.responses;
    double var = 0.0;
    for (double s : raw) var += (s - mean) * (s - mean);
    const double sd = std::sqrt(var / c.responses);
    for (int y = 0; y < c.responses; ++y) out(i, y) = (raw[std::size_t(y)] - mean) / sd * c.reward_scale;
  }
  return out;
}

World two_response_world(double r0, double r1) {
  WorldConfig c;
  c.prompts = 1;
  c.responses = 2;
  c.weight_family = WeightFamily::Constant;
  c.constant_weight = {1.0, 0.0};
  World w = build_world(c, 1);
  w.rewards[0] << r0, r1;
  w.rewards[1] << 0.0, 0.0;
  return w;
}

}  // namespace

TEST_CASE("invalid world configs are rejected") {
  auto rejects = [](auto mutate) {
    WorldConfig c;
    mutate(c);
    CHECK_THROWS_AS(build_world(c, 1), ConfigError);
  };
  rejects([](WorldConfig& c) { c.objectives = 1; });
  rejects([](WorldConfig& c) { c.responses = 1; });
  rejects([](WorldConfig& c) { c.ref_floor = 0.0; });
  rejects([](WorldConfig& c) { c.ref_floor = -0.1; });
  rejects([](WorldConfig& c) { c.ref_floor = 0.1; });  // 0.1 * 16 > 1
  rejects([](WorldConfig& c) { c.prompts = 0; });
  rejects([](WorldConfig& c) {
    c.weight_family = WeightFamily::Constant;
    c.constant_weight = {0.5, 0.6};
  });
  rejects([](WorldConfig& c) {
    c.weight_family = WeightFamily::Constant;
    c.constant_weight = {1.0};
  });
  WorldConfig edge;
  edge.ref_floor = 1.0 / 16;
  CHECK_NOTHROW(build_world(edge, 1));
}

TEST_CASE("worlds are a pure function of config and seed") {
  WorldConfig c;
  CHECK(world_to_json(build_world(c, 5)).dump() == world_to_json(build_world(c, 5)).dump());
  CHECK(world_to_json(build_world(c, 5)).dump() != world_to_json(build_world(c, 6)).dump());
}

TEST_CASE("stored rewards equal the reward family evaluated pointwise") {
  WorldConfig c;
  c.feature_dim = 4;
  c.objectives = 3;
  c.responses = 16;
  c.prompts = 64;
  const World w = build_world(c, 7);
  for (int k = 0; k < 3; ++k) CHECK((w.rewards[std::size_t(k)] - reevaluate_rewards(w, k)).cwiseAbs().maxCoeff() < 1e-12);

  c.reward_family = RewardFamily::Network;
  c.reward_scale = 1.7;
  const World net = build_world(c, 7);
  for (int k = 0; k < 3; ++k)
    CHECK((net.rewards[std::size_t(k)] - reevaluate_rewards(net, k)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("standardized rewards have zero mean and unit spread per prompt") {
  const World w = build_world(WorldConfig{}, 3);
  for (const auto& table : w.rewards)
    for (int i = 0; i < w.prompts(); ++i) {
      CHECK(std::abs(table.row(i).mean()) < 1e-12);
      CHECK(std::sqrt(table.row(i).squaredNorm() / w.responses()) == doctest::Approx(1.0));
    }
}

TEST_CASE("reference policy rows are normalized and floored") {
  WorldConfig c;
  c.ref_floor = 0.05;
  c.ref_concentration = 4.0;
  const World w = build_world(c, 2);
  for (int i = 0; i < w.prompts(); ++i) {
    CHECK(std::abs(w.ref_policy.row(i).sum() - 1.0) < 1e-9);
    CHECK(w.ref_policy.row(i).minCoeff() >= c.ref_floor - 1e-15);
  }
}

TEST_CASE("weight families") {
  WorldConfig c;
  c.weight_family = WeightFamily::Constant;
  c.constant_weight = {0.2, 0.8};
  const World constant = build_world(c, 1);
  for (int i = 0; i < constant.prompts(); ++i) CHECK(constant.true_weight(i).values() == constant.true_weight(0).values());
  CHECK(constant.true_weight(0)[1] == 0.8);

  c.constant_weight.clear();
  CHECK(build_world(c, 1).true_weight(3)[0] == 0.5);

  c.weight_family = WeightFamily::Piecewise;
  const World piecewise = build_world(c, 1);
  std::set<std::vector<double>> distinct;
  for (int i = 0; i < piecewise.prompts(); ++i) {
    const Vector wv = piecewise.true_weight(i).values();
    const Vector expected = piecewise.weight_params.pieces[piecewise.features(i, 0) >= 0.0 ? 0 : 1];
    CHECK(wv == expected);
    distinct.insert({wv[0], wv[1]});
  }
  CHECK(distinct.size() == 2);

  c.weight_family = WeightFamily::Smooth;
  const World smooth = build_world(c, 1);
  for (int i = 0; i < smooth.prompts(); ++i) {
    const Vector logits = c.weight_sharpness * (smooth.weight_params.map * smooth.prompt_features(i) + smooth.weight_params.bias);
    const Vector expected = logits.array().exp() / logits.array().exp().sum();
    CHECK((smooth.true_weight(i).values() - expected).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("bradley-terry decisions") {
  RandomState rng(1);
  int first = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) first += bradley_terry_prefers_first(1.0, 1.0, rng);
  CHECK(std::abs(first / double(n) - 1.0 / (1.0 + std::exp(-1.0))) < 0.02);

  first = 0;
  for (int i = 0; i < n; ++i) first += bradley_terry_prefers_first(0.0, 1.0, rng);
  CHECK(std::abs(first / double(n) - 0.5) < 0.02);

  for (int i = 0; i < 100; ++i) CHECK(bradley_terry_prefers_first(1e-3, 0.0, rng));
  for (int i = 0; i < 100; ++i) CHECK_FALSE(bradley_terry_prefers_first(-1e-3, 0.0, rng));
}

TEST_CASE("preference pairs follow the sigmoid of the scalarized score gap") {
  const World w = two_response_world(1.0, 0.0);
  RandomState rng(17);
  int chose_better = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const PreferencePair p = sample_preference_pair(w, 0, rng);
    CHECK(p.chosen != p.rejected);
    chose_better += p.chosen == 0;
  }
  CHECK(std::abs(chose_better / double(n) - 0.7311) < 0.02);
}

TEST_CASE("preference generation is exchangeable") {
  // P(a wins | a, b) under a score gap d equals P(b loses | b, a) under -d
  for (double d : {-2.0, -0.3, 0.0, 0.7, 1.5}) {
    RandomState forward_rng(99), swapped_rng(99);
    int forward = 0, swapped = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
      forward += bradley_terry_prefers_first(d, 1.0, forward_rng);
      swapped += !bradley_terry_prefers_first(-d, 1.0, swapped_rng);
    }
    CHECK(std::abs(forward - swapped) / double(n) < 0.02);
  }

  // dataset level: the winner of {0, 1} does not depend on the draw order
  const World w = two_response_world(0.4, -0.4);
  RandomState rng(5);
  int zero_first = 0, zero_first_wins = 0, one_first = 0, one_first_wins = 0;
  for (int i = 0; i < 40000; ++i) {
    const std::uint64_t state = rng();
    RandomState probe(state);
    const int a = uniform_index(probe, 2);
    RandomState replay(state);
    const PreferencePair p = sample_preference_pair(w, 0, replay);
    if (a == 0) {
      ++zero_first;
      zero_first_wins += p.chosen == 0;
    } else {
      ++one_first;
      one_first_wins += p.chosen == 0;
    }
  }
  CHECK(std::abs(zero_first_wins / double(zero_first) - one_first_wins / double(one_first)) < 0.02);
}

TEST_CASE("multi-objective labels are independent per objective") {
  WorldConfig c;
  c.prompts = 1;
  c.responses = 2;
  World w = build_world(c, 1);
  w.rewards[0] << 0.0, 0.0;
  w.rewards[1] << 0.0, 0.0;
  RandomState rng(8);
  int ones[2] = {0, 0};
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const auto p = sample_multiobjective_pair(w, 0, rng);
    CHECK(p.labels.size() == 2);
    CHECK(p.response_a != p.response_b);
    ones[0] += p.labels[0];
    ones[1] += p.labels[1];
  }
  CHECK(std::abs(ones[0] / double(n) - 0.5) < 0.02);
  CHECK(std::abs(ones[1] / double(n) - 0.5) < 0.02);

  w.rewards[0] << 3.0, 0.0;
  w.rewards[1] << 0.0, 3.0;
  const double s = 1.0 / (1.0 + std::exp(-3.0));
  const double disagree_expected = s * s + (1 - s) * (1 - s);
  int disagree = 0;
  for (int i = 0; i < n; ++i) {
    const auto p = sample_multiobjective_pair(w, 0, rng);
    disagree += p.labels[0] != p.labels[1];
  }
  CHECK(std::abs(disagree / double(n) - disagree_expected) < 0.02);
  CHECK(disagree / double(n) > 0.85);
}

TEST_CASE("datasets respect the prompt pool and are seeded") {
  const World w = build_world(WorldConfig{}, 4);
  const std::vector<int> pool{3, 9};
  RandomState a(1), b(1);
  const auto d1 = sample_preference_dataset(w, 200, a, pool);
  const auto d2 = sample_preference_dataset(w, 200, b, pool);
  CHECK(d1 == d2);
  CHECK(d1.size() == 200);
  for (const auto& p : d1) CHECK((p.prompt_index == 3 || p.prompt_index == 9));

  RandomState r(2);
  CHECK_THROWS(sample_preference_pair(w, 64, r));
}

TEST_CASE("prompt split is a deterministic partition") {
  const auto [train, held] = split_prompts(40, 0.25, 3);
  CHECK(held.size() == 10);
  CHECK(train.size() == 30);
  std::vector<int> all = train;
  all.insert(all.end(), held.begin(), held.end());
  std::sort(all.begin(), all.end());
  for (int i = 0; i < 40; ++i) CHECK(all[std::size_t(i)] == i);
  CHECK(split_prompts(40, 0.25, 3).second == held);
  CHECK(split_prompts(40, 0.25, 4).second != held);
}
