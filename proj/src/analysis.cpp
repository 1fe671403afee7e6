#include "prolab/analysis.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>

namespace prolab {

double gap(const Vector& pi_row, const World& world, int prompt, std::span<const Matrix> tables, double beta) {
  if (prompt < 0 || prompt >= world.prompts()) throw DataError("prompt index out of range");
  const Vector reward = scalarize_row(tables, prompt, world.true_weight(prompt));
  const Vector ref = world.ref_policy.row(prompt).transpose();
  const Vector optimum = gibbs_policy(reward, beta, ref);
  return kl_regularized_value(optimum, reward, beta, ref) - kl_regularized_value(pi_row, reward, beta, ref);
}

double gap(const Vector& pi_row, const World& world, int prompt, std::span<const RewardModel> models, double beta) {
  const auto tables = reward_tables(models, world);
  return gap(pi_row, world, prompt, tables, beta);
}

GapReport align_gap(const TabularPolicy& policy, const Matrix& weights_used, const World& world,
                    std::span<const Matrix> tables, double beta, std::string method) {
  if (policy.prompts() != world.prompts() || weights_used.rows() != world.prompts() ||
      weights_used.cols() != world.objectives())
    throw ArityError("policy or weight table does not match the world");
  GapReport report;
  report.method = std::move(method);
  report.beta = beta;
  report.per_prompt.resize(world.prompts());
  for (int i = 0; i < world.prompts(); ++i) report.per_prompt[i] = gap(policy.row(i), world, i, tables, beta);
  report.align_gap = report.per_prompt.mean();
  report.mismatch = (world.true_weights - weights_used).rowwise().squaredNorm().mean();
  return report;
}

std::vector<Theorem1Row> theorem1_experiment(const World& world, const Theorem1Config& config) {
  if (config.sample_sizes.empty() || config.seeds.empty()) throw ParameterError("need sample sizes and seeds");
  const int K = world.objectives();
  const int max_n = *std::max_element(config.sample_sizes.begin(), config.sample_sizes.end());
  const WeightVector uniform = WeightVector::uniform(K);
  const Matrix uniform_weights = Matrix::Constant(world.prompts(), K, 1.0 / K);

  std::vector<Theorem1Row> rows;
  for (std::uint64_t seed : config.seeds) {
    RandomState data_rng(seed);
    const auto mo = sample_multiobjective_dataset(world, config.reward_pairs, data_rng);
    std::vector<RewardModel> models;
    for (int k = 0; k < K; ++k) {
      RandomState train_rng(seed * 1000003ULL + std::uint64_t(k));
      const auto projected = project_to_objective(mo, k);
      models.push_back(train_reward_model(projected, k, world.features, world.responses(), config.rewards, train_rng).model);
    }
    const auto tables = reward_tables(models, world);

    const auto fixed = optimize_policy(fixed_reward_table(tables, uniform), config.beta, world.ref_policy, config.policy);
    const GapReport fixed_report = align_gap(fixed.policy, uniform_weights, world, tables, config.beta, "fixed");

    // nested datasets: the pairs for a smaller N are a prefix of those for a larger one
    const auto pairs = sample_preference_dataset(world, max_n, data_rng);
    const auto targets = build_targets(pairs, models, world, config.tau);
    const auto examples = to_examples(targets, world);

    for (int n : config.sample_sizes) {
      OrchestratorTrainConfig oc = config.orchestrator;
      if (config.orchestrator_steps > 0) {
        const int batches = (n + oc.batch_size - 1) / oc.batch_size;
        oc.epochs = std::max(oc.epochs, (config.orchestrator_steps + batches - 1) / batches);
      }
      RandomState orch_rng(seed * 7919ULL + std::uint64_t(n));
      const auto trained =
          train_orchestrator(std::span(examples).first(static_cast<std::size_t>(n)), oc, orch_rng, config.tau);
      const Matrix weights = orchestrator_weights(trained.params, world);
      const Matrix reward = adaptive_reward_table(tables, trained.params, world);
      const auto adaptive = optimize_policy(reward, config.beta, world.ref_policy, config.policy);
      const GapReport report = align_gap(adaptive.policy, weights, world, tables, config.beta, "adaptive");
      rows.push_back({"adaptive", n, seed, report.align_gap, report.mismatch});
      rows.push_back({"fixed", n, seed, fixed_report.align_gap, fixed_report.mismatch});
    }
  }
  return rows;
}

double median_align_gap(std::span<const Theorem1Row> rows, const std::string& method, int n) {
  std::vector<double> values;
  for (const auto& r : rows)
    if (r.method == method && r.n == n) values.push_back(r.align_gap);
  if (values.empty()) throw DataError("no rows for " + method + " at N=" + std::to_string(n));
  std::sort(values.begin(), values.end());
  const std::size_t m = values.size() / 2;
  return values.size() % 2 ? values[m] : 0.5 * (values[m - 1] + values[m]);
}

std::vector<WeightVector> simplex_grid(int objectives, int divisions) {
  if (objectives < 1 || divisions < 1) throw ParameterError("grid needs K >= 1 and at least one division");
  std::vector<WeightVector> grid;
  std::vector<int> counts(static_cast<std::size_t>(objectives), 0);
  // enumerate compositions of `divisions` into K parts, first coordinate descending
  std::function<void(int, int)> rec = [&](int k, int remaining) {
    if (k == objectives - 1) {
      counts[std::size_t(k)] = remaining;
      Vector w(objectives);
      for (int j = 0; j < objectives; ++j) w[j] = double(counts[std::size_t(j)]) / divisions;
      grid.emplace_back(w, 1e-12);
      return;
    }
    for (int c = 0; c <= remaining; ++c) {
      counts[std::size_t(k)] = c;
      rec(k + 1, remaining - c);
    }
  };
  rec(0, divisions);
  return grid;
}

std::vector<FrontierPoint> pareto_sweep(const ConditionedPolicy& policy, const World& world,
                                        std::span<const Matrix> tables, std::span<const WeightVector> grid,
                                        std::span<const int> prompts) {
  if (grid.empty()) throw ParameterError("weight grid is empty");
  if (prompts.empty()) throw DataError("need at least one prompt");
  std::vector<FrontierPoint> points;
  for (const auto& w : grid) {
    Vector means = Vector::Zero(world.objectives());
    for (int p : prompts) {
      const Vector probs = policy.probabilities(world.prompt_features(p), w);
      for (int k = 0; k < world.objectives(); ++k) means[k] += probs.dot(tables[std::size_t(k)].row(p).transpose());
    }
    points.push_back({w, means / double(prompts.size())});
  }
  return points;
}

std::vector<FrontierPoint> pareto_sweep_gibbs(const World& world, std::span<const Matrix> tables, double beta,
                                              std::span<const WeightVector> grid, std::span<const int> prompts) {
  if (grid.empty()) throw ParameterError("weight grid is empty");
  if (prompts.empty()) throw DataError("need at least one prompt");
  std::vector<FrontierPoint> points;
  for (const auto& w : grid) {
    Vector means = Vector::Zero(world.objectives());
    for (int p : prompts) {
      const Vector probs = gibbs_policy(scalarize_row(tables, p, w), beta, world.ref_policy.row(p).transpose());
      for (int k = 0; k < world.objectives(); ++k) means[k] += probs.dot(tables[std::size_t(k)].row(p).transpose());
    }
    points.push_back({w, means / double(prompts.size())});
  }
  return points;
}

Matrix gibbs_cross_values(const World& world, std::span<const Matrix> tables, double beta,
                          std::span<const WeightVector> grid, std::span<const int> prompts) {
  const auto n = static_cast<Eigen::Index>(grid.size());
  Matrix values = Matrix::Zero(n, n);
  for (int p : prompts) {
    const Vector ref = world.ref_policy.row(p).transpose();
    std::vector<Vector> rewards, policies;
    for (const auto& w : grid) {
      rewards.push_back(scalarize_row(tables, p, w));
      policies.push_back(gibbs_policy(rewards.back(), beta, ref));
    }
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        values(i, j) += kl_regularized_value(policies[std::size_t(j)], rewards[std::size_t(i)], beta, ref);
  }
  return values / double(prompts.size());
}

LearningCurves learning_curves(const Orchestrator& orchestrator, const World& world, std::span<const Matrix> tables,
                               double beta, int steps, PolicyOptimConfig config) {
  if (steps < 1) throw ParameterError("need at least one step");
  config.max_steps = steps - 1;
  config.run_all_steps = true;
  const Matrix adapter_reward = adaptive_reward_table(tables, orchestrator, world);
  const int K = world.objectives();

  LearningCurves curves;
  auto run = [&](const std::string& name, const Matrix& training_reward) {
    std::vector<double> series;
    series.reserve(static_cast<std::size_t>(steps));
    optimize_policy(training_reward, beta, world.ref_policy, config, [&](int, const Matrix& probs) {
      series.push_back(probs.cwiseProduct(adapter_reward).rowwise().sum().mean());
    });
    curves.methods.push_back(name);
    curves.series.push_back(std::move(series));
  };
  run("pro-morlhf", adapter_reward);
  run("uniform-fixed", fixed_reward_table(tables, WeightVector::uniform(K)));
  run("single-reward", tables[0]);
  return curves;
}

int steps_to_fraction(std::span<const double> series, double fraction) {
  if (series.empty()) throw DataError("empty series");
  const double start = series.front();
  const double target = start + fraction * (series.back() - start);
  const bool rising = series.back() >= start;
  for (std::size_t i = 0; i < series.size(); ++i)
    if (rising ? series[i] >= target : series[i] <= target) return static_cast<int>(i);
  return static_cast<int>(series.size() - 1);
}

int first_step_reaching(std::span<const double> series, double level) {
  for (std::size_t i = 0; i < series.size(); ++i)
    if (series[i] >= level) return static_cast<int>(i);
  return -1;
}

double fraction_level(std::span<const double> series, double fraction) {
  if (series.empty()) throw DataError("empty series");
  return series.front() + fraction * (series.back() - series.front());
}

std::string format_number(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

void write_theorem1_csv(std::ostream& out, std::span<const Theorem1Row> rows) {
  out << "method,N,seed,align_gap,mismatch\n";
  for (const auto& r : rows)
    out << r.method << ',' << r.n << ',' << r.seed << ',' << format_number(r.align_gap) << ','
        << format_number(r.mismatch) << '\n';
}

void write_gap_csv(std::ostream& out, std::span<const GapReport> reports) {
  out << "method,N,seed,align_gap,mismatch\n";
  for (const auto& r : reports)
    out << r.method << ',' << r.n << ',' << r.seed << ',' << format_number(r.align_gap) << ','
        << format_number(r.mismatch) << '\n';
}

void write_curves_csv(std::ostream& out, const LearningCurves& curves) {
  out << "method,step,mean_reward\n";
  for (std::size_t m = 0; m < curves.methods.size(); ++m)
    for (std::size_t s = 0; s < curves.series[m].size(); ++s)
      out << curves.methods[m] << ',' << s << ',' << format_number(curves.series[m][s]) << '\n';
}

void write_frontier_csv(std::ostream& out, std::span<const FrontierPoint> points) {
  if (points.empty()) return;
  const int K = points.front().weight.size();
  for (int k = 1; k <= K; ++k) out << "w_" << k << ',';
  for (int k = 1; k <= K; ++k) out << "r_" << k << (k == K ? '\n' : ',');
  for (const auto& p : points) {
    for (int k = 0; k < K; ++k) out << format_number(p.weight[k]) << ',';
    for (int k = 0; k < K; ++k) out << format_number(p.mean_rewards[k]) << (k + 1 == K ? '\n' : ',');
  }
}

}  // namespace prolab
