#pragma once

#include "prolab/core.hpp"
#include "prolab/environment.hpp"
#include "prolab/orchestrator.hpp"
#include "prolab/policy.hpp"
#include "prolab/rewards.hpp"

#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace prolab {

/// F at the exact optimum under sum_k w*_k(x) r_k minus F of `pi_row` under
/// the same reward, for one prompt.
double gap(const Vector& pi_row, const World& world, int prompt, std::span<const Matrix> tables, double beta);
double gap(const Vector& pi_row, const World& world, int prompt, std::span<const RewardModel> models, double beta);

struct GapReport {
  std::string method;
  double beta = 0.0;
  int n = 0;
  std::uint64_t seed = 0;
  Vector per_prompt;
  double align_gap = 0.0;  // mean of per_prompt
  double mismatch = 0.0;   // mean over prompts of ||w*(x) - w_used(x)||^2
};

/// Averages the per-prompt gap of `policy` over all prompts of the world.
/// `weights_used` (prompts x K) are the weights the policy was optimized for;
/// they only enter the mismatch term.
GapReport align_gap(const TabularPolicy& policy, const Matrix& weights_used, const World& world,
                    std::span<const Matrix> tables, double beta, std::string method = {});

struct Theorem1Config {
  std::vector<int> sample_sizes{200, 500, 2000};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  double tau = kDefaultTemperature;
  double beta = 0.1;
  int reward_pairs = 20000;  // multi-objective pairs for the reward models; independent of N
  int orchestrator_steps = 0;  // when positive, raise epochs so training takes at least this many steps
  RewardTrainConfig rewards;
  OrchestratorTrainConfig orchestrator{.learning_rate = 1e-2, .epochs = 50};
  PolicyOptimConfig policy;
};

struct Theorem1Row {
  std::string method;  // "adaptive" or "fixed"
  int n = 0;
  std::uint64_t seed = 0;
  double align_gap = 0.0;
  double mismatch = 0.0;
};

/// For each seed: trains K reward models, then for each N trains the
/// orchestrator on N preference pairs and compares the adaptive policy with
/// the uniform fixed-weight policy.
std::vector<Theorem1Row> theorem1_experiment(const World& world, const Theorem1Config& config);

/// Median align gap of `method` at sample size `n` across seeds.
double median_align_gap(std::span<const Theorem1Row> rows, const std::string& method, int n);

struct FrontierPoint {
  WeightVector weight;
  Vector mean_rewards;  // per objective
};

/// Every weight vector whose entries are multiples of 1/divisions.
std::vector<WeightVector> simplex_grid(int objectives, int divisions);

/// Mean per-objective reward of policy(.|x, w) over `prompts` for each grid weight.
std::vector<FrontierPoint> pareto_sweep(const ConditionedPolicy& policy, const World& world,
                                        std::span<const Matrix> tables, std::span<const WeightVector> grid,
                                        std::span<const int> prompts);

/// The same sweep over the exact Gibbs family pi_w = gibbs(sum_k w_k r_k).
std::vector<FrontierPoint> pareto_sweep_gibbs(const World& world, std::span<const Matrix> tables, double beta,
                                              std::span<const WeightVector> grid, std::span<const int> prompts);

/// C(i, j) = mean over prompts of F under grid[i]'s reward for the Gibbs policy of grid[j].
Matrix gibbs_cross_values(const World& world, std::span<const Matrix> tables, double beta,
                          std::span<const WeightVector> grid, std::span<const int> prompts);

struct LearningCurves {
  std::vector<std::string> methods;
  std::vector<std::vector<double>> series;  // mean adapter-weighted reward per step
};

/// Plain-gradient ascent with a unit step cap, so each step is comparable
/// across methods.
inline constexpr PolicyOptimConfig kCurvePolicyConfig{
    .initial_step = 1.0, .max_step = 1.0, .natural_gradient = false};

/// Runs `steps` optimization steps for PRO-MORLHF (orchestrator weights),
/// uniform fixed weights and a single-reward baseline (objective 0), logging
/// E_pi[sum_k f(x)_k r_k] averaged over prompts at step 0 and after each step.
LearningCurves learning_curves(const Orchestrator& orchestrator, const World& world, std::span<const Matrix> tables,
                               double beta, int steps, PolicyOptimConfig config = kCurvePolicyConfig);

/// First step where the series covers `fraction` of its total change from step 0.
int steps_to_fraction(std::span<const double> series, double fraction);

/// First step at which the series is at or above `level`; -1 if never.
int first_step_reaching(std::span<const double> series, double level);

/// Step-0 value plus `fraction` of the change of `series` over the run.
double fraction_level(std::span<const double> series, double fraction);

// Comma-separated report tables.
std::string format_number(double value);
void write_theorem1_csv(std::ostream& out, std::span<const Theorem1Row> rows);
void write_gap_csv(std::ostream& out, std::span<const GapReport> reports);
void write_curves_csv(std::ostream& out, const LearningCurves& curves);
void write_frontier_csv(std::ostream& out, std::span<const FrontierPoint> points);

}  // namespace prolab
