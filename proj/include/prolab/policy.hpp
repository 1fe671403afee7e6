#pragma once

#include "prolab/core.hpp"
#include "prolab/environment.hpp"
#include "prolab/mlp.hpp"
#include "prolab/orchestrator.hpp"
#include "prolab/rewards.hpp"
#include "prolab/softmax.hpp"

#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace prolab {

/// Per-prompt categorical distributions over the response catalog
/// (prompts x responses, each row on the simplex).
class TabularPolicy {
 public:
  explicit TabularPolicy(Matrix probabilities, double tolerance = kSimplexTolerance);

  const Matrix& probabilities() const { return probs_; }
  int prompts() const { return static_cast<int>(probs_.rows()); }
  int responses() const { return static_cast<int>(probs_.cols()); }
  Vector row(int prompt) const { return probs_.row(prompt).transpose(); }

 private:
  Matrix probs_;
};

/// F_r(pi) = E_{y~pi}[r(y)] - beta KL(pi || pi_ref), by exact summation.
template <typename DerivedPi, typename DerivedR, typename DerivedRef>
double kl_regularized_value(const Eigen::MatrixBase<DerivedPi>& pi, const Eigen::MatrixBase<DerivedR>& reward,
                            double beta, const Eigen::MatrixBase<DerivedRef>& ref) {
  if (!(beta > 0.0)) throw ParameterError("beta must be positive");
  if (pi.size() != reward.size() || pi.size() != ref.size()) throw ArityError("policy/reward/reference sizes differ");
  double expected = 0.0;
  double kl = 0.0;
  for (Eigen::Index y = 0; y < pi.size(); ++y) {
    if (pi[y] <= 0.0) continue;
    if (ref[y] <= 0.0) throw NumericalError("policy puts mass where the reference has none", std::size_t(y));
    expected += pi[y] * reward[y];
    kl += pi[y] * (std::log(pi[y]) - std::log(ref[y]));
  }
  return expected - beta * kl;
}

/// pi(y) proportional to pi_ref(y) exp(r(y) / beta), the maximizer of F_r.
template <typename DerivedR, typename DerivedRef>
Vector gibbs_policy(const Eigen::MatrixBase<DerivedR>& reward, double beta,
                    const Eigen::MatrixBase<DerivedRef>& ref) {
  if (!(beta > 0.0)) throw ParameterError("beta must be positive");
  if (reward.size() != ref.size()) throw ArityError("reward and reference sizes differ");
  const Vector logits = (ref.array().log() + reward.array() / beta).matrix();
  return softmax(logits);
}

TabularPolicy gibbs_policy_table(const Matrix& rewards, double beta, const Matrix& ref);

struct PolicyOptimConfig {
  int max_steps = 20000;
  double initial_step = 1.0;
  double max_step = 1e4;
  double gradient_tolerance = 1e-10;  // stop once every row's max |dF/dlogit| is below this
  double armijo = 1e-4;
  bool run_all_steps = false;  // ignore the tolerance and take exactly max_steps steps
  bool natural_gradient = true;  // precondition by the softmax Fisher metric
};

struct PolicyOptimResult {
  TabularPolicy policy;
  std::vector<double> objective_history;  // mean F over prompts, one entry per step (plus the start)
  int steps = 0;
};

/// Called with (step, current prompts x responses probabilities).
using PolicyStepObserver = std::function<void(int, const Matrix&)>;

/// Ascent on per-prompt logits of the exact objective, starting at the
/// reference policy, with a backtracking line search per prompt. The natural
/// direction is a - E_pi[a] with a = r - beta log(pi / pi_ref); the plain one
/// multiplies it by pi.
PolicyOptimResult optimize_policy(const Matrix& rewards, double beta, const Matrix& ref,
                                  const PolicyOptimConfig& config = {}, const PolicyStepObserver& observer = {});

/// prompts x responses table of sum_k w_k r_k.
Matrix fixed_reward_table(std::span<const Matrix> tables, const WeightVector& w);
/// prompts x responses table of sum_k f(x)_k r_k.
Matrix adaptive_reward_table(std::span<const Matrix> tables, const Orchestrator& orchestrator, const World& world);
/// prompts x K matrix of orchestrator weights.
Matrix orchestrator_weights(const Orchestrator& orchestrator, const World& world);

PolicyOptimResult optimize_policy_fixed(const WeightVector& w, std::span<const RewardModel> models,
                                        const World& world, double beta, const PolicyOptimConfig& config = {});
PolicyOptimResult optimize_policy_adaptive(const Orchestrator& orchestrator, std::span<const RewardModel> models,
                                           const World& world, double beta, const PolicyOptimConfig& config = {});

/// Categorical policy over the catalog conditioned on prompt features and a
/// weight vector: softmax head over a one-hidden-layer network on [x; w].
struct ConditionedPolicy {
  int feature_dim = 0;
  int objectives = 0;
  int responses = 0;
  Mlp net;

  Vector input(const Vector& x, const WeightVector& w) const;
  Vector probabilities(const Vector& x, const WeightVector& w) const;
};

struct ConditionedRecord {
  Vector features;
  WeightVector weights;
  ResponseId response = 0;
};

struct ConditionedTrainConfig {
  int hidden = 32;
  double learning_rate = 1e-2;
  int batch_size = 32;
  int epochs = 20;
  double weight_decay = 0.0;
};

struct ConditionedTrainResult {
  ConditionedPolicy policy;
  std::vector<double> loss_history;
};

/// Output layer starts at zero, so the initial policy is uniform.
ConditionedPolicy init_conditioned_policy(int feature_dim, int objectives, int responses, int hidden,
                                          RandomState& rng);

/// Mean of -log pi(y | x, w) over the records; accumulates its gradient into
/// `grad` when non-null.
double conditioned_nll_and_grad(const ConditionedPolicy& policy, std::span<const ConditionedRecord> records,
                                Vector* grad);

/// Continues training `policy` on `records`; returns the per-epoch mean loss.
std::vector<double> fit_conditioned(ConditionedPolicy& policy, std::span<const ConditionedRecord> records,
                                    const ConditionedTrainConfig& config, RandomState& rng);

/// Weight-conditioned warm-up from a freshly initialized policy.
ConditionedTrainResult fit_conditioned_offline(std::span<const ConditionedRecord> records, int responses,
                                               const ConditionedTrainConfig& config, RandomState& rng);

/// Warm-up records: responses drawn from the reference policy on prompts from
/// `prompt_pool`, each labeled with normalize_weights(reward_vector(...), tau).
std::vector<ConditionedRecord> build_offline_records(const World& world, std::span<const RewardModel> models,
                                                     std::span<const int> prompt_pool, int count, double tau,
                                                     RandomState& rng);

struct OnlineConfig {
  int epochs = 2;
  int prompts_per_epoch = 5000;
  int candidates = 4;  // M in best-of-M filtering
  ConditionedTrainConfig fit{.epochs = 1};
};

struct OnlineEpochStats {
  double mean_sampled_reward = 0.0;  // adapter-scalarized reward of all M candidates
  double mean_kept_reward = 0.0;     // of the best candidate per prompt
  double loss = 0.0;                 // mean fit loss over the kept records
  double drift = 0.0;                // mean total variation to the warm-started policy
};

struct OnlineResult {
  ConditionedPolicy policy;
  std::vector<OnlineEpochStats> epochs;
};

/// Online stage: weights from the orchestrator, M samples from the policy per
/// prompt, keep the best under the scalarized reward model score, then fit
/// the kept (x, f(x), y) records by likelihood.
OnlineResult online_refine(const ConditionedPolicy& policy, const Orchestrator& orchestrator,
                           std::span<const RewardModel> models, const World& world, std::span<const int> prompts,
                           const OnlineConfig& config, RandomState& rng);

/// Mean over `prompts` of E_{y ~ policy(.|x, f(x))}[sum_k f(x)_k r_k(x, y)].
double mean_adapter_reward(const ConditionedPolicy& policy, const Orchestrator& orchestrator,
                           std::span<const Matrix> tables, const World& world, std::span<const int> prompts);

inline constexpr int kWeightDecimals = 4;

/// "<prompt> <W1> v1 <W2> v2 ... <WK> vK" with values at four decimals.
std::string encode_weighted_prompt(std::string_view prompt_id, const WeightVector& w);

struct DecodedPrompt {
  std::string prompt_id;
  WeightVector weights;
};

/// Inverse of encode_weighted_prompt. Values are returned as rendered, so they
/// sum to one only up to the rendering tolerance (K * 5e-5). When
/// `expected_objectives` is positive the weight count must match it.
DecodedPrompt decode_weighted_prompt(std::string_view encoding, int expected_objectives = 0);

}  // namespace prolab
