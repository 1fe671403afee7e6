#pragma once

#include "prolab/environment.hpp"
#include "prolab/orchestrator.hpp"
#include "prolab/policy.hpp"
#include "prolab/rewards.hpp"

#include <json.hpp>

#include <initializer_list>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace prolab {

using Json = nlohmann::json;

inline constexpr int kFormatVersion = 1;

/// Throws ConfigError naming the first key of `object` not in `allowed`.
void reject_unknown_keys(const Json& object, std::initializer_list<std::string_view> allowed, std::string_view context);

Json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const Json& j);
Json vector_to_json(const Vector& v);
Vector vector_from_json(const Json& j);

Json to_json(const WorldConfig& config);
WorldConfig world_config_from_json(const Json& j);
Json to_json(const RewardTrainConfig& config);
RewardTrainConfig reward_train_config_from_json(const Json& j);
Json to_json(const OrchestratorTrainConfig& config);
OrchestratorTrainConfig orchestrator_train_config_from_json(const Json& j);
Json to_json(const PolicyOptimConfig& config);
PolicyOptimConfig policy_optim_config_from_json(const Json& j);
Json to_json(const ConditionedTrainConfig& config);
ConditionedTrainConfig conditioned_train_config_from_json(const Json& j);
Json to_json(const OnlineConfig& config);
OnlineConfig online_config_from_json(const Json& j);

/// Config, seed, family parameters and dense reward/reference/weight tables.
Json world_to_json(const World& world);
World world_from_json(const Json& j);

Json reward_models_to_json(std::span<const RewardModel> models);
std::vector<RewardModel> reward_models_from_json(const Json& j);
Json orchestrator_to_json(const Orchestrator& orchestrator);
Orchestrator orchestrator_from_json(const Json& j);
Json tabular_policy_to_json(const TabularPolicy& policy, const Matrix& weights_used);
std::pair<TabularPolicy, Matrix> tabular_policy_from_json(const Json& j);
Json conditioned_policy_to_json(const ConditionedPolicy& policy);
ConditionedPolicy conditioned_policy_from_json(const Json& j);

// Line-delimited records.
void write_preference_pairs(std::ostream& out, std::span<const PreferencePair> pairs);
std::vector<PreferencePair> read_preference_pairs(std::istream& in);
void write_multiobjective_pairs(std::ostream& out, std::span<const MultiObjectivePreferencePair> pairs);
std::vector<MultiObjectivePreferencePair> read_multiobjective_pairs(std::istream& in);
void write_weight_targets(std::ostream& out, std::span<const WeightTargetRecord> targets);
std::vector<WeightTargetRecord> read_weight_targets(std::istream& in);

/// 64-bit FNV-1a, rendered as 16 hex digits.
std::string content_hash(std::string_view bytes);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

}  // namespace prolab
