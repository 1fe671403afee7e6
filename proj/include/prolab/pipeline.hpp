#pragma once

#include "prolab/analysis.hpp"
#include "prolab/serialize.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace prolab {

struct DataConfig {
  int rm_pairs = 2000;   // single-objective pairs for the orchestrator
  int mo_pairs = 20000;  // per-objective labeled pairs for the reward models
};

struct Theorem1Settings {
  std::vector<int> sample_sizes{200, 500, 2000};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  int reward_pairs = 20000;
  int orchestrator_steps = 0;
};

struct RunConfig {
  WorldConfig world;
  std::uint64_t seed = 1;
  double tau = kDefaultTemperature;
  double beta = 0.1;
  DataConfig data;
  RewardTrainConfig rewards;
  OrchestratorTrainConfig orchestrator{.learning_rate = 1e-2, .epochs = 50};
  PolicyOptimConfig policy;
  ConditionedTrainConfig offline;
  int offline_records = 5000;
  double held_out_fraction = 0.25;
  OnlineConfig online;
  Theorem1Settings theorem1;
  int curve_steps = 100;
  int pareto_divisions = 10;

  void validate() const;
};

Json to_json(const RunConfig& config);
/// Missing keys keep their defaults; unknown keys are rejected.
RunConfig run_config_from_json(const Json& j);
RunConfig load_run_config(const std::string& path);

/// Hash of the canonical serialization of the whole config (seed included).
std::string config_hash(const RunConfig& config);

/// Independent generator for one pipeline stage of one run.
RandomState stage_rng(std::uint64_t seed, std::string_view stage);

/// Artifact directory with a manifest.json recording, for every artifact, the
/// stage that wrote it, the config hash, its content hash and the content
/// hashes of its inputs.
class ArtifactStore {
 public:
  ArtifactStore(std::filesystem::path root, std::string config_hash, bool force = false);

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path path(const std::string& name) const { return root_ / name; }

  /// Contents of an upstream artifact. Throws DataError naming `stage` when it
  /// is missing, and when it was written under another config or modified
  /// since (unless forced).
  std::string read(const std::string& name, std::string_view stage) const;

  void write(const std::string& name, std::string_view contents, std::string_view stage,
             const std::vector<std::string>& inputs, const Json& params = Json::object());

  bool has(const std::string& name) const;
  const Json& manifest() const { return manifest_; }

 private:
  void save_manifest() const;

  std::filesystem::path root_;
  std::string config_hash_;
  bool force_;
  Json manifest_;
};

/// Hash of a manifest with its timestamps removed.
std::string manifest_hash(const Json& manifest);

enum class DataKind { Rm, Mo };
enum class TrainStage { Rewards, Orchestrator, PolicyFixed, PolicyAdaptive, ConditionedOffline, ConditionedOnline };
enum class EvalKind { Gap, Theorem1, Pareto, Curves };

DataKind parse_data_kind(std::string_view name);
TrainStage parse_train_stage(std::string_view name);
EvalKind parse_eval_kind(std::string_view name);
std::string_view to_string(TrainStage stage);
std::string_view to_string(EvalKind kind);

class Pipeline {
 public:
  Pipeline(RunConfig config, std::filesystem::path root, bool force = false);

  const RunConfig& config() const { return config_; }
  ArtifactStore& store() { return store_; }

  void make_world();
  /// `count` overrides the configured dataset size when set.
  void gen_data(DataKind kind, std::optional<int> count = std::nullopt);
  void train(TrainStage stage);
  /// Pareto sweeps use the online-refined conditioned policy unless
  /// `offline_policy` is set.
  void eval(EvalKind kind, bool offline_policy = false);

  /// Every stage in order, ending with all reports.
  void run_all();

 private:
  World load_world() const;
  std::vector<RewardModel> load_reward_models() const;
  Orchestrator load_orchestrator() const;

  RunConfig config_;
  ArtifactStore store_;
};

}  // namespace prolab
