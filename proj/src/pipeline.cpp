#include "prolab/pipeline.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <random>
#include <sstream>

namespace prolab {

namespace {

template <typename T>
void read_if_present(const Json& j, const char* key, T& field) {
  if (!j.contains(key)) return;
  try {
    field = j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string dump(const Json& j) { return j.dump(1) + "\n"; }

Json parse_json(const std::string& text, const std::string& name) {
  try {
    return Json::parse(text);
  } catch (const Json::exception& e) {
    throw ParseError(name + ": " + e.what());
  }
}

constexpr const char* kManifestName = "manifest.json";

const char* kWorld = "world.json";
const char* kDataRm = "data_rm.jsonl";
const char* kDataMo = "data_mo.jsonl";
const char* kRewardModels = "reward_models.json";
const char* kTargets = "targets.jsonl";
const char* kOrchestrator = "orchestrator.json";
const char* kPolicyFixed = "policy_fixed.json";
const char* kPolicyAdaptive = "policy_adaptive.json";
const char* kConditionedOffline = "conditioned_offline.json";
const char* kConditionedOnline = "conditioned_online.json";
const char* kOnlineLog = "online_log.csv";

void write_objective_header(std::ostream& out, int K) {
  out << "method";
  for (int k = 1; k <= K; ++k) out << ",r_" << k;
  out << '\n';
}

void write_objective_row(std::ostream& out, const std::string& method, const Vector& r) {
  out << method;
  for (Eigen::Index k = 0; k < r.size(); ++k) out << ',' << format_number(r[k]);
  out << '\n';
}

}  // namespace

void RunConfig::validate() const {
  world.validate();
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  if (!(beta > 0.0)) throw ConfigError("beta must be positive");
  if (data.rm_pairs < 1 || data.mo_pairs < 1) throw ConfigError("dataset sizes must be positive");
  if (rewards.hidden < 1 || rewards.epochs < 1 || rewards.batch_size < 1 || !(rewards.learning_rate > 0.0))
    throw ConfigError("invalid reward training config");
  if (orchestrator.hidden < 1 || orchestrator.epochs < 1 || orchestrator.batch_size < 1 ||
      !(orchestrator.learning_rate > 0.0))
    throw ConfigError("invalid orchestrator training config");
  if (policy.max_steps < 1 || !(policy.initial_step > 0.0) || !(policy.max_step >= policy.initial_step))
    throw ConfigError("invalid policy optimization config");
  if (offline.hidden < 1 || offline.epochs < 1 || offline.batch_size < 1 || !(offline.learning_rate > 0.0))
    throw ConfigError("invalid offline conditioned-policy config");
  if (offline_records < 1) throw ConfigError("offline_records must be positive");
  if (!(held_out_fraction > 0.0 && held_out_fraction < 1.0))
    throw ConfigError("held_out_fraction must lie strictly between 0 and 1");
  if (online.epochs < 0 || online.prompts_per_epoch < 1 || online.candidates < 1 || online.fit.epochs < 1 ||
      online.fit.batch_size < 1 || !(online.fit.learning_rate > 0.0))
    throw ConfigError("invalid online config");
  if (theorem1.sample_sizes.empty() || theorem1.seeds.empty()) throw ConfigError("theorem1 needs sample sizes and seeds");
  for (int n : theorem1.sample_sizes)
    if (n < 1) throw ConfigError("theorem1 sample sizes must be positive");
  if (theorem1.reward_pairs < 1) throw ConfigError("theorem1 reward_pairs must be positive");
  if (curve_steps < 1) throw ConfigError("curve_steps must be positive");
  if (pareto_divisions < 1) throw ConfigError("pareto_divisions must be positive");
}

Json to_json(const RunConfig& c) {
  return {{"world", to_json(c.world)},
          {"seed", c.seed},
          {"tau", c.tau},
          {"beta", c.beta},
          {"data", {{"rm_pairs", c.data.rm_pairs}, {"mo_pairs", c.data.mo_pairs}}},
          {"rewards", to_json(c.rewards)},
          {"orchestrator", to_json(c.orchestrator)},
          {"policy", to_json(c.policy)},
          {"offline", to_json(c.offline)},
          {"offline_records", c.offline_records},
          {"held_out_fraction", c.held_out_fraction},
          {"online", to_json(c.online)},
          {"theorem1",
           {{"sample_sizes", c.theorem1.sample_sizes},
            {"seeds", c.theorem1.seeds},
            {"reward_pairs", c.theorem1.reward_pairs},
            {"orchestrator_steps", c.theorem1.orchestrator_steps}}},
          {"curve_steps", c.curve_steps},
          {"pareto_divisions", c.pareto_divisions}};
}

RunConfig run_config_from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("run config must be an object");
  reject_unknown_keys(j,
                      {"world", "seed", "tau", "beta", "data", "rewards", "orchestrator", "policy", "offline",
                       "offline_records", "held_out_fraction", "online", "theorem1", "curve_steps",
                       "pareto_divisions"},
                      "run config");
  RunConfig c;
  if (j.contains("world")) c.world = world_config_from_json(j.at("world"));
  read_if_present(j, "seed", c.seed);
  read_if_present(j, "tau", c.tau);
  read_if_present(j, "beta", c.beta);
  if (j.contains("data")) {
    const Json& d = j.at("data");
    reject_unknown_keys(d, {"rm_pairs", "mo_pairs"}, "data config");
    read_if_present(d, "rm_pairs", c.data.rm_pairs);
    read_if_present(d, "mo_pairs", c.data.mo_pairs);
  }
  if (j.contains("rewards")) c.rewards = reward_train_config_from_json(j.at("rewards"));
  if (j.contains("orchestrator")) {
    // unset keys keep the run defaults rather than the bare struct defaults
    Json merged = to_json(c.orchestrator);
    merged.update(j.at("orchestrator"));
    c.orchestrator = orchestrator_train_config_from_json(merged);
  }
  if (j.contains("policy")) c.policy = policy_optim_config_from_json(j.at("policy"));
  if (j.contains("offline")) c.offline = conditioned_train_config_from_json(j.at("offline"));
  read_if_present(j, "offline_records", c.offline_records);
  read_if_present(j, "held_out_fraction", c.held_out_fraction);
  if (j.contains("online")) c.online = online_config_from_json(j.at("online"));
  if (j.contains("theorem1")) {
    const Json& t = j.at("theorem1");
    reject_unknown_keys(t, {"sample_sizes", "seeds", "reward_pairs", "orchestrator_steps"}, "theorem1 config");
    read_if_present(t, "sample_sizes", c.theorem1.sample_sizes);
    read_if_present(t, "seeds", c.theorem1.seeds);
    read_if_present(t, "reward_pairs", c.theorem1.reward_pairs);
    read_if_present(t, "orchestrator_steps", c.theorem1.orchestrator_steps);
  }
  read_if_present(j, "curve_steps", c.curve_steps);
  read_if_present(j, "pareto_divisions", c.pareto_divisions);
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  const std::string text = read_file(path);
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return run_config_from_json(j);
}

std::string config_hash(const RunConfig& config) { return content_hash(to_json(config).dump()); }

RandomState stage_rng(std::uint64_t seed, std::string_view stage) {
  const std::uint64_t tag = std::stoull(content_hash(stage), nullptr, 16);
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(tag), std::uint32_t(tag >> 32)};
  return RandomState(seq);
}

ArtifactStore::ArtifactStore(std::filesystem::path root, std::string config_hash, bool force)
    : root_(std::move(root)), config_hash_(std::move(config_hash)), force_(force) {
  std::error_code ec;
  std::filesystem::create_directories(root_, ec);
  if (ec) throw IoError("cannot create artifact directory " + root_.string() + ": " + ec.message());
  const auto manifest_path = root_ / kManifestName;
  if (std::filesystem::exists(manifest_path)) {
    manifest_ = parse_json(read_file(manifest_path.string()), manifest_path.string());
    if (!manifest_.is_object() || !manifest_.contains("artifacts") || !manifest_.at("artifacts").is_object())
      throw ParseError(manifest_path.string() + ": not a manifest");
  } else {
    manifest_ = {{"version", kFormatVersion}, {"kind", "manifest"}, {"artifacts", Json::object()}};
  }
}

bool ArtifactStore::has(const std::string& name) const {
  return manifest_.at("artifacts").contains(name) && std::filesystem::exists(path(name));
}

std::string ArtifactStore::read(const std::string& name, std::string_view stage) const {
  if (!has(name))
    throw DataError("missing upstream artifact '" + name + "' in " + root_.string() + "; run `prolab " +
                    std::string(stage) + "` first");
  const Json& entry = manifest_.at("artifacts").at(name);
  std::string contents = read_file(path(name).string());
  if (force_) return contents;
  if (content_hash(contents) != entry.at("content_hash").get<std::string>())
    throw DataError("artifact '" + name + "' was modified after `prolab " + std::string(stage) +
                    "` wrote it; rerun that stage or pass --force");
  if (entry.at("config_hash").get<std::string>() != config_hash_)
    throw DataError("artifact '" + name + "' was produced under config " + entry.at("config_hash").get<std::string>() +
                    " but the current config is " + config_hash_ + "; rerun `prolab " + std::string(stage) +
                    "` or pass --force");
  return contents;
}

void ArtifactStore::write(const std::string& name, std::string_view contents, std::string_view stage,
                          const std::vector<std::string>& inputs, const Json& params) {
  Json input_hashes = Json::object();
  for (const auto& in : inputs) {
    const Json& artifacts = manifest_.at("artifacts");
    input_hashes[in] = artifacts.contains(in) ? artifacts.at(in).at("content_hash") : Json(nullptr);
  }
  write_file(path(name).string(), contents);
  manifest_["artifacts"][name] = {{"stage", std::string(stage)},
                                  {"config_hash", config_hash_},
                                  {"content_hash", content_hash(contents)},
                                  {"inputs", input_hashes},
                                  {"params", params},
                                  {"created_at", utc_timestamp()}};
  save_manifest();
}

void ArtifactStore::save_manifest() const { write_file((root_ / kManifestName).string(), dump(manifest_)); }

std::string manifest_hash(const Json& manifest) {
  Json copy = manifest;
  if (copy.contains("artifacts"))
    for (auto& [name, entry] : copy["artifacts"].items()) entry.erase("created_at");
  return content_hash(copy.dump());
}

DataKind parse_data_kind(std::string_view name) {
  if (name == "rm") return DataKind::Rm;
  if (name == "mo") return DataKind::Mo;
  throw ConfigError("unknown dataset kind '" + std::string(name) + "' (expected rm or mo)");
}

TrainStage parse_train_stage(std::string_view name) {
  for (TrainStage s : {TrainStage::Rewards, TrainStage::Orchestrator, TrainStage::PolicyFixed,
                       TrainStage::PolicyAdaptive, TrainStage::ConditionedOffline, TrainStage::ConditionedOnline})
    if (to_string(s) == name) return s;
  throw ConfigError("unknown training stage '" + std::string(name) + "'");
}

EvalKind parse_eval_kind(std::string_view name) {
  for (EvalKind k : {EvalKind::Gap, EvalKind::Theorem1, EvalKind::Pareto, EvalKind::Curves})
    if (to_string(k) == name) return k;
  throw ConfigError("unknown evaluation '" + std::string(name) + "'");
}

std::string_view to_string(TrainStage stage) {
  switch (stage) {
    case TrainStage::Rewards: return "rewards";
    case TrainStage::Orchestrator: return "orchestrator";
    case TrainStage::PolicyFixed: return "policy-fixed";
    case TrainStage::PolicyAdaptive: return "policy-adaptive";
    case TrainStage::ConditionedOffline: return "conditioned-offline";
    case TrainStage::ConditionedOnline: return "conditioned-online";
  }
  return "";
}

std::string_view to_string(EvalKind kind) {
  switch (kind) {
    case EvalKind::Gap: return "gap";
    case EvalKind::Theorem1: return "theorem1";
    case EvalKind::Pareto: return "pareto";
    case EvalKind::Curves: return "curves";
  }
  return "";
}

Pipeline::Pipeline(RunConfig config, std::filesystem::path root, bool force)
    : config_(std::move(config)), store_((config_.validate(), std::move(root)), config_hash(config_), force) {}

World Pipeline::load_world() const {
  return world_from_json(parse_json(store_.read(kWorld, "make-world"), kWorld));
}

std::vector<RewardModel> Pipeline::load_reward_models() const {
  return reward_models_from_json(parse_json(store_.read(kRewardModels, "train rewards"), kRewardModels));
}

Orchestrator Pipeline::load_orchestrator() const {
  return orchestrator_from_json(parse_json(store_.read(kOrchestrator, "train orchestrator"), kOrchestrator));
}

void Pipeline::make_world() {
  const World world = build_world(config_.world, config_.seed);
  store_.write(kWorld, dump(world_to_json(world)), "make-world", {});
}

void Pipeline::gen_data(DataKind kind, std::optional<int> count) {
  const World world = load_world();
  std::ostringstream out;
  if (kind == DataKind::Rm) {
    const int n = count.value_or(config_.data.rm_pairs);
    if (n < 1) throw ParameterError("dataset size must be positive");
    RandomState rng = stage_rng(config_.seed, "gen-data rm");
    write_preference_pairs(out, sample_preference_dataset(world, n, rng));
    store_.write(kDataRm, out.str(), "gen-data rm", {kWorld}, {{"count", n}});
  } else {
    const int n = count.value_or(config_.data.mo_pairs);
    if (n < 1) throw ParameterError("dataset size must be positive");
    RandomState rng = stage_rng(config_.seed, "gen-data mo");
    write_multiobjective_pairs(out, sample_multiobjective_dataset(world, n, rng));
    store_.write(kDataMo, out.str(), "gen-data mo", {kWorld}, {{"count", n}});
  }
}

void Pipeline::train(TrainStage stage) {
  const std::string stage_name = "train " + std::string(to_string(stage));
  RandomState rng = stage_rng(config_.seed, stage_name);
  const World world = load_world();
  const auto [train_prompts, held_out] = split_prompts(world.prompts(), config_.held_out_fraction, config_.seed);

  switch (stage) {
    case TrainStage::Rewards: {
      std::istringstream in(store_.read(kDataMo, "gen-data mo"));
      const auto pairs = read_multiobjective_pairs(in);
      std::vector<RewardModel> models;
      for (int k = 0; k < world.objectives(); ++k)
        models.push_back(train_reward_model(project_to_objective(pairs, k), k, world.features, world.responses(),
                                            config_.rewards, rng)
                             .model);
      store_.write(kRewardModels, dump(reward_models_to_json(models)), stage_name, {kWorld, kDataMo});
      break;
    }
    case TrainStage::Orchestrator: {
      const auto models = load_reward_models();
      std::istringstream in(store_.read(kDataRm, "gen-data rm"));
      const auto pairs = read_preference_pairs(in);
      const auto targets = build_targets(pairs, models, world, config_.tau);
      std::ostringstream target_out;
      write_weight_targets(target_out, targets);
      store_.write(kTargets, target_out.str(), stage_name, {kWorld, kDataRm, kRewardModels});
      const auto trained = train_orchestrator(to_examples(targets, world), config_.orchestrator, rng, config_.tau);
      store_.write(kOrchestrator, dump(orchestrator_to_json(trained.params)), stage_name,
                   {kWorld, kDataRm, kRewardModels}, {{"pairs", pairs.size()}});
      break;
    }
    case TrainStage::PolicyFixed: {
      const auto models = load_reward_models();
      const WeightVector uniform = WeightVector::uniform(world.objectives());
      const auto result = optimize_policy_fixed(uniform, models, world, config_.beta, config_.policy);
      const Matrix used = Matrix::Constant(world.prompts(), world.objectives(), 1.0 / world.objectives());
      store_.write(kPolicyFixed, dump(tabular_policy_to_json(result.policy, used)), stage_name,
                   {kWorld, kRewardModels});
      break;
    }
    case TrainStage::PolicyAdaptive: {
      const auto models = load_reward_models();
      const Orchestrator orch = load_orchestrator();
      const auto result = optimize_policy_adaptive(orch, models, world, config_.beta, config_.policy);
      store_.write(kPolicyAdaptive, dump(tabular_policy_to_json(result.policy, orchestrator_weights(orch, world))),
                   stage_name, {kWorld, kRewardModels, kOrchestrator});
      break;
    }
    case TrainStage::ConditionedOffline: {
      const auto models = load_reward_models();
      const auto records =
          build_offline_records(world, models, train_prompts, config_.offline_records, config_.tau, rng);
      const auto result = fit_conditioned_offline(records, world.responses(), config_.offline, rng);
      store_.write(kConditionedOffline, dump(conditioned_policy_to_json(result.policy)), stage_name,
                   {kWorld, kRewardModels});
      break;
    }
    case TrainStage::ConditionedOnline: {
      const auto models = load_reward_models();
      const Orchestrator orch = load_orchestrator();
      const ConditionedPolicy warm = conditioned_policy_from_json(
          parse_json(store_.read(kConditionedOffline, "train conditioned-offline"), kConditionedOffline));
      const auto result = online_refine(warm, orch, models, world, train_prompts, config_.online, rng);
      std::ostringstream log;
      log << "epoch,mean_sampled_reward,mean_kept_reward,loss,drift\n";
      for (std::size_t e = 0; e < result.epochs.size(); ++e) {
        const auto& s = result.epochs[e];
        log << e + 1 << ',' << format_number(s.mean_sampled_reward) << ',' << format_number(s.mean_kept_reward)
            << ',' << format_number(s.loss) << ',' << format_number(s.drift) << '\n';
      }
      const std::vector<std::string> inputs{kWorld, kRewardModels, kOrchestrator, kConditionedOffline};
      store_.write(kConditionedOnline, dump(conditioned_policy_to_json(result.policy)), stage_name, inputs);
      store_.write(kOnlineLog, log.str(), stage_name, inputs);
      break;
    }
  }
}

void Pipeline::eval(EvalKind kind, bool offline_policy) {
  const std::string stage_name = "eval " + std::string(to_string(kind));
  const World world = load_world();
  const int K = world.objectives();

  switch (kind) {
    case EvalKind::Gap: {
      const auto models = load_reward_models();
      const auto tables = reward_tables(models, world);
      std::istringstream targets_in(store_.read(kTargets, "train orchestrator"));
      const int n = static_cast<int>(read_weight_targets(targets_in).size());
      std::vector<GapReport> reports;
      for (const auto& [file, method, stage] :
           {std::tuple{kPolicyFixed, "fixed", "train policy-fixed"},
            std::tuple{kPolicyAdaptive, "adaptive", "train policy-adaptive"}}) {
        const auto [policy, used] = tabular_policy_from_json(parse_json(store_.read(file, stage), file));
        GapReport r = align_gap(policy, used, world, tables, config_.beta, method);
        r.n = n;
        r.seed = config_.seed;
        if (r.per_prompt.minCoeff() < -1e-9)
          throw DataError("invariant violated: negative alignment gap for the " + r.method + " policy");
        reports.push_back(std::move(r));
      }
      std::ostringstream out;
      write_gap_csv(out, reports);
      store_.write("gap.csv", out.str(), stage_name,
                   {kWorld, kRewardModels, kTargets, kPolicyFixed, kPolicyAdaptive});
      break;
    }
    case EvalKind::Theorem1: {
      Theorem1Config tc;
      tc.sample_sizes = config_.theorem1.sample_sizes;
      tc.seeds = config_.theorem1.seeds;
      tc.tau = config_.tau;
      tc.beta = config_.beta;
      tc.reward_pairs = config_.theorem1.reward_pairs;
      tc.orchestrator_steps = config_.theorem1.orchestrator_steps;
      tc.rewards = config_.rewards;
      tc.orchestrator = config_.orchestrator;
      tc.policy = config_.policy;
      const auto rows = theorem1_experiment(world, tc);
      for (const auto& r : rows)
        if (r.align_gap < -1e-9) throw DataError("invariant violated: negative alignment gap in the " + r.method + " arm");
      std::ostringstream out;
      write_theorem1_csv(out, rows);
      store_.write("theorem1.csv", out.str(), stage_name, {kWorld});
      break;
    }
    case EvalKind::Pareto: {
      const auto models = load_reward_models();
      const auto tables = reward_tables(models, world);
      const Orchestrator orch = load_orchestrator();
      const char* policy_file = offline_policy ? kConditionedOffline : kConditionedOnline;
      const char* policy_stage = offline_policy ? "train conditioned-offline" : "train conditioned-online";
      const ConditionedPolicy policy =
          conditioned_policy_from_json(parse_json(store_.read(policy_file, policy_stage), policy_file));
      const auto held_out = split_prompts(world.prompts(), config_.held_out_fraction, config_.seed).second;
      const auto grid = simplex_grid(K, config_.pareto_divisions);
      const std::vector<std::string> inputs{kWorld, kRewardModels, kOrchestrator, policy_file};

      std::ostringstream frontier;
      write_frontier_csv(frontier, pareto_sweep(policy, world, tables, grid, held_out));
      store_.write("pareto.csv", frontier.str(), stage_name, inputs);
      std::ostringstream oracle;
      write_frontier_csv(oracle, pareto_sweep_gibbs(world, tables, config_.beta, grid, held_out));
      store_.write("pareto_gibbs.csv", oracle.str(), stage_name, inputs);

      const std::vector<WeightVector> equal{WeightVector::uniform(K)};
      Vector adapter = Vector::Zero(K);
      for (int p : held_out) {
        const Vector probs = policy.probabilities(world.prompt_features(p), forward(orch, world.prompt_features(p)));
        for (int k = 0; k < K; ++k) adapter[k] += probs.dot(tables[std::size_t(k)].row(p).transpose());
      }
      adapter /= double(held_out.size());
      std::ostringstream out;
      write_objective_header(out, K);
      write_objective_row(out, "gibbs-uniform",
                          pareto_sweep_gibbs(world, tables, config_.beta, equal, held_out).front().mean_rewards);
      write_objective_row(out, "conditioned-uniform",
                          pareto_sweep(policy, world, tables, equal, held_out).front().mean_rewards);
      write_objective_row(out, "conditioned-adapter", adapter);
      store_.write("equal_weights.csv", out.str(), stage_name, inputs);
      break;
    }
    case EvalKind::Curves: {
      const auto models = load_reward_models();
      const Orchestrator orch = load_orchestrator();
      const auto curves = learning_curves(orch, world, reward_tables(models, world), config_.beta, config_.curve_steps);
      std::ostringstream out;
      write_curves_csv(out, curves);
      store_.write("curves.csv", out.str(), stage_name, {kWorld, kRewardModels, kOrchestrator});
      break;
    }
  }
}

void Pipeline::run_all() {
  make_world();
  gen_data(DataKind::Rm);
  gen_data(DataKind::Mo);
  for (TrainStage s : {TrainStage::Rewards, TrainStage::Orchestrator, TrainStage::PolicyFixed,
                       TrainStage::PolicyAdaptive, TrainStage::ConditionedOffline, TrainStage::ConditionedOnline})
    train(s);
  for (EvalKind k : {EvalKind::Gap, EvalKind::Theorem1, EvalKind::Pareto, EvalKind::Curves}) eval(k);
}

}  // namespace prolab
