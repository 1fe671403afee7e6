#include "prolab/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

namespace {

std::string default_artifact_root() {
  const char* env = std::getenv("PROLAB_ARTIFACT_ROOT");
  return env && *env ? env : "artifacts";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale lab for preference-orchestrated multi-objective alignment"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = default_artifact_root();
  bool force = false;
  app.add_option("--config", config_path, "Run config (JSON); defaults apply when omitted")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Override the config seed");
  app.add_option("--out", out, "Artifact directory (default: $PROLAB_ARTIFACT_ROOT or ./artifacts)");
  app.add_flag("--force", force, "Accept upstream artifacts from another config or modified on disk");

  auto* make_world = app.add_subcommand("make-world", "Build the synthetic world");

  std::string data_kind;
  std::optional<int> count;
  auto* gen_data = app.add_subcommand("gen-data", "Sample a preference dataset");
  gen_data->add_option("kind", data_kind, "rm (scalar preferences) or mo (per-objective labels)")
      ->required()
      ->check(CLI::IsMember({"rm", "mo"}));
  gen_data->add_option("-n,--count", count, "Number of pairs (default from config)");

  std::string train_stage;
  auto* train = app.add_subcommand("train", "Train one pipeline stage");
  train->add_option("stage", train_stage)
      ->required()
      ->check(CLI::IsMember({"rewards", "orchestrator", "policy-fixed", "policy-adaptive", "conditioned-offline",
                             "conditioned-online"}));

  std::string eval_kind;
  bool offline_policy = false;
  auto* eval = app.add_subcommand("eval", "Write a report table");
  eval->add_option("kind", eval_kind)->required()->check(CLI::IsMember({"gap", "theorem1", "pareto", "curves"}));
  eval->add_flag("--offline", offline_policy, "pareto: sweep the offline warm-up policy");

  auto* all = app.add_subcommand("all", "Run every stage and report in order");
  auto* show_config = app.add_subcommand("show-config", "Print the effective config with all defaults filled in");

  CLI11_PARSE(app, argc, argv);

  try {
    prolab::RunConfig config = config_path.empty() ? prolab::RunConfig{} : prolab::load_run_config(config_path);
    if (seed) config.seed = *seed;
    if (show_config->parsed()) {
      std::cout << prolab::to_json(config).dump(2) << '\n';
      return 0;
    }
    prolab::Pipeline pipeline(config, out, force);

    if (make_world->parsed()) pipeline.make_world();
    if (gen_data->parsed()) pipeline.gen_data(prolab::parse_data_kind(data_kind), count);
    if (train->parsed()) pipeline.train(prolab::parse_train_stage(train_stage));
    if (eval->parsed()) pipeline.eval(prolab::parse_eval_kind(eval_kind), offline_policy);
    if (all->parsed()) pipeline.run_all();
  } catch (const prolab::ConfigError& e) {
    std::cerr << "prolab: config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "prolab: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
