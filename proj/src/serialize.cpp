#include "prolab/serialize.hpp"

#include <fstream>
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

void check_document(const Json& j, std::string_view kind) {
  if (!j.is_object() || !j.contains("version") || !j.contains("kind"))
    throw ParseError("document is missing its version or kind field");
  if (j.at("version").get<int>() != kFormatVersion)
    throw ParseError("unsupported format version " + j.at("version").dump());
  if (j.at("kind").get<std::string>() != kind)
    throw ParseError("expected a '" + std::string(kind) + "' document, got '" + j.at("kind").get<std::string>() + "'");
}

Json mlp_to_json(const Mlp& net) {
  return {{"inputs", net.inputs()},
          {"hidden", net.hidden()},
          {"outputs", net.outputs()},
          {"activation", "tanh"},
          {"params", vector_to_json(net.params())}};
}

Mlp mlp_from_json(const Json& j) {
  if (j.at("activation").get<std::string>() != "tanh") throw ParseError("unsupported activation");
  Mlp net(j.at("inputs").get<int>(), j.at("hidden").get<int>(), j.at("outputs").get<int>());
  net.set_params(vector_from_json(j.at("params")));
  if (!net.params().allFinite()) throw ParseError("network parameters are not finite");
  return net;
}

const char* family_name(RewardFamily f) { return f == RewardFamily::Linear ? "linear" : "network"; }

const char* family_name(WeightFamily f) {
  switch (f) {
    case WeightFamily::Constant: return "constant";
    case WeightFamily::Piecewise: return "piecewise";
    case WeightFamily::Smooth: return "smooth";
  }
  return "smooth";
}

template <typename Parse>
auto read_lines(std::istream& in, Parse parse) {
  std::vector<decltype(parse(Json{}))> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(parse(Json::parse(line)));
    } catch (const Json::exception& e) {
      throw ParseError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace

void reject_unknown_keys(const Json& object, std::initializer_list<std::string_view> allowed, std::string_view context) {
  if (!object.is_object()) throw ConfigError(std::string(context) + " must be an object");
  for (const auto& [key, value] : object.items()) {
    bool known = false;
    for (auto a : allowed) known = known || key == a;
    if (!known) throw ConfigError("unknown key '" + key + "' in " + std::string(context));
  }
}

Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const Json& j) {
  if (!j.is_array()) throw ParseError("matrix must be an array of rows");
  if (j.empty()) return Matrix(0, 0);
  const auto cols = static_cast<Eigen::Index>(j.at(0).size());
  Matrix m(static_cast<Eigen::Index>(j.size()), cols);
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (static_cast<Eigen::Index>(j[i].size()) != cols) throw ParseError("ragged matrix");
    for (Eigen::Index c = 0; c < cols; ++c) m(Eigen::Index(i), c) = j[i][std::size_t(c)].get<double>();
  }
  return m;
}

Json vector_to_json(const Vector& v) { return Json(std::vector<double>(v.data(), v.data() + v.size())); }

Vector vector_from_json(const Json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

Json to_json(const WorldConfig& c) {
  return {{"feature_dim", c.feature_dim},
          {"objectives", c.objectives},
          {"responses", c.responses},
          {"prompts", c.prompts},
          {"reward_family", family_name(c.reward_family)},
          {"embedding_dim", c.embedding_dim},
          {"reward_hidden", c.reward_hidden},
          {"reward_scale", c.reward_scale},
          {"center_rewards", c.center_rewards},
          {"standardize_rewards", c.standardize_rewards},
          {"weight_family", family_name(c.weight_family)},
          {"constant_weight", c.constant_weight},
          {"weight_sharpness", c.weight_sharpness},
          {"ref_floor", c.ref_floor},
          {"ref_concentration", c.ref_concentration},
          {"preference_noise", c.preference_noise}};
}

WorldConfig world_config_from_json(const Json& j) {
  reject_unknown_keys(j,
                      {"feature_dim", "objectives", "responses", "prompts", "reward_family", "embedding_dim",
                       "reward_hidden", "reward_scale", "center_rewards", "standardize_rewards", "weight_family", "constant_weight",
                       "weight_sharpness", "ref_floor", "ref_concentration", "preference_noise"},
                      "world config");
  WorldConfig c;
  read_if_present(j, "feature_dim", c.feature_dim);
  read_if_present(j, "objectives", c.objectives);
  read_if_present(j, "responses", c.responses);
  read_if_present(j, "prompts", c.prompts);
  read_if_present(j, "embedding_dim", c.embedding_dim);
  read_if_present(j, "reward_hidden", c.reward_hidden);
  read_if_present(j, "reward_scale", c.reward_scale);
  read_if_present(j, "center_rewards", c.center_rewards);
  read_if_present(j, "standardize_rewards", c.standardize_rewards);
  read_if_present(j, "constant_weight", c.constant_weight);
  read_if_present(j, "weight_sharpness", c.weight_sharpness);
  read_if_present(j, "ref_floor", c.ref_floor);
  read_if_present(j, "ref_concentration", c.ref_concentration);
  read_if_present(j, "preference_noise", c.preference_noise);
  std::string family;
  read_if_present(j, "reward_family", family);
  if (family == "network")
    c.reward_family = RewardFamily::Network;
  else if (!family.empty() && family != "linear")
    throw ConfigError("unknown reward family '" + family + "'");
  family.clear();
  read_if_present(j, "weight_family", family);
  if (family == "constant")
    c.weight_family = WeightFamily::Constant;
  else if (family == "piecewise")
    c.weight_family = WeightFamily::Piecewise;
  else if (!family.empty() && family != "smooth")
    throw ConfigError("unknown weight family '" + family + "'");
  return c;
}

Json to_json(const RewardTrainConfig& c) {
  return {{"hidden", c.hidden},         {"learning_rate", c.learning_rate}, {"epochs", c.epochs},
          {"batch_size", c.batch_size}, {"weight_decay", c.weight_decay},   {"zero_output_init", c.zero_output_init}};
}

RewardTrainConfig reward_train_config_from_json(const Json& j) {
  reject_unknown_keys(j, {"hidden", "learning_rate", "epochs", "batch_size", "weight_decay", "zero_output_init"},
                      "reward training config");
  RewardTrainConfig c;
  read_if_present(j, "hidden", c.hidden);
  read_if_present(j, "learning_rate", c.learning_rate);
  read_if_present(j, "epochs", c.epochs);
  read_if_present(j, "batch_size", c.batch_size);
  read_if_present(j, "weight_decay", c.weight_decay);
  read_if_present(j, "zero_output_init", c.zero_output_init);
  return c;
}

Json to_json(const OrchestratorTrainConfig& c) {
  return {{"hidden", c.hidden},         {"learning_rate", c.learning_rate}, {"epochs", c.epochs},
          {"batch_size", c.batch_size}, {"weight_decay", c.weight_decay},   {"zero_output_init", c.zero_output_init}};
}

OrchestratorTrainConfig orchestrator_train_config_from_json(const Json& j) {
  reject_unknown_keys(j, {"hidden", "learning_rate", "epochs", "batch_size", "weight_decay", "zero_output_init"},
                      "orchestrator training config");
  OrchestratorTrainConfig c;
  read_if_present(j, "hidden", c.hidden);
  read_if_present(j, "learning_rate", c.learning_rate);
  read_if_present(j, "epochs", c.epochs);
  read_if_present(j, "batch_size", c.batch_size);
  read_if_present(j, "weight_decay", c.weight_decay);
  read_if_present(j, "zero_output_init", c.zero_output_init);
  return c;
}

Json to_json(const PolicyOptimConfig& c) {
  return {{"max_steps", c.max_steps}, {"initial_step", c.initial_step},
          {"max_step", c.max_step},   {"gradient_tolerance", c.gradient_tolerance},
          {"armijo", c.armijo},       {"run_all_steps", c.run_all_steps},
          {"natural_gradient", c.natural_gradient}};
}

PolicyOptimConfig policy_optim_config_from_json(const Json& j) {
  reject_unknown_keys(j, {"max_steps", "initial_step", "max_step", "gradient_tolerance", "armijo", "run_all_steps",
                       "natural_gradient"},
                      "policy optimization config");
  PolicyOptimConfig c;
  read_if_present(j, "max_steps", c.max_steps);
  read_if_present(j, "initial_step", c.initial_step);
  read_if_present(j, "max_step", c.max_step);
  read_if_present(j, "gradient_tolerance", c.gradient_tolerance);
  read_if_present(j, "armijo", c.armijo);
  read_if_present(j, "run_all_steps", c.run_all_steps);
  read_if_present(j, "natural_gradient", c.natural_gradient);
  return c;
}

Json to_json(const ConditionedTrainConfig& c) {
  return {{"hidden", c.hidden},
          {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"weight_decay", c.weight_decay}};
}

ConditionedTrainConfig conditioned_train_config_from_json(const Json& j) {
  reject_unknown_keys(j, {"hidden", "learning_rate", "batch_size", "epochs", "weight_decay"},
                      "conditioned training config");
  ConditionedTrainConfig c;
  read_if_present(j, "hidden", c.hidden);
  read_if_present(j, "learning_rate", c.learning_rate);
  read_if_present(j, "batch_size", c.batch_size);
  read_if_present(j, "epochs", c.epochs);
  read_if_present(j, "weight_decay", c.weight_decay);
  return c;
}

Json to_json(const OnlineConfig& c) {
  return {{"epochs", c.epochs},
          {"prompts_per_epoch", c.prompts_per_epoch},
          {"candidates", c.candidates},
          {"fit", to_json(c.fit)}};
}

OnlineConfig online_config_from_json(const Json& j) {
  reject_unknown_keys(j, {"epochs", "prompts_per_epoch", "candidates", "fit"}, "online config");
  OnlineConfig c;
  read_if_present(j, "epochs", c.epochs);
  read_if_present(j, "prompts_per_epoch", c.prompts_per_epoch);
  read_if_present(j, "candidates", c.candidates);
  if (j.contains("fit")) {
    // hidden width is fixed by the warm-started policy
    c.fit = conditioned_train_config_from_json(j.at("fit"));
  }
  return c;
}

Json world_to_json(const World& w) {
  Json reward_params = {{"embeddings", matrix_to_json(w.reward_params.embeddings)},
                        {"maps", Json::array()},
                        {"offsets", Json::array()},
                        {"readouts", Json::array()}};
  for (const auto& m : w.reward_params.maps) reward_params["maps"].push_back(matrix_to_json(m));
  for (const auto& v : w.reward_params.offsets) reward_params["offsets"].push_back(vector_to_json(v));
  for (const auto& v : w.reward_params.readouts) reward_params["readouts"].push_back(vector_to_json(v));
  Json weight_params = {{"map", matrix_to_json(w.weight_params.map)},
                        {"bias", vector_to_json(w.weight_params.bias)},
                        {"pieces", Json::array()}};
  for (const auto& v : w.weight_params.pieces) weight_params["pieces"].push_back(vector_to_json(v));
  Json rewards = Json::array();
  for (const auto& t : w.rewards) rewards.push_back(matrix_to_json(t));
  return {{"version", kFormatVersion},
          {"kind", "world"},
          {"config", to_json(w.config)},
          {"seed", w.seed},
          {"features", matrix_to_json(w.features)},
          {"rewards", rewards},
          {"ref_policy", matrix_to_json(w.ref_policy)},
          {"true_weights", matrix_to_json(w.true_weights)},
          {"reward_params", reward_params},
          {"weight_params", weight_params}};
}

World world_from_json(const Json& j) {
  check_document(j, "world");
  World w;
  w.config = world_config_from_json(j.at("config"));
  w.config.validate();
  w.seed = j.at("seed").get<std::uint64_t>();
  w.features = matrix_from_json(j.at("features"));
  for (const auto& t : j.at("rewards")) w.rewards.push_back(matrix_from_json(t));
  w.ref_policy = matrix_from_json(j.at("ref_policy"));
  w.true_weights = matrix_from_json(j.at("true_weights"));
  const Json& rp = j.at("reward_params");
  w.reward_params.embeddings = matrix_from_json(rp.at("embeddings"));
  for (const auto& m : rp.at("maps")) w.reward_params.maps.push_back(matrix_from_json(m));
  for (const auto& v : rp.at("offsets")) w.reward_params.offsets.push_back(vector_from_json(v));
  for (const auto& v : rp.at("readouts")) w.reward_params.readouts.push_back(vector_from_json(v));
  const Json& wp = j.at("weight_params");
  w.weight_params.map = matrix_from_json(wp.at("map"));
  w.weight_params.bias = vector_from_json(wp.at("bias"));
  for (const auto& v : wp.at("pieces")) w.weight_params.pieces.push_back(vector_from_json(v));

  if (w.features.rows() != w.prompts() || w.features.cols() != w.feature_dim() ||
      static_cast<int>(w.rewards.size()) != w.objectives() || w.ref_policy.rows() != w.prompts() ||
      w.ref_policy.cols() != w.responses() || w.true_weights.rows() != w.prompts() ||
      w.true_weights.cols() != w.objectives())
    throw ParseError("world tables do not match the world config");
  return w;
}

Json reward_models_to_json(std::span<const RewardModel> models) {
  Json list = Json::array();
  for (const auto& m : models) {
    list.push_back({{"objective", m.objective},
                    {"architecture",
                     {{"feature_dim", m.feature_dim},
                      {"responses", m.responses},
                      {"input", "features+one_hot_response"},
                      {"output", 1}}},
                    {"net", mlp_to_json(m.net)}});
  }
  return {{"version", kFormatVersion}, {"kind", "reward_models"}, {"models", list}};
}

std::vector<RewardModel> reward_models_from_json(const Json& j) {
  check_document(j, "reward_models");
  std::vector<RewardModel> models;
  for (const auto& m : j.at("models")) {
    const Json& arch = m.at("architecture");
    RewardModel model{m.at("objective").get<int>(), arch.at("feature_dim").get<int>(),
                      arch.at("responses").get<int>(), mlp_from_json(m.at("net"))};
    if (model.net.inputs() != model.feature_dim + model.responses || model.net.outputs() != 1)
      throw ParseError("reward model network does not match its architecture descriptor");
    models.push_back(std::move(model));
  }
  return models;
}

Json orchestrator_to_json(const Orchestrator& o) {
  return {{"version", kFormatVersion},
          {"kind", "orchestrator"},
          {"feature_dim", o.feature_dim},
          {"objectives", o.objectives},
          {"tau", o.tau},
          {"net", mlp_to_json(o.net)}};
}

Orchestrator orchestrator_from_json(const Json& j) {
  check_document(j, "orchestrator");
  Orchestrator o{j.at("feature_dim").get<int>(), j.at("objectives").get<int>(), j.at("tau").get<double>(),
                 mlp_from_json(j.at("net"))};
  if (o.net.inputs() != o.feature_dim || o.net.outputs() != o.objectives || o.objectives < 2)
    throw ParseError("orchestrator network does not match its dimensions");
  return o;
}

Json tabular_policy_to_json(const TabularPolicy& policy, const Matrix& weights_used) {
  return {{"version", kFormatVersion},
          {"kind", "tabular_policy"},
          {"probabilities", matrix_to_json(policy.probabilities())},
          {"weights", matrix_to_json(weights_used)}};
}

std::pair<TabularPolicy, Matrix> tabular_policy_from_json(const Json& j) {
  check_document(j, "tabular_policy");
  return {TabularPolicy(matrix_from_json(j.at("probabilities"))), matrix_from_json(j.at("weights"))};
}

Json conditioned_policy_to_json(const ConditionedPolicy& p) {
  return {{"version", kFormatVersion},
          {"kind", "conditioned_policy"},
          {"feature_dim", p.feature_dim},
          {"objectives", p.objectives},
          {"responses", p.responses},
          {"net", mlp_to_json(p.net)}};
}

ConditionedPolicy conditioned_policy_from_json(const Json& j) {
  check_document(j, "conditioned_policy");
  ConditionedPolicy p{j.at("feature_dim").get<int>(), j.at("objectives").get<int>(), j.at("responses").get<int>(),
                      mlp_from_json(j.at("net"))};
  if (p.net.inputs() != p.feature_dim + p.objectives || p.net.outputs() != p.responses)
    throw ParseError("conditioned policy network does not match its dimensions");
  return p;
}

void write_preference_pairs(std::ostream& out, std::span<const PreferencePair> pairs) {
  for (const auto& p : pairs)
    out << Json{{"prompt_index", p.prompt_index}, {"chosen", p.chosen}, {"rejected", p.rejected}}.dump() << '\n';
}

std::vector<PreferencePair> read_preference_pairs(std::istream& in) {
  return read_lines(in, [](const Json& j) {
    reject_unknown_keys(j, {"prompt_index", "chosen", "rejected"}, "preference record");
    PreferencePair p{j.at("prompt_index").get<int>(), j.at("chosen").get<int>(), j.at("rejected").get<int>()};
    if (p.chosen == p.rejected) throw DataError("preference record compares a response with itself");
    return p;
  });
}

void write_multiobjective_pairs(std::ostream& out, std::span<const MultiObjectivePreferencePair> pairs) {
  for (const auto& p : pairs)
    out << Json{{"prompt_index", p.prompt_index}, {"a", p.response_a}, {"b", p.response_b}, {"labels", p.labels}}.dump()
        << '\n';
}

std::vector<MultiObjectivePreferencePair> read_multiobjective_pairs(std::istream& in) {
  return read_lines(in, [](const Json& j) {
    reject_unknown_keys(j, {"prompt_index", "a", "b", "labels"}, "multi-objective record");
    MultiObjectivePreferencePair p{j.at("prompt_index").get<int>(), j.at("a").get<int>(), j.at("b").get<int>(),
                                   j.at("labels").get<std::vector<int>>()};
    if (p.response_a == p.response_b) throw DataError("multi-objective record compares a response with itself");
    return p;
  });
}

void write_weight_targets(std::ostream& out, std::span<const WeightTargetRecord> targets) {
  for (const auto& t : targets)
    out << Json{{"prompt_index", t.prompt_index}, {"target", vector_to_json(t.target.values())}}.dump() << '\n';
}

std::vector<WeightTargetRecord> read_weight_targets(std::istream& in) {
  return read_lines(in, [](const Json& j) {
    reject_unknown_keys(j, {"prompt_index", "target"}, "target record");
    return WeightTargetRecord{j.at("prompt_index").get<int>(), WeightVector(vector_from_json(j.at("target")))};
  });
}

std::string content_hash(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) out[std::size_t(i)] = digits[h & 0xF];
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw IoError("failed writing '" + path + "'");
}

}  // namespace prolab
