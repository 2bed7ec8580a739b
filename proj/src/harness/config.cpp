#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "metarl/harness.hpp"

namespace metarl {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

const std::vector<std::string> kEnvKeys{"name",        "arms",          "mu_max",    "mu_min",   "rho",         "horizon",
                                        "train_tasks", "heldout_tasks", "task_seed", "scenario", "torque_noise"};
const std::vector<std::string> kAgentKeys{"kind", "hidden", "task_hidden", "belief", "window", "ucb_xi"};
const std::vector<std::string> kTrainKeys{"learning_rate", "entropy",    "critic",    "beta",          "lambda",
                                          "gamma",         "l_steps",    "batch_size", "clip_norm",    "reinforce",
                                          "budget",        "eval_interval", "eval_episodes", "workers"};

[[noreturn]] void bad(const std::string& what) { throw std::invalid_argument("config: " + what); }

double number(const json& v, const std::string& key) {
  if (!v.is_number()) bad("'" + key + "' must be a number");
  return v.get<double>();
}

std::size_t count(const json& v, const std::string& key) {
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0) bad("'" + key + "' must be a non-negative integer");
  return v.get<std::size_t>();
}

std::string text(const json& v, const std::string& key) {
  if (!v.is_string()) bad("'" + key + "' must be a string");
  return v.get<std::string>();
}

void set_env(EnvSpec& e, const std::string& key, const json& v) {
  if (key == "name") e.name = text(v, key);
  else if (key == "arms") e.arms = count(v, key);
  else if (key == "mu_max") e.mu_max = number(v, key);
  else if (key == "mu_min") e.mu_min = number(v, key);
  else if (key == "rho") e.rho = number(v, key);
  else if (key == "horizon") e.horizon = count(v, key);
  else if (key == "train_tasks") e.train_tasks = count(v, key);
  else if (key == "heldout_tasks") e.heldout_tasks = count(v, key);
  else if (key == "task_seed") e.task_seed = count(v, key);
  else if (key == "scenario") {
    const auto s = text(v, key);
    if (s.size() != 1) bad("'scenario' must be a single letter");
    e.scenario = s[0];
  } else if (key == "torque_noise") e.torque_noise = number(v, key);
  else bad("unknown environment key '" + key + "'");
}

void set_agent(AgentSpec& a, const std::string& key, const json& v) {
  if (key == "kind") a.kind = agent_kind_from_string(text(v, key));
  else if (key == "hidden") a.hidden = count(v, key);
  else if (key == "task_hidden") a.task_hidden = count(v, key);
  else if (key == "belief") a.belief = belief_family_from_string(text(v, key));
  else if (key == "window") a.window = count(v, key);
  else if (key == "ucb_xi") a.ucb_xi = number(v, key);
  else bad("unknown agent key '" + key + "'");
}

void set_training(TrainConfig& c, const std::string& key, const json& v) {
  auto& w = c.weights;
  if (key == "learning_rate") w.learning_rate = number(v, key);
  else if (key == "entropy") w.entropy = number(v, key);
  else if (key == "critic") w.critic = number(v, key);
  else if (key == "beta") w.beta = number(v, key);
  else if (key == "lambda") w.lambda = number(v, key);
  else if (key == "gamma") w.gamma = number(v, key);
  else if (key == "l_steps") {
    if (v.is_string() && v.get<std::string>() == "full") {
      w.horizon = kFullEpisode;
    } else {
      w.horizon = count(v, key);
      if (w.horizon == 0) bad("'l_steps' must be positive or \"full\"");
    }
  } else if (key == "batch_size") w.batch_size = count(v, key);
  else if (key == "clip_norm") w.clip_norm = number(v, key);
  else if (key == "reinforce") {
    if (!v.is_boolean()) bad("'reinforce' must be true or false");
    c.reinforce = v.get<bool>();
  } else if (key == "budget") {
    if (!v.is_number()) bad("'budget' must be a number");
    c.budget = static_cast<std::int64_t>(std::llround(v.get<double>()));
  } else if (key == "eval_interval") c.eval_interval = count(v, key);
  else if (key == "eval_episodes") c.eval_episodes = count(v, key);
  else if (key == "workers") c.workers = count(v, key);
  else bad("unknown training key '" + key + "'");
}

std::string value_label(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v.get<double>());
  return buf;
}

bool safe_name(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) return false;
  }
  return s != "." && s != "..";
}

json section(const json& doc, const char* name) {
  if (!doc.contains(name)) return json::object();
  if (!doc[name].is_object()) bad(std::string("'") + name + "' must be an object");
  return doc[name];
}

void check_keys(const json& obj, const std::vector<std::string>& allowed, const char* where) {
  for (const auto& [key, _] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      bad(std::string("unknown ") + where + " key '" + key + "'");
    }
  }
}

json env_json(const EnvSpec& e) {
  json j;
  j["name"] = e.name;
  j["arms"] = e.arms;
  j["mu_max"] = e.mu_max;
  j["mu_min"] = e.mu_min;
  j["rho"] = e.rho;
  j["horizon"] = e.horizon;
  j["train_tasks"] = e.train_tasks;
  j["heldout_tasks"] = e.heldout_tasks;
  j["task_seed"] = e.task_seed;
  j["scenario"] = std::string(1, e.scenario);
  j["torque_noise"] = e.torque_noise;
  return j;
}

json agent_json(const AgentSpec& a) {
  json j;
  j["kind"] = std::string(to_string(a.kind));
  j["hidden"] = a.hidden;
  j["task_hidden"] = a.task_hidden;
  if (a.belief) j["belief"] = std::string(to_string(*a.belief));
  j["window"] = a.window;
  j["ucb_xi"] = a.ucb_xi;
  return j;
}

json training_json(const TrainConfig& c) {
  const auto& w = c.weights;
  json j;
  j["learning_rate"] = w.learning_rate;
  j["entropy"] = w.entropy;
  j["critic"] = w.critic;
  j["beta"] = w.beta;
  j["lambda"] = w.lambda;
  j["gamma"] = w.gamma;
  j["l_steps"] = w.horizon == kFullEpisode ? json("full") : json(w.horizon);
  j["batch_size"] = w.batch_size;
  j["clip_norm"] = w.clip_norm;
  j["reinforce"] = c.reinforce;
  j["budget"] = c.budget;
  j["eval_interval"] = c.eval_interval;
  j["eval_episodes"] = c.eval_episodes;
  j["workers"] = c.workers;
  return j;
}

}  // namespace

ExperimentConfig parse_experiment(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    bad(std::string("not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) bad("top level must be an object");
  for (const auto& [key, _] : doc.items()) {
    if (key != "name" && key != "seeds" && key != "environment" && key != "agent" && key != "training") {
      bad("unknown top-level key '" + key + "'");
    }
  }

  ExperimentConfig out;
  out.name = doc.contains("name") ? text(doc["name"], "name") : "sweep";
  if (!safe_name(out.name)) bad("name '" + out.name + "' must use letters, digits, '_', '-' or '.'");

  json env = section(doc, "environment"), agent = section(doc, "agent"), training = section(doc, "training");
  check_keys(env, kEnvKeys, "environment");
  check_keys(agent, kAgentKeys, "agent");
  check_keys(training, kTrainKeys, "training");
  if (!agent.contains("kind")) bad("agent.kind is required");
  if (!agent["kind"].is_string()) bad("agent.kind must be a single agent name");
  out.method = agent["kind"].get<std::string>();
  const AgentKind kind = agent_kind_from_string(out.method);
  const bool no_aux = out.method == "import_b0";

  if (is_learned(kind)) {
    auto fill = [&](const char* key, json values) {
      if (!training.contains(key)) training[key] = std::move(values);
    };
    fill("learning_rate", json::array({1e-3, 3e-3}));
    fill("entropy", json::array({1e-1, 1e-2, 1e-3}));
    fill("critic", json::array({1.0, 1e-1, 1e-2}));
    if (kind == AgentKind::Import && !no_aux) fill("beta", json::array({1.0, 1e-1, 1e-2, 1e-3}));
    if (kind == AgentKind::Ti) fill("beta", json::array({1.0, 1e-1, 1e-2, 1e-3}));
    if (kind == AgentKind::Import || kind == AgentKind::Ts) fill("lambda", json::array({0.5, 0.75}));
  }
  if (no_aux) {
    if (training.contains("beta") && !(training["beta"].is_number() && training["beta"].get<double>() == 0.0)) {
      bad("import_b0 fixes beta = 0");
    }
    training["beta"] = 0.0;
  }

  out.seeds = {0, 1, 2};
  if (doc.contains("seeds")) {
    const auto& s = doc["seeds"];
    if (!s.is_array() || s.empty()) bad("'seeds' must be a non-empty list");
    out.seeds.clear();
    for (const auto& v : s) out.seeds.push_back(count(v, "seeds"));
  }

  struct Axis {
    int section;
    std::string key;
    json values;
  };
  std::vector<Axis> axes;
  const json* sections[] = {&env, &agent, &training};
  for (int s = 0; s < 3; ++s) {
    for (const auto& [key, value] : sections[s]->items()) {
      if (!value.is_array()) continue;
      if (value.empty()) bad("grid for '" + key + "' is empty");
      if (s == 1 && key == "kind") bad("agent.kind cannot be a grid");
      axes.push_back({s, key, value});
    }
  }

  std::vector<std::size_t> index(axes.size(), 0);
  while (true) {
    GridPoint point;
    point.config.agent.kind = kind;
    std::string label;
    for (int s = 0; s < 3; ++s) {
      for (const auto& [key, value] : sections[s]->items()) {
        json v = value;
        if (value.is_array()) {
          std::size_t a = 0;
          while (axes[a].section != s || axes[a].key != key) ++a;
          v = value[index[a]];
          label += (label.empty() ? "" : ",") + key + "=" + value_label(v);
        }
        if (s == 0) set_env(point.config.env, key, v);
        else if (s == 1) set_agent(point.config.agent, key, v);
        else set_training(point.config, key, v);
      }
    }
    point.label = label.empty() ? "default" : label;
    out.points.push_back(std::move(point));

    std::size_t a = 0;
    for (; a < axes.size(); ++a) {
      if (++index[a] < axes[a].values.size()) break;
      index[a] = 0;
    }
    if (a == axes.size()) break;
  }

  json normalized;
  normalized["name"] = out.name;
  normalized["seeds"] = out.seeds;
  normalized["environment"] = env;
  normalized["agent"] = agent;
  normalized["training"] = training;
  out.source = normalized.dump(2) + "\n";
  return out;
}

ExperimentConfig load_experiment(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_experiment(ss.str());
}

void apply_overrides(ExperimentConfig& config, const Overrides& overrides) {
  json doc = json::parse(config.source);
  if (overrides.seed) {
    config.seeds = {*overrides.seed};
    doc["seeds"] = config.seeds;
  }
  for (auto& p : config.points) {
    if (overrides.budget) p.config.budget = *overrides.budget;
    if (overrides.workers) p.config.workers = *overrides.workers;
  }
  if (overrides.budget) doc["training"]["budget"] = *overrides.budget;
  if (overrides.workers) doc["training"]["workers"] = *overrides.workers;
  config.source = doc.dump(2) + "\n";
}

std::string train_config_json(const TrainConfig& config, std::string_view label) {
  json j;
  if (!label.empty()) j["label"] = std::string(label);
  j["seed"] = config.seed;
  j["environment"] = env_json(config.env);
  j["agent"] = agent_json(config.agent);
  j["training"] = training_json(config);
  return j.dump(2) + "\n";
}

TrainConfig train_config_from_json(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    bad(std::string("not valid JSON: ") + e.what());
  }
  TrainConfig c;
  if (doc.contains("seed")) c.seed = doc["seed"].get<std::uint64_t>();
  const json env = section(doc, "environment"), agent = section(doc, "agent"), training = section(doc, "training");
  for (const auto& [key, v] : env.items()) set_env(c.env, key, v);
  for (const auto& [key, v] : agent.items()) set_agent(c.agent, key, v);
  for (const auto& [key, v] : training.items()) set_training(c, key, v);
  return c;
}

fs::path output_root() {
  const char* env = std::getenv("METARL_OUTPUT_ROOT");
  return env != nullptr && *env != '\0' ? fs::path(env) : fs::path("runs");
}

fs::path run_directory(const fs::path& root, const ExperimentConfig& config, std::size_t point, std::uint64_t seed) {
  return root / config.name / config.points.at(point).label / ("seed_" + std::to_string(seed));
}

}  // namespace metarl
