#include "interp/cli/config.hpp"

#include <fstream>
#include <set>

#include "interp/error.hpp"
#include "interp/util/random.hpp"

namespace interp::cli {

using json = nlohmann::json;

void RunConfig::validate() const {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  need(!task.empty(), "task is required");
  need(system == "agentic" || system == "oneshot", "system must be agentic or oneshot, got '" + system + "'");
  need(mode == "live" || mode == "record" || mode == "replay", "mode must be live, record or replay, got '" + mode + "'");
  for (const auto& p : {backbone_provider, judge_provider}) {
    need(p == "anthropic" || p == "openai", "provider must be anthropic or openai, got '" + p + "'");
  }
  need(n_runs >= 1, "n_runs must be at least 1");
  need(n_clusterings >= 0, "n_clusterings must be non-negative");
  need(noise_seeds >= 1, "noise_seeds must be at least 1");
  need(workers >= 1, "workers must be at least 1");
  need(intrinsic_prompts >= 1, "intrinsic_prompts must be at least 1");
  need(random_clusterings >= 0, "random_clusterings must be non-negative");
  for (double a : alphas) need(a >= 0.0 && a <= 1.0, "alphas must lie in [0, 1]");
  need(!temperature || (*temperature >= 0.0 && *temperature <= 2.0), "temperature must lie in [0, 2]");
  for (const auto& c : components) {
    need(model::parse_component(c).has_value(), "unreadable component '" + c + "'");
  }
  need(mode != "replay" || !agent_transcript.empty() || !judge_transcript.empty(),
       "replay mode needs agent_transcript or judge_transcript");
  agent_config(*this, 0).validate();
}

namespace {

template <class T>
void take(const json& j, const char* key, T& out, std::set<std::string>& seen) {
  seen.insert(key);
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

}  // namespace

RunConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig c;
  std::set<std::string> seen;
  take(j, "task", c.task, seen);
  take(j, "model", c.model, seen);
  take(j, "system", c.system, seen);
  take(j, "backbone", c.backbone, seen);
  take(j, "backbone_provider", c.backbone_provider, seen);
  take(j, "judge", c.judge, seen);
  take(j, "judge_provider", c.judge_provider, seen);
  seen.insert("temperature");
  if (j.contains("temperature") && !j["temperature"].is_null()) {
    if (!j["temperature"].is_number()) throw ConfigError("config key 'temperature' must be a number or null");
    c.temperature = j["temperature"].get<double>();
  }
  take(j, "seed", c.seed, seen);
  take(j, "n_runs", c.n_runs, seen);
  take(j, "n_clusterings", c.n_clusterings, seen);
  take(j, "alphas", c.alphas, seen);
  take(j, "noise_seeds", c.noise_seeds, seen);
  take(j, "mode", c.mode, seen);
  take(j, "agent_transcript", c.agent_transcript, seen);
  take(j, "judge_transcript", c.judge_transcript, seen);
  take(j, "components", c.components, seen);
  take(j, "max_iterations", c.max_iterations, seen);
  take(j, "n_init_prompts", c.n_init_prompts, seen);
  take(j, "n_task_prompts", c.n_task_prompts, seen);
  take(j, "workers", c.workers, seen);
  take(j, "intrinsic_prompts", c.intrinsic_prompts, seen);
  take(j, "random_clusterings", c.random_clusterings, seen);
  take(j, "average_divergences", c.average_divergences, seen);
  take(j, "one_directional", c.one_directional, seen);
  for (const auto& [k, v] : j.items()) {
    if (!seen.count(k)) throw ConfigError("unknown config key '" + k + "'");
  }
  return c;
}

json to_json(const RunConfig& c) {
  return {{"task", c.task},
          {"model", c.model},
          {"system", c.system},
          {"backbone", c.backbone},
          {"backbone_provider", c.backbone_provider},
          {"judge", c.judge},
          {"judge_provider", c.judge_provider},
          {"temperature", c.temperature ? json(*c.temperature) : json(nullptr)},
          {"seed", c.seed},
          {"n_runs", c.n_runs},
          {"n_clusterings", c.n_clusterings},
          {"alphas", c.alphas},
          {"noise_seeds", c.noise_seeds},
          {"mode", c.mode},
          {"agent_transcript", c.agent_transcript},
          {"judge_transcript", c.judge_transcript},
          {"components", c.components},
          {"max_iterations", c.max_iterations},
          {"n_init_prompts", c.n_init_prompts},
          {"n_task_prompts", c.n_task_prompts},
          {"workers", c.workers},
          {"intrinsic_prompts", c.intrinsic_prompts},
          {"random_clusterings", c.random_clusterings},
          {"average_divergences", c.average_divergences},
          {"one_directional", c.one_directional}};
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  try {
    return config_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
}

std::uint64_t subsystem_seed(const RunConfig& c, const std::string& label) { return util::derive_seed(c.seed, label); }

std::string model_id(const RunConfig& c) {
  return c.model.empty() ? tasks::load_task_definition(c.task).model : c.model;
}

agent::AgentConfig agent_config(const RunConfig& c, int run) {
  agent::AgentConfig a;
  a.max_iterations = c.max_iterations;
  a.n_init_prompts = c.n_init_prompts;
  a.n_task_prompts = c.n_task_prompts;
  a.model = c.backbone;
  a.temperature = c.temperature;
  a.seed = subsystem_seed(c, "agent/run/" + std::to_string(run));
  return a;
}

agent::ClusteringConfig clustering_config(const RunConfig& c) {
  agent::ClusteringConfig k;
  k.model = c.backbone;
  k.temperature = c.temperature;
  k.n_prompts = c.n_task_prompts;
  return k;
}

eval::JudgeConfig judge_config(const RunConfig& c) {
  eval::JudgeConfig j;
  j.model = c.judge;
  j.temperature = c.temperature;
  return j;
}

intrinsic::SwapOptions swap_options(const RunConfig& c) {
  return {.average_divergences = c.average_divergences, .one_directional = c.one_directional};
}

std::vector<model::ComponentRef> selected_components(const RunConfig& c, const tasks::TaskDefinition& task) {
  if (c.components.empty()) return task.circuit;
  std::vector<model::ComponentRef> out;
  for (const auto& s : c.components) {
    const auto ref = model::parse_component(s);
    if (!ref) throw ConfigError("unreadable component '" + s + "'");
    if (std::find(task.circuit.begin(), task.circuit.end(), *ref) == task.circuit.end()) {
      throw ConfigError(model::to_string(*ref) + " is not in the " + task.name + " circuit");
    }
    if (std::find(out.begin(), out.end(), *ref) == out.end()) out.push_back(*ref);
  }
  return out;
}

std::string slug(const model::ComponentRef& c) {
  return "L" + std::to_string(c.layer) + (c.is_head() ? "H" + std::to_string(*c.head) : std::string("MLP"));
}

}  // namespace interp::cli
