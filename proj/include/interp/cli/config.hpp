#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "interp/agent/agent.hpp"
#include "interp/eval/extrinsic.hpp"
#include "interp/eval/intrinsic.hpp"

namespace interp::cli {

struct RunConfig {
  std::string task = "ioi-gpt2";
  std::string model;  // checkpoint id; empty uses the task's model
  std::string system = "agentic";  // "agentic" or "oneshot"
  std::string backbone = "claude-opus-4-1";
  std::string backbone_provider = "anthropic";
  std::string judge = "gpt-5";
  std::string judge_provider = "openai";
  std::optional<double> temperature;
  std::uint64_t seed = 0;
  int n_runs = 3;
  int n_clusterings = 5;
  std::vector<double> alphas{0.0, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  int noise_seeds = 3;
  std::string mode = "live";  // live, record, replay
  std::string agent_transcript;
  std::string judge_transcript;
  std::vector<std::string> components;  // empty: the whole circuit
  int max_iterations = 10;
  int n_init_prompts = 10;
  int n_task_prompts = 20;
  int workers = 1;
  int intrinsic_prompts = 40;
  int random_clusterings = 100;
  bool average_divergences = false;
  bool one_directional = false;

  void validate() const;
};

/// Unknown keys are rejected with ConfigError.
RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& c);
RunConfig load_config(const std::filesystem::path& path);

/// Every random choice of a run derives from the root seed and a label.
std::uint64_t subsystem_seed(const RunConfig& c, const std::string& label);

std::string model_id(const RunConfig& c);
agent::AgentConfig agent_config(const RunConfig& c, int run);
agent::ClusteringConfig clustering_config(const RunConfig& c);
eval::JudgeConfig judge_config(const RunConfig& c);
intrinsic::SwapOptions swap_options(const RunConfig& c);

/// The configured components, checked against the task circuit.
std::vector<model::ComponentRef> selected_components(const RunConfig& c, const tasks::TaskDefinition& task);

/// File-system-safe name for a component: "L9H9", "L8MLP".
std::string slug(const model::ComponentRef& c);

}  // namespace interp::cli
