#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "interp/agent/parser.hpp"
#include "interp/llm/client.hpp"
#include "interp/model/model_handle.hpp"
#include "interp/tasks/task.hpp"

namespace interp::agent {

struct AgentConfig {
  int max_iterations = 10;
  int n_init_prompts = 10;
  int n_task_prompts = 20;
  std::string model = "claude-opus-4-1";
  std::optional<double> temperature;
  int max_tokens = 8192;
  /// Mixes every tool result with a permutation of itself; 0 disables.
  double noise_alpha = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// One tool call as executed during a run.
struct CallRecord {
  std::string description;
  std::string source;
  std::string tool;  // empty when the function was rejected
  std::string error;
  std::string output;  // text shown to the agent
  nlohmann::json result;  // structured result, null on error
};

struct TurnRecord {
  int index = 0;
  std::string request_hash;
  std::string response;
  std::string parse;  // "experiments", "final" or "malformed"
  std::string parse_error;
  int input_tokens = 0;
  int output_tokens = 0;
  std::vector<CallRecord> calls;
};

/// Everything needed to audit, resume or replay one component analysis.
struct RunTrace {
  static constexpr int kSchemaVersion = 1;
  std::string kind;  // "agentic" or "oneshot"
  std::string task;
  ComponentRef component;
  AgentConfig config;
  std::string position_name;
  std::vector<std::string> prompts;
  std::vector<int> positions;
  std::vector<int> counterfactual_indices;  // one-shot only
  std::uint64_t counterfactual_seed = 0;    // one-shot only
  std::string system_prompt;
  std::vector<llm::Message> messages;
  std::vector<TurnRecord> turns;
  std::string status = "running";  // running, complete, forced, malformed, interrupted
  std::string error;
  int iterations = 0;  // turns that requested experiments
  bool forced = false;
  bool retry_pending = false;
  std::optional<FinalHypothesis> final;

  int tool_calls() const;
};

nlohmann::json to_json(const AgentConfig& c);
AgentConfig agent_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const FinalHypothesis& f);
FinalHypothesis final_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunTrace& t);
RunTrace trace_from_json(const nlohmann::json& j);

/// Called after every turn, so an interrupted run can be resumed.
using Checkpoint = std::function<void(const RunTrace&)>;

/// System prompt for the iterative agent. Runs the initial logit lens (and,
/// for heads, attention) on the first n_init_prompts prompts.
std::string build_agent_prompt(const model::ModelHandle& m, const tasks::TaskBundle& task, const ComponentRef& c,
                               const AgentConfig& config);

/// Iterative experiment loop. An LLM failure marks the trace "interrupted",
/// checkpoints it and rethrows; passing that trace as `resume` continues it.
RunTrace run_agent(const model::ModelHandle& m, const tasks::TaskBundle& task, const ComponentRef& c,
                   const AgentConfig& config, llm::LlmClient& client, const Checkpoint& checkpoint = {},
                   const RunTrace* resume = nullptr);

/// All four tools on the first n_init_prompts prompts, with counterfactuals
/// drawn at random from the other task prompts, packed into one prompt.
RunTrace run_oneshot(const model::ModelHandle& m, const tasks::TaskBundle& task, const ComponentRef& c,
                     const AgentConfig& config, llm::LlmClient& client);

/// Runs `components` concurrently with up to `workers` threads and one model
/// handle per worker. Results follow `components` order.
std::vector<RunTrace> analyze_components(std::shared_ptr<const model::Checkpoint> checkpoint,
                                         const tasks::TaskBundle& task, const std::vector<ComponentRef>& components,
                                         const AgentConfig& config, llm::LlmClient& client, bool oneshot,
                                         int workers = 1);

struct Cluster {
  std::string name;
  std::vector<ComponentRef> components;
  std::string function;
  std::string evidence;
  std::string position;
};

struct Clustering {
  std::vector<Cluster> clusters;
  std::vector<ComponentRef> components() const;
};

nlohmann::json to_json(const Clustering& c);
Clustering clustering_from_json(const nlohmann::json& j);

struct ClusteringConfig {
  std::string model = "claude-opus-4-1";
  std::optional<double> temperature;
  int max_tokens = 8192;
  int n_prompts = 20;
};

struct ClusteringGroupTrace {
  std::string position;
  std::vector<ComponentRef> components;
  std::string prompt;
  std::vector<llm::Message> messages;
  std::vector<std::string> request_hashes;
};

struct ClusteringTrace {
  std::vector<ClusteringGroupTrace> groups;
};

nlohmann::json to_json(const ClusteringTrace& t);

/// Parses a <cluster_analysis> reply. Components that do not parse are
/// reported in `unparsed`.
std::vector<Cluster> parse_cluster_analysis(std::string_view text, std::vector<std::string>* unparsed = nullptr);

/// Clusters hypotheses separately per circuit-designated position and merges
/// the results. A group whose reply misses, repeats or invents components is
/// re-prompted once; a second failure throws ProtocolError.
Clustering run_clustering(const model::ModelHandle& m, const tasks::TaskBundle& task,
                          const std::vector<FinalHypothesis>& hypotheses, const ClusteringConfig& config,
                          llm::LlmClient& client, ClusteringTrace* trace = nullptr);

}  // namespace interp::agent
