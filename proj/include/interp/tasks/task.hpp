#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "interp/model/component.hpp"
#include "interp/model/model_handle.hpp"
#include "interp/model/tokenizer.hpp"

namespace interp::tasks {

using model::ComponentRef;

struct ExpertCluster {
  std::string name;
  std::vector<ComponentRef> components;
  std::string description;
  std::string position;  // circuit-designated position name, e.g. "END", "S2"
  std::string citation;
};

struct ExpertClustering {
  std::vector<ExpertCluster> clusters;

  std::vector<ComponentRef> components() const;  // first-appearance order, unique
  bool is_partition() const;
  /// Index of the first cluster listing `c`.
  std::optional<std::size_t> cluster_of(const ComponentRef& c) const;
  std::optional<std::size_t> find(const std::string& name) const;
  /// Keeps each component only in the first cluster that lists it.
  ExpertClustering canonical() const;
};

struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;
  friend bool operator==(const Span&, const Span&) = default;
};

/// One task example. Spans are byte ranges in `text`; `positions` holds the
/// matching model token positions once resolved against a tokenizer.
struct TaskExample {
  std::string text;
  std::vector<std::string> answers;      // correct completions (with leading space where applicable)
  std::vector<std::string> distractors;  // incorrect in-context objects
  std::map<std::string, Span> spans;
  std::map<std::string, std::vector<Span>> span_groups;  // e.g. all distractor objects
  std::map<std::string, int> positions;
  std::map<std::string, std::vector<int>> position_groups;
  int template_id = 0;
  std::vector<std::string> fillers;  // generator slot values, for counterfactual regeneration
};

struct TaskDefinition {
  int schema_version = 0;
  std::string name;
  std::string task;  // generator family: ioi, greater-than, acronyms, colored-objects, entity-tracking
  std::string model;
  std::string tier;  // "desk" or "large-model"
  std::string description;
  std::string citation;
  std::string model_note;
  std::vector<std::string> alternative_models;
  ExpertClustering expert;      // raw transcription, may cross-list
  std::vector<ComponentRef> circuit;  // unique components

  std::vector<ComponentRef> heads() const;
  std::string position_for(const ComponentRef& c) const;
};

struct TaskBundle {
  TaskDefinition definition;
  std::uint64_t seed = 0;
  std::vector<TaskExample> prompts;

  const std::string& name() const { return definition.name; }
  const std::vector<ComponentRef>& circuit() const { return definition.circuit; }
  /// Partition used by assignment metrics.
  ExpertClustering expert_clustering() const { return definition.expert.canonical(); }
  std::vector<std::string> texts() const;
  /// Model position of `c`'s designated position in each prompt.
  std::vector<int> positions_for(const ComponentRef& c) const;
};

std::vector<std::string> task_names();

TaskDefinition load_task_definition(const std::string& name);
TaskDefinition parse_task_definition(const std::string& json_text);

struct GenerateOptions {
  /// When set, candidates whose annotated spans do not align with single
  /// tokens are rejected and positions are resolved.
  const model::ModelHandle* model = nullptr;
};

std::vector<TaskExample> generate_prompts(const TaskDefinition& task, int n, std::uint64_t seed,
                                          const GenerateOptions& options = {});

/// Definition plus `n` generated prompts.
TaskBundle load_task(const std::string& name, int n = 20, std::uint64_t seed = 0, const GenerateOptions& options = {});

/// Same-template prompts with resampled task content (names, years, objects).
std::vector<TaskExample> sample_counterfactuals(const TaskDefinition& task, const std::vector<TaskExample>& prompts,
                                                std::uint64_t seed, const GenerateOptions& options = {});

/// Fills `positions` from `spans` using the handle's tokenization.
void resolve_positions(TaskExample& ex, const model::ModelHandle& model);

}  // namespace interp::tasks
