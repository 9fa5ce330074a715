#pragma once

#include <nlohmann/json.hpp>

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "interp/agent/agent.hpp"
#include "interp/llm/client.hpp"
#include "interp/tasks/task.hpp"

namespace interp::eval {

using model::ComponentRef;

inline const std::string kNoMatch = "no-match";

struct Explanation {
  std::string id;
  std::string text;
};

struct JudgeConfig {
  std::string model = "gpt-5";
  std::optional<double> temperature;
  int max_tokens = 4096;
};

struct JudgeRecord {
  std::string id;
  std::string verdict;
  std::vector<std::string> request_hashes;
  std::vector<std::string> responses;
};

/// Explanation id -> expert cluster name or kNoMatch.
struct JudgeAssignment {
  std::map<std::string, std::string> matches;
  std::vector<JudgeRecord> records;
  std::string template_hash;  // SHA-256 of the judge templates used

  const std::string& at(const std::string& id) const;
};

nlohmann::json to_json(const JudgeAssignment& a);
JudgeAssignment judge_from_json(const nlohmann::json& j);

std::string judge_system_prompt(const tasks::TaskDefinition& task);

/// Reads <match>...</match>. Returns the listed name it matches
/// (case-insensitive, trimmed), kNoMatch, or nothing.
std::optional<std::string> parse_verdict(std::string_view reply, const std::vector<std::string>& names);

/// One judge exchange per explanation; a reply that names no listed cluster
/// gets one corrective re-prompt and then counts as kNoMatch. Empty
/// explanations are kNoMatch without a call.
JudgeAssignment judge_match(const std::vector<Explanation>& explanations, const tasks::TaskDefinition& task,
                            llm::LlmClient& client, const JudgeConfig& config = {});

/// Explanation ids used by the CLI: the component string, and "cluster:<i>".
std::vector<Explanation> component_explanations(const std::vector<agent::FinalHypothesis>& hypotheses);
std::vector<Explanation> cluster_explanations(const agent::Clustering& clustering);

/// Fraction of components whose judged cluster lists them.
double component_functionality_accuracy(const std::vector<std::pair<ComponentRef, std::string>>& judged,
                                        const tasks::ExpertClustering& expert);

/// Mean over predicted clusters of the fraction of members listed by the
/// cluster's judged expert cluster. `verdicts` aligns with predicted.clusters.
double cluster_functionality_accuracy(const agent::Clustering& predicted, const std::vector<std::string>& verdicts,
                                      const tasks::ExpertClustering& expert);

struct Partition {
  std::vector<std::string> names;
  std::vector<std::vector<ComponentRef>> clusters;
};

Partition partition_of(const agent::Clustering& c);
Partition partition_of(const tasks::ExpertClustering& c);

struct AssignmentResult {
  double accuracy = 0.0;
  int matched = 0;
  int total = 0;
  std::vector<std::pair<int, int>> pairs;  // (predicted, expert) cluster indices with nonzero overlap
};

/// Optimal one-to-one cluster matching by overlap (Hungarian algorithm).
/// Throws ValidationError unless both are partitions of the same set.
AssignmentResult component_assignment_accuracy(const Partition& predicted, const Partition& expert);

/// Maximum-weight assignment on a rectangular matrix, padded internally.
/// Returns the column of each row, or -1 for rows matched to padding.
std::vector<int> hungarian_max(const std::vector<std::vector<double>>& weights);

struct MetricsReport {
  std::string task;
  std::string system;
  int run = 0;
  int clustering = 0;
  double component_functionality_accuracy = 0.0;
  double cluster_functionality_accuracy = 0.0;
  double component_assignment_accuracy = 0.0;
  int n_components = 0;
  int n_clusters = 0;
};

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for one value
  int n = 0;
};

MetricSummary summarize(const std::vector<double>& values);

struct AggregateReport {
  std::string task;
  std::string system;
  MetricSummary component_functionality;
  MetricSummary cluster_functionality;
  MetricSummary component_assignment;
  std::vector<MetricsReport> reports;
};

AggregateReport aggregate(const std::vector<MetricsReport>& reports);

nlohmann::json to_json(const MetricsReport& r);
nlohmann::json to_json(const AggregateReport& r);
std::string to_csv(const AggregateReport& r);

}  // namespace interp::eval
