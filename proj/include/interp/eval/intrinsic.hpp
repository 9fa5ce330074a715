#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "interp/eval/extrinsic.hpp"
#include "interp/model/model_handle.hpp"
#include "interp/tasks/task.hpp"

namespace interp::intrinsic {

using model::ComponentRef;

/// sqrt of the Jensen-Shannon divergence with base-2 logarithms, in [0, 1].
double js_distance(std::span<const double> p, std::span<const double> q);
double js_divergence(std::span<const double> p, std::span<const double> q);

struct SwapOptions {
  /// Average divergences over prompts and take the root afterwards, instead
  /// of averaging per-prompt distances.
  bool average_divergences = false;
  /// Replace exchange with one-directional overwrites, averaged over both
  /// directions so the result stays symmetric.
  bool one_directional = false;
};

/// Clean forward state for one evaluation prompt.
struct PromptState {
  std::string text;
  model::TokenizedPrompt tokens;
  std::vector<model::Matrix> residuals;
  model::NextTokenDistribution clean;
};

std::vector<PromptState> prepare_prompts(const model::ModelHandle& m, const std::vector<std::string>& prompts);

struct PairDistance {
  ComponentRef a;
  ComponentRef b;
  double kq = 0.0;
  double ov = 0.0;
  double distance = 0.0;
  std::vector<double> kq_per_prompt;  // JS distance per prompt
  std::vector<double> ov_per_prompt;
};

/// Distance between next-token distributions at the final position before
/// and after swapping the KQ (resp. OV) weights of two heads, averaged over
/// prompts and then over the two kinds. Throws IncompatibleSwapError.
PairDistance swap_distance(model::ModelHandle& m, const ComponentRef& h1, const ComponentRef& h2,
                           const std::vector<PromptState>& prompts, const SwapOptions& options = {});

struct DistanceMatrix {
  static constexpr int kSchemaVersion = 1;
  std::string task;
  std::string model;
  std::uint64_t prompt_seed = 0;
  std::vector<std::string> prompts;
  SwapOptions options;
  std::vector<ComponentRef> heads;
  std::vector<std::vector<double>> values;
  std::vector<PairDistance> pairs;  // i < j, row-major
  std::vector<std::pair<ComponentRef, ComponentRef>> excluded;

  int index_of(const ComponentRef& h) const;  // -1 when absent
  double at(const ComponentRef& a, const ComponentRef& b) const;
};

/// Swap distances for every pair of `heads` (MLPs are dropped), computed
/// with up to `workers` threads, one model handle each. The result does not
/// depend on the worker count.
DistanceMatrix distance_matrix(std::shared_ptr<const model::Checkpoint> checkpoint, const std::string& task,
                               const std::vector<std::string>& prompts, std::uint64_t prompt_seed,
                               const std::vector<ComponentRef>& heads, const SwapOptions& options = {},
                               int workers = 1);

nlohmann::json to_json(const DistanceMatrix& d);
DistanceMatrix distance_matrix_from_json(const nlohmann::json& j);
std::string to_csv(const DistanceMatrix& d);

/// Silhouette with precomputed distances. labels[i] is the cluster of point
/// i; singleton clusters score 0. Throws ValidationError with fewer than two
/// clusters.
std::vector<double> silhouette_samples(const std::vector<std::vector<double>>& distances, const std::vector<int>& labels);

struct ClusterQuality {
  std::string id;
  double mean = 0.0;
  std::vector<ComponentRef> heads;
  std::vector<double> per_head;
};

/// Labels for the matrix heads from a partition; components outside the
/// matrix (MLPs) are ignored. Every matrix head must be assigned exactly once.
std::vector<int> labels_for(const DistanceMatrix& d, const eval::Partition& clustering);

ClusterQuality silhouette(const DistanceMatrix& d, const eval::Partition& clustering, const std::string& id = {});

/// Uniformly random relabelings with the same cluster-size multiset.
std::vector<std::vector<int>> random_clusterings(const std::vector<int>& reference, int n, std::uint64_t seed);

struct KendallResult {
  double tau = 0.0;      // tau-b
  double p_value = 1.0;  // two-sided
  int n = 0;
  bool exact = false;
};

/// Exact null distribution for n <= 10 without ties, normal approximation
/// with tie-corrected variance otherwise.
KendallResult kendall_tau(const std::vector<double>& x, const std::vector<double>& y);

struct ProfileEntry {
  std::string cluster;
  std::vector<ComponentRef> heads;
  std::vector<double> distances;
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
};

/// Distances from `head` to the heads of each cluster, the head itself
/// excluded. Clusters left empty are omitted.
std::vector<ProfileEntry> head_profile(const DistanceMatrix& d, const ComponentRef& head,
                                       const eval::Partition& clustering);

}  // namespace interp::intrinsic
