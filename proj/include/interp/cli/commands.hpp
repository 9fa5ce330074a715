#pragma once

#include <exception>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "interp/cli/archive.hpp"
#include "interp/cli/config.hpp"
#include "interp/llm/client.hpp"

namespace interp::cli {

/// Clients to use instead of the ones the config describes.
struct Clients {
  std::shared_ptr<llm::LlmClient> agent;
  std::shared_ptr<llm::LlmClient> judge;
};

/// Config stored in an archive, with invocation-only fields cleared.
RunConfig archive_config(const RunArchive& archive);

/// Runs `n_runs` component analyses of the selected components and
/// `n_clusterings` clusterings of each run into the archive.
void cmd_analyze(const RunConfig& config, RunArchive& archive, const Clients& clients = {});

/// Judges every run and clustering in the archive; writes judge verdicts,
/// judge/metrics.json and judge/metrics.csv.
eval::AggregateReport cmd_judge(const RunConfig& config, RunArchive& archive, const Clients& clients = {});

struct IntrinsicReport {
  intrinsic::DistanceMatrix matrix;
  intrinsic::ClusterQuality expert;
  std::vector<intrinsic::ClusterQuality> system;
  std::vector<double> random;  // mean silhouette per random clustering
  std::optional<intrinsic::KendallResult> kendall;
  model::ComponentRef profile_head;
  std::vector<intrinsic::ProfileEntry> profile;
};

/// Swap-distance matrix over the circuit heads, silhouettes of the expert,
/// archived and random clusterings, and the Kendall correlation with
/// assignment accuracy when judge metrics are present.
IntrinsicReport cmd_intrinsic(const RunConfig& config, RunArchive& archive,
                              const model::ComponentRef& profile_head = {10, 0});

struct NoisePoint {
  double alpha = 0.0;
  int seed = 0;
  double component_functionality_accuracy = 0.0;
};

/// Component analyses and judging for every (alpha, noise seed).
std::vector<NoisePoint> cmd_noise_sweep(const RunConfig& config, RunArchive& archive, const Clients& clients = {});

/// Attention, logit-lens and patching audit rates as CSV.
std::string cmd_audit(const RunConfig& config, const std::vector<model::ComponentRef>& heads, int n, int threads = 1);

/// Writes SVG plots for whatever results the archive holds; returns their paths.
std::vector<std::string> cmd_plot(RunArchive& archive);

/// 0 ok, 2 config, 3 provider, 4 validation, 1 anything else.
int exit_code(const std::exception& e);

}  // namespace interp::cli
