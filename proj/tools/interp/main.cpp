#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>

#include "interp/cli/commands.hpp"
#include "interp/error.hpp"

using namespace interp;
using namespace interp::cli;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::string> task, model, system, mode, agent_transcript, judge_transcript, backbone,
      backbone_provider, judge, judge_provider;
  std::optional<double> temperature;
  std::optional<std::uint64_t> seed;
  std::optional<int> n_runs, n_clusterings, workers, max_iterations, n_init_prompts, n_task_prompts, noise_seeds,
      intrinsic_prompts, random_clusterings;
  std::vector<std::string> components;
  std::vector<double> alphas;
  bool average_divergences = false;
  bool one_directional = false;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "Run configuration JSON");
  cmd->add_option("--task", o.task, "Task name");
  cmd->add_option("--model", o.model, "Checkpoint id (default: the task's model)");
  cmd->add_option("--seed", o.seed, "Root seed");
  cmd->add_option("--workers", o.workers, "Worker threads");
  cmd->add_option("--components", o.components, "Subset of circuit components, e.g. \"(9, 9)\"");
}

void add_agent(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--system", o.system, "agentic or oneshot");
  cmd->add_option("--mode", o.mode, "live, record or replay");
  cmd->add_option("--agent-transcript", o.agent_transcript, "Agent transcript (JSON lines)");
  cmd->add_option("--backbone", o.backbone, "Backbone model id");
  cmd->add_option("--backbone-provider", o.backbone_provider, "anthropic or openai");
  cmd->add_option("--temperature", o.temperature, "Sampling temperature (default: provider default)");
  cmd->add_option("--n-runs", o.n_runs, "Component-analysis runs");
  cmd->add_option("--n-clusterings", o.n_clusterings, "Clusterings per run");
  cmd->add_option("--max-iterations", o.max_iterations, "Experiment turns per component");
  cmd->add_option("--n-init-prompts", o.n_init_prompts, "Prompts in the initial results");
  cmd->add_option("--n-task-prompts", o.n_task_prompts, "Prompts listed to the agent");
}

void add_judge(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--judge-transcript", o.judge_transcript, "Judge transcript (JSON lines)");
  cmd->add_option("--judge", o.judge, "Judge model id");
  cmd->add_option("--judge-provider", o.judge_provider, "anthropic or openai");
}

template <class T>
void set(std::optional<T>& from, T& to) {
  if (from) to = *from;
}

// A config stored in an existing archive takes precedence over --config.
RunConfig resolve(Overrides o, const std::optional<RunConfig>& base) {
  RunConfig c = base ? *base : (o.config.empty() ? RunConfig{} : load_config(o.config));
  set(o.task, c.task);
  set(o.model, c.model);
  set(o.system, c.system);
  set(o.mode, c.mode);
  set(o.agent_transcript, c.agent_transcript);
  set(o.judge_transcript, c.judge_transcript);
  set(o.backbone, c.backbone);
  set(o.backbone_provider, c.backbone_provider);
  set(o.judge, c.judge);
  set(o.judge_provider, c.judge_provider);
  if (o.temperature) c.temperature = o.temperature;
  set(o.seed, c.seed);
  set(o.n_runs, c.n_runs);
  set(o.n_clusterings, c.n_clusterings);
  set(o.workers, c.workers);
  set(o.max_iterations, c.max_iterations);
  set(o.n_init_prompts, c.n_init_prompts);
  set(o.n_task_prompts, c.n_task_prompts);
  set(o.noise_seeds, c.noise_seeds);
  set(o.intrinsic_prompts, c.intrinsic_prompts);
  set(o.random_clusterings, c.random_clusterings);
  if (!o.components.empty()) c.components = o.components;
  if (!o.alphas.empty()) c.alphas = o.alphas;
  if (o.average_divergences) c.average_divergences = true;
  if (o.one_directional) c.one_directional = true;
  return c;
}

std::optional<RunConfig> stored(const std::string& archive_dir) {
  if (archive_dir.empty() || !std::filesystem::exists(std::filesystem::path(archive_dir) / "config.json")) {
    return std::nullopt;
  }
  return archive_config(RunArchive::open(archive_dir));
}

std::vector<model::ComponentRef> parse_heads(const std::vector<std::string>& xs) {
  std::vector<model::ComponentRef> out;
  for (const auto& s : xs) {
    const auto c = model::parse_component(s);
    if (!c) throw ConfigError("unreadable component '" + s + "'");
    out.push_back(*c);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Automated circuit analysis and explanation evaluation"};
  app.require_subcommand(1);
  Overrides o;
  std::string archive_dir;

  auto* analyze = app.add_subcommand("analyze", "Component analyses and clusterings for a task");
  add_common(analyze, o);
  add_agent(analyze, o);
  analyze->add_option("--archive", archive_dir, "Output archive directory")->required();

  auto* judge = app.add_subcommand("judge", "Judge an archive's explanations and compute metrics");
  judge->add_option("--archive", archive_dir, "Archive produced by analyze")->required();
  judge->add_option("--mode", o.mode, "live, record or replay");
  add_judge(judge, o);

  auto* intrinsic = app.add_subcommand("intrinsic", "Swap-distance matrix, silhouettes and Kendall correlation");
  add_common(intrinsic, o);
  intrinsic->add_option("--archive", archive_dir, "Archive to read clusterings from and write results to")->required();
  intrinsic->add_option("--prompts", o.intrinsic_prompts, "Evaluation prompts");
  intrinsic->add_option("--random", o.random_clusterings, "Random baseline clusterings");
  intrinsic->add_flag("--average-divergences", o.average_divergences, "Average divergences, then take the root");
  intrinsic->add_flag("--one-directional", o.one_directional, "Overwrite instead of exchange");
  std::string profile_head = "(10, 0)";
  intrinsic->add_option("--profile-head", profile_head, "Head for the distance profile");

  auto* noise = app.add_subcommand("noise-sweep", "Accuracy under tool-output noise");
  add_common(noise, o);
  add_agent(noise, o);
  add_judge(noise, o);
  noise->add_option("--archive", archive_dir, "Output archive directory")->required();
  noise->add_option("--alphas", o.alphas, "Noise levels");
  noise->add_option("--noise-seeds", o.noise_seeds, "Repeats per noise level");

  auto* audit = app.add_subcommand("audit", "Batch head audit as CSV");
  add_common(audit, o);
  std::vector<std::string> heads;
  int n = 500;
  int threads = 1;
  std::string out_path;
  audit->add_option("--heads", heads, "Heads to audit, e.g. \"(18, 3)\"")->required();
  audit->add_option("--n", n, "Examples");
  audit->add_option("--threads", threads, "Threads");
  audit->add_option("--out", out_path, "Output CSV (default: stdout)");

  auto* plot = app.add_subcommand("plot", "Write SVG plots for an archive");
  plot->add_option("--archive", archive_dir, "Archive")->required();

  auto* verify = app.add_subcommand("verify", "Check an archive against its manifest");
  verify->add_option("--archive", archive_dir, "Archive")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (analyze->parsed()) {
      auto c = resolve(o, std::nullopt);
      auto archive = RunArchive::create(archive_dir);
      cmd_analyze(c, archive);
      std::cout << "archive " << archive.root().string() << " root " << archive.root_hash() << "\n";
    } else if (judge->parsed()) {
      auto archive = RunArchive::open(archive_dir);
      auto c = resolve(o, archive_config(archive));
      const auto agg = cmd_judge(c, archive);
      cmd_plot(archive);
      std::cout << eval::to_csv(agg);
    } else if (intrinsic->parsed()) {
      auto c = resolve(o, stored(archive_dir));
      auto archive = RunArchive::create(archive_dir);
      const auto head = model::parse_component(profile_head);
      if (!head) throw ConfigError("unreadable profile head '" + profile_head + "'");
      const auto rep = cmd_intrinsic(c, archive, *head);
      cmd_plot(archive);
      std::cout << archive.read("intrinsic/silhouette_summary.csv");
      if (rep.kendall) std::cout << "kendall tau " << rep.kendall->tau << " p " << rep.kendall->p_value << "\n";
    } else if (noise->parsed()) {
      auto c = resolve(o, std::nullopt);
      auto archive = RunArchive::create(archive_dir);
      cmd_noise_sweep(c, archive);
      cmd_plot(archive);
      std::cout << archive.read("noise/summary.csv");
    } else if (audit->parsed()) {
      auto c = resolve(o, std::nullopt);
      const auto csv = cmd_audit(c, parse_heads(heads), n, threads);
      if (out_path.empty()) {
        std::cout << csv;
      } else {
        std::ofstream(out_path) << csv;
      }
    } else if (plot->parsed()) {
      auto archive = RunArchive::open(archive_dir);
      for (const auto& p : cmd_plot(archive)) std::cout << p << "\n";
    } else if (verify->parsed()) {
      const auto archive = RunArchive::open(archive_dir);
      const auto bad = archive.verify();
      for (const auto& b : bad) std::cout << "modified " << b << "\n";
      std::cout << "root " << archive.root_hash() << "\n";
      return bad.empty() ? 0 : 4;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e);
  }
  return 0;
}
