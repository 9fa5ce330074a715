#include "interp/cli/commands.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "interp/error.hpp"
#include "interp/model/registry.hpp"
#include "interp/tools/tools.hpp"
#include "interp/util/svg.hpp"

namespace interp::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;
using model::ComponentRef;

namespace {

std::string fmt(double v, const char* spec = "%.6f") {
  if (!std::isfinite(v)) return "";
  char buf[48];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::shared_ptr<llm::LlmClient> client_for(const RunConfig& c, const std::string& provider,
                                           const std::string& transcript, const char* what) {
  llm::ClientSpec spec;
  spec.provider = provider;
  if (c.mode == "replay") {
    if (transcript.empty()) throw ConfigError(std::string("replay mode needs a ") + what + " transcript");
    spec.replay = transcript;
  } else if (c.mode == "record") {
    if (transcript.empty()) throw ConfigError(std::string("record mode needs a ") + what + " transcript path");
    spec.record = transcript;
  }
  return llm::make_client(spec);
}

std::shared_ptr<llm::LlmClient> agent_client(const RunConfig& c, const Clients& clients) {
  return clients.agent ? clients.agent : client_for(c, c.backbone_provider, c.agent_transcript, "agent");
}

std::shared_ptr<llm::LlmClient> judge_client(const RunConfig& c, const Clients& clients) {
  return clients.judge ? clients.judge : client_for(c, c.judge_provider, c.judge_transcript, "judge");
}

// Keeps a copy of the transcript with the results it produced.
void archive_transcript(const RunConfig& c, RunArchive& archive, const std::string& path, const std::string& name,
                        bool injected) {
  if (injected || c.mode == "live" || path.empty() || !fs::exists(path)) return;
  archive.write("transcripts/" + name + ".jsonl", read_file(path));
}

json stored_config(const RunConfig& c) {
  auto j = to_json(c);
  for (const char* k : {"mode", "agent_transcript", "judge_transcript", "workers"}) j.erase(k);
  return j;
}

void write_config(const RunConfig& c, RunArchive& archive, const std::string& rel) {
  if (archive.exists(rel)) {
    if (archive.read_json(rel) != stored_config(c)) {
      throw ConfigError("archive " + archive.root().string() + " was produced with a different configuration");
    }
    return;
  }
  archive.write_json(rel, stored_config(c));
}

std::string run_dir(int r) { return "runs/run-" + std::to_string(r); }

std::vector<agent::FinalHypothesis> finals_of(const std::vector<agent::RunTrace>& traces) {
  std::vector<agent::FinalHypothesis> out;
  for (const auto& t : traces) {
    if (t.final) {
      out.push_back(*t.final);
    } else {
      out.push_back({t.component, "", "", ""});
    }
  }
  return out;
}

json finals_json(const std::vector<agent::FinalHypothesis>& finals) {
  json arr = json::array();
  for (const auto& f : finals) arr.push_back(agent::to_json(f));
  return arr;
}

std::vector<agent::FinalHypothesis> finals_from(const json& j) {
  std::vector<agent::FinalHypothesis> out;
  for (const auto& f : j) out.push_back(agent::final_from_json(f));
  return out;
}

eval::Partition expert_partition(const tasks::TaskDefinition& def, const std::vector<ComponentRef>& keep) {
  eval::Partition p;
  for (const auto& cl : def.expert.canonical().clusters) {
    std::vector<ComponentRef> members;
    for (const auto& c : cl.components) {
      if (std::find(keep.begin(), keep.end(), c) != keep.end()) members.push_back(c);
    }
    if (members.empty()) continue;
    p.names.push_back(cl.name);
    p.clusters.push_back(std::move(members));
  }
  return p;
}

std::vector<agent::RunTrace> analyze(const RunConfig& c, const model::ModelHandle& m, const tasks::TaskBundle& task,
                                     const std::vector<ComponentRef>& comps, agent::AgentConfig acfg,
                                     llm::LlmClient& client) {
  return agent::analyze_components(m.shared_checkpoint(), task, comps, acfg, client, c.system == "oneshot",
                                   c.workers);
}

void write_traces(RunArchive& archive, const std::string& dir, const std::vector<agent::RunTrace>& traces) {
  for (const auto& t : traces) archive.write_json(dir + "/traces/" + slug(t.component) + ".json", agent::to_json(t));
  archive.write_json(dir + "/hypotheses.json", finals_json(finals_of(traces)));
}

std::vector<std::pair<ComponentRef, std::string>> judged_components(const std::vector<agent::FinalHypothesis>& finals,
                                                                    const eval::JudgeAssignment& a) {
  std::vector<std::pair<ComponentRef, std::string>> out;
  for (const auto& f : finals) out.emplace_back(f.component, a.at(model::to_string(f.component)));
  return out;
}

std::string alpha_label(double a) { return fmt(a, "%.2f"); }

}  // namespace

RunConfig archive_config(const RunArchive& archive) {
  auto c = config_from_json(archive.read_json("config.json"));
  c.mode = "live";
  c.agent_transcript.clear();
  c.judge_transcript.clear();
  return c;
}

void cmd_analyze(const RunConfig& c, RunArchive& archive, const Clients& clients) {
  c.validate();
  const auto checkpoint = model::load_checkpoint(model_id(c));
  model::ModelHandle m(checkpoint);
  const auto task = tasks::load_task(c.task, c.n_task_prompts, subsystem_seed(c, "task/prompts"), {&m});
  const auto comps = selected_components(c, task.definition);
  auto client = agent_client(c, clients);
  write_config(c, archive, "config.json");
  for (int r = 0; r < c.n_runs; ++r) {
    const auto traces = analyze(c, m, task, comps, agent_config(c, r), *client);
    write_traces(archive, run_dir(r), traces);
    const auto finals = finals_of(traces);
    for (int k = 0; k < c.n_clusterings; ++k) {
      agent::ClusteringTrace ctrace;
      const auto clustering = agent::run_clustering(m, task, finals, clustering_config(c), *client, &ctrace);
      const auto base = run_dir(r) + "/clusterings/clustering-" + std::to_string(k);
      archive.write_json(base + ".json", agent::to_json(clustering));
      archive.write_json(base + ".trace.json", agent::to_json(ctrace));
    }
  }
  archive_transcript(c, archive, c.agent_transcript, "agent", clients.agent != nullptr);
}

eval::AggregateReport cmd_judge(const RunConfig& c, RunArchive& archive, const Clients& clients) {
  c.validate();
  const auto def = tasks::load_task_definition(c.task);
  auto client = judge_client(c, clients);
  const auto jcfg = judge_config(c);
  std::vector<eval::MetricsReport> reports;
  for (int r = 0; r < c.n_runs; ++r) {
    const auto finals = finals_from(archive.read_json(run_dir(r) + "/hypotheses.json"));
    const auto verdicts = eval::judge_match(eval::component_explanations(finals), def, *client, jcfg);
    archive.write_json("judge/run-" + std::to_string(r) + "/components.json", eval::to_json(verdicts));
    const double cfa = eval::component_functionality_accuracy(judged_components(finals, verdicts), def.expert);
    std::vector<ComponentRef> comps;
    for (const auto& f : finals) comps.push_back(f.component);
    const auto expert = expert_partition(def, comps);
    for (int k = 0; k < c.n_clusterings; ++k) {
      const auto clustering = agent::clustering_from_json(
          archive.read_json(run_dir(r) + "/clusterings/clustering-" + std::to_string(k) + ".json"));
      const auto cv = eval::judge_match(eval::cluster_explanations(clustering), def, *client, jcfg);
      archive.write_json("judge/run-" + std::to_string(r) + "/clustering-" + std::to_string(k) + ".json",
                         eval::to_json(cv));
      std::vector<std::string> names;
      for (std::size_t i = 0; i < clustering.clusters.size(); ++i) names.push_back(cv.at("cluster:" + std::to_string(i)));
      eval::MetricsReport rep;
      rep.task = c.task;
      rep.system = c.system;
      rep.run = r;
      rep.clustering = k;
      rep.component_functionality_accuracy = cfa;
      rep.cluster_functionality_accuracy = eval::cluster_functionality_accuracy(clustering, names, def.expert);
      rep.component_assignment_accuracy =
          eval::component_assignment_accuracy(eval::partition_of(clustering), expert).accuracy;
      rep.n_components = static_cast<int>(finals.size());
      rep.n_clusters = static_cast<int>(clustering.clusters.size());
      reports.push_back(rep);
    }
    if (c.n_clusterings == 0) {
      eval::MetricsReport rep;
      rep.task = c.task;
      rep.system = c.system;
      rep.run = r;
      rep.clustering = -1;
      rep.component_functionality_accuracy = cfa;
      rep.cluster_functionality_accuracy = NAN;
      rep.component_assignment_accuracy = NAN;
      rep.n_components = static_cast<int>(finals.size());
      reports.push_back(rep);
    }
  }
  const auto agg = eval::aggregate(reports);
  archive.write_json("judge/metrics.json", eval::to_json(agg));
  archive.write("judge/metrics.csv", eval::to_csv(agg));
  archive_transcript(c, archive, c.judge_transcript, "judge", clients.judge != nullptr);
  return agg;
}

IntrinsicReport cmd_intrinsic(const RunConfig& c, RunArchive& archive, const ComponentRef& profile_head) {
  c.validate();
  const auto checkpoint = model::load_checkpoint(model_id(c));
  model::ModelHandle m(checkpoint);
  const auto task = tasks::load_task(c.task, c.intrinsic_prompts, subsystem_seed(c, "intrinsic/prompts"), {&m});
  const auto comps = selected_components(c, task.definition);
  std::vector<ComponentRef> heads;
  for (const auto& x : comps) {
    if (x.is_head()) heads.push_back(x);
  }
  if (!archive.exists("config.json")) write_config(c, archive, "config.json");

  IntrinsicReport rep;
  rep.matrix = intrinsic::distance_matrix(checkpoint, c.task, task.texts(), task.seed, heads, swap_options(c), c.workers);
  archive.write_json("intrinsic/distance_matrix.json", intrinsic::to_json(rep.matrix));
  archive.write("intrinsic/distance_matrix.csv", intrinsic::to_csv(rep.matrix));

  const auto expert = expert_partition(task.definition, rep.matrix.heads);
  rep.expert = intrinsic::silhouette(rep.matrix, expert, "expert");

  std::vector<std::vector<int>> references;
  std::map<std::string, double> caa;
  if (archive.exists("judge/metrics.json")) {
    for (const auto& r : archive.read_json("judge/metrics.json").at("reports")) {
      caa["run-" + std::to_string(r.at("run").get<int>()) + "/clustering-" +
          std::to_string(r.at("clustering").get<int>())] = r.at("component_assignment_accuracy").get<double>();
    }
  }
  std::vector<double> kx, ky;
  for (const auto& rel : archive.list("runs")) {
    const auto pos = rel.find("/clusterings/clustering-");
    if (pos == std::string::npos || rel.find(".trace.json") != std::string::npos) continue;
    const auto run = rel.substr(5, pos - 5);
    const auto id = run + "/" + fs::path(rel).stem().string();
    const auto clustering = agent::clustering_from_json(archive.read_json(rel));
    const auto part = eval::partition_of(clustering);
    try {
      const auto labels = intrinsic::labels_for(rep.matrix, part);
      auto q = intrinsic::silhouette(rep.matrix, part, id);
      references.push_back(labels);
      if (caa.count(id)) {
        kx.push_back(q.mean);
        ky.push_back(caa[id]);
      }
      rep.system.push_back(std::move(q));
    } catch (const ValidationError&) {
      // Fewer than two head clusters: no silhouette for this clustering.
    }
  }
  if (references.empty()) references.push_back(intrinsic::labels_for(rep.matrix, expert));
  for (std::size_t g = 0; g < references.size(); ++g) {
    const int n = c.random_clusterings / static_cast<int>(references.size()) +
                  (static_cast<int>(g) < c.random_clusterings % static_cast<int>(references.size()) ? 1 : 0);
    const auto randoms =
        intrinsic::random_clusterings(references[g], n, subsystem_seed(c, "intrinsic/random/" + std::to_string(g)));
    for (const auto& labels : randoms) {
      try {
        const auto s = intrinsic::silhouette_samples(rep.matrix.values, labels);
        double sum = 0.0;
        for (double v : s) sum += v;
        rep.random.push_back(sum / static_cast<double>(s.size()));
      } catch (const ValidationError&) {
      }
    }
  }
  if (kx.size() >= 2) rep.kendall = intrinsic::kendall_tau(kx, ky);

  std::ostringstream sil;
  sil << "id,kind,mean_silhouette\n";
  sil << "expert,expert," << fmt(rep.expert.mean) << "\n";
  for (const auto& q : rep.system) sil << q.id << "," << c.system << "," << fmt(q.mean) << "\n";
  for (std::size_t i = 0; i < rep.random.size(); ++i) sil << "random-" << i << ",random," << fmt(rep.random[i]) << "\n";
  archive.write("intrinsic/silhouettes.csv", sil.str());

  std::vector<double> sys;
  for (const auto& q : rep.system) sys.push_back(q.mean);
  const auto s_sys = eval::summarize(sys);
  const auto s_rand = eval::summarize(rep.random);
  std::ostringstream summary;
  summary << "clustering,n,mean_silhouette,std\n";
  summary << "expert,1," << fmt(rep.expert.mean) << ",\n";
  if (s_sys.n > 0) summary << c.system << "," << s_sys.n << "," << fmt(s_sys.mean) << "," << fmt(s_sys.std) << "\n";
  summary << "random," << s_rand.n << "," << fmt(s_rand.mean) << "," << fmt(s_rand.std) << "\n";
  archive.write("intrinsic/silhouette_summary.csv", summary.str());
  if (rep.kendall) {
    archive.write_json("intrinsic/kendall.json", {{"tau", rep.kendall->tau},
                                                  {"p_value", rep.kendall->p_value},
                                                  {"n", rep.kendall->n},
                                                  {"exact", rep.kendall->exact},
                                                  {"x", "mean_silhouette"},
                                                  {"y", "component_assignment_accuracy"}});
  }

  rep.profile_head = rep.matrix.index_of(profile_head) >= 0 ? profile_head : rep.matrix.heads.front();
  rep.profile = intrinsic::head_profile(rep.matrix, rep.profile_head, expert);
  std::ostringstream prof;
  prof << "head,cluster,other,distance\n";
  for (const auto& e : rep.profile) {
    for (std::size_t i = 0; i < e.heads.size(); ++i) {
      prof << "\"" << model::to_string(rep.profile_head) << "\",\"" << e.cluster << "\",\""
           << model::to_string(e.heads[i]) << "\"," << fmt(e.distances[i]) << "\n";
    }
  }
  archive.write("intrinsic/profile-" + slug(rep.profile_head) + ".csv", prof.str());
  return rep;
}

std::vector<NoisePoint> cmd_noise_sweep(const RunConfig& c, RunArchive& archive, const Clients& clients) {
  c.validate();
  const auto checkpoint = model::load_checkpoint(model_id(c));
  model::ModelHandle m(checkpoint);
  const auto task = tasks::load_task(c.task, c.n_task_prompts, subsystem_seed(c, "task/prompts"), {&m});
  const auto comps = selected_components(c, task.definition);
  auto agent = agent_client(c, clients);
  auto judge = judge_client(c, clients);
  write_config(c, archive, "config.json");
  std::vector<NoisePoint> points;
  for (int s = 0; s < c.noise_seeds; ++s) {
    for (double alpha : c.alphas) {
      auto acfg = agent_config(c, s);
      acfg.noise_alpha = alpha;
      const auto traces = analyze(c, m, task, comps, acfg, *agent);
      const auto dir = "noise/alpha-" + alpha_label(alpha) + "/seed-" + std::to_string(s);
      write_traces(archive, dir, traces);
      const auto finals = finals_of(traces);
      const auto verdicts = eval::judge_match(eval::component_explanations(finals), task.definition, *judge,
                                              judge_config(c));
      archive.write_json(dir + "/judge.json", eval::to_json(verdicts));
      points.push_back({alpha, s,
                        eval::component_functionality_accuracy(judged_components(finals, verdicts),
                                                               task.definition.expert)});
    }
  }
  std::ostringstream raw;
  raw << "alpha,seed,component_functionality_accuracy\n";
  for (const auto& p : points) raw << alpha_label(p.alpha) << "," << p.seed << "," << fmt(p.component_functionality_accuracy) << "\n";
  archive.write("noise/sweep.csv", raw.str());
  std::ostringstream sum;
  sum << "alpha,n,mean,std\n";
  for (double alpha : c.alphas) {
    std::vector<double> v;
    for (const auto& p : points) {
      if (p.alpha == alpha) v.push_back(p.component_functionality_accuracy);
    }
    const auto s = eval::summarize(v);
    sum << alpha_label(alpha) << "," << s.n << "," << fmt(s.mean) << "," << fmt(s.std) << "\n";
  }
  archive.write("noise/summary.csv", sum.str());
  archive_transcript(c, archive, c.agent_transcript, "agent", clients.agent != nullptr);
  archive_transcript(c, archive, c.judge_transcript, "judge", clients.judge != nullptr);
  return points;
}

std::string cmd_audit(const RunConfig& c, const std::vector<ComponentRef>& heads, int n, int threads) {
  if (n < 1) throw ConfigError("audit needs at least one example");
  if (heads.empty()) throw ConfigError("audit needs at least one head");
  const auto checkpoint = model::load_checkpoint(model_id(c));
  model::ModelHandle m(checkpoint);
  const auto task = tasks::load_task(c.task, n, subsystem_seed(c, "audit/prompts"), {&m});
  const auto cfs =
      tasks::sample_counterfactuals(task.definition, task.prompts, subsystem_seed(c, "audit/counterfactuals"), {&m});
  tools::AuditOptions opt;
  opt.n_examples = n;
  opt.threads = threads;
  const auto audits = tools::audit_heads(m, task, cfs, heads, opt);
  std::ostringstream out;
  out << "task,model,head,n,correct_attention_rate,incorrect_object_top1_rate,cf_patch_uplift_rate\n";
  for (const auto& a : audits) {
    out << c.task << "," << checkpoint->id << ",\"" << model::to_string(a.head) << "\"," << a.n << ","
        << fmt(a.correct_attention_rate, "%.4f") << "," << fmt(a.incorrect_object_top1_rate, "%.4f") << ","
        << fmt(a.cf_patch_uplift_rate, "%.4f") << "\n";
  }
  return out.str();
}

std::vector<std::string> cmd_plot(RunArchive& archive) {
  namespace svg = util::svg;
  std::vector<std::string> written;
  auto emit = [&](const std::string& rel, const std::string& content) {
    archive.write(rel, content);
    written.push_back(rel);
  };
  if (archive.exists("judge/metrics.json")) {
    const auto j = archive.read_json("judge/metrics.json");
    std::vector<std::string> labels{"component functionality", "cluster functionality", "component assignment"};
    std::vector<double> means, stds;
    for (const char* k :
         {"component_functionality_accuracy", "cluster_functionality_accuracy", "component_assignment_accuracy"}) {
      means.push_back(j[k]["mean"].is_number() ? j[k]["mean"].get<double>() : 0.0);
      stds.push_back(j[k]["std"].is_number() ? j[k]["std"].get<double>() : 0.0);
    }
    emit("plots/metrics.svg", svg::bar_chart(j.value("task", "") + " (" + j.value("system", "") + ")", labels, means,
                                             stds, "accuracy"));
  }
  if (archive.exists("intrinsic/distance_matrix.json")) {
    const auto d = intrinsic::distance_matrix_from_json(archive.read_json("intrinsic/distance_matrix.json"));
    std::vector<std::string> labels;
    for (const auto& h : d.heads) labels.push_back(model::to_string(h));
    emit("plots/distance_matrix.svg", svg::heatmap("Swap distances (" + d.task + ")", labels, d.values));
  }
  for (const auto& rel : archive.list("intrinsic")) {
    if (rel.rfind("intrinsic/profile-", 0) != 0) continue;
    std::istringstream in(archive.read(rel));
    std::string line;
    std::getline(in, line);
    std::map<std::string, std::vector<double>> by;
    std::vector<std::string> order;
    std::string head;
    while (std::getline(in, line)) {
      // "head","cluster","other",distance
      std::vector<std::string> f;
      std::size_t i = 0;
      while (i < line.size()) {
        if (line[i] == '"') {
          const auto e = line.find('"', i + 1);
          f.push_back(line.substr(i + 1, e - i - 1));
          i = e + 2;
        } else {
          const auto e = line.find(',', i);
          f.push_back(line.substr(i, e == std::string::npos ? std::string::npos : e - i));
          i = e == std::string::npos ? line.size() : e + 1;
        }
      }
      if (f.size() < 4) continue;
      head = f[0];
      if (!by.count(f[1])) order.push_back(f[1]);
      by[f[1]].push_back(std::stod(f[3]));
    }
    std::vector<double> means, spread;
    for (const auto& name : order) {
      const auto s = eval::summarize(by[name]);
      means.push_back(s.mean);
      spread.push_back(s.std);
    }
    emit("plots/" + fs::path(rel).stem().string() + ".svg",
         svg::bar_chart("Swap distance from " + head, order, means, spread, "mean distance"));
  }
  if (archive.exists("intrinsic/silhouette_summary.csv")) {
    std::istringstream in(archive.read("intrinsic/silhouette_summary.csv"));
    std::string line;
    std::getline(in, line);
    std::vector<std::string> labels;
    std::vector<double> means, stds;
    while (std::getline(in, line)) {
      std::vector<std::string> f;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) f.push_back(cell);
      if (f.size() < 3 || f[2].empty()) continue;
      labels.push_back(f[0]);
      means.push_back(std::stod(f[2]));
      stds.push_back(f.size() > 3 && !f[3].empty() ? std::stod(f[3]) : 0.0);
    }
    emit("plots/silhouettes.svg", svg::bar_chart("Mean silhouette", labels, means, stds, "silhouette"));
  }
  if (archive.exists("noise/summary.csv")) {
    std::istringstream in(archive.read("noise/summary.csv"));
    std::string line;
    std::getline(in, line);
    svg::Series s{"component functionality accuracy", {}, {}, {}};
    while (std::getline(in, line)) {
      std::vector<std::string> f;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) f.push_back(cell);
      if (f.size() < 3 || f[2].empty()) continue;
      s.x.push_back(std::stod(f[0]));
      s.y.push_back(std::stod(f[2]));
      s.err.push_back(f.size() > 3 && !f[3].empty() ? std::stod(f[3]) : 0.0);
    }
    emit("plots/noise_sweep.svg", svg::line_chart("Accuracy under noise", "alpha", "accuracy", {s}));
  }
  return written;
}

int exit_code(const std::exception& e) {
  if (const auto* err = dynamic_cast<const Error*>(&e)) {
    switch (err->kind()) {
      case ErrorKind::kConfig:
      case ErrorKind::kNotFound:
        return 2;
      case ErrorKind::kProvider:
      case ErrorKind::kReplayMiss:
        return 3;
      case ErrorKind::kValidation:
      case ErrorKind::kAddressing:
      case ErrorKind::kUnsupportedComponent:
      case ErrorKind::kIncompatibleSwap:
      case ErrorKind::kLength:
      case ErrorKind::kProtocol:
        return 4;
      case ErrorKind::kIo:
        return 1;
    }
  }
  return 1;
}

}  // namespace interp::cli
