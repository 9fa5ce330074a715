#include "interp/eval/extrinsic.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "interp/agent/parser.hpp"
#include "interp/agent/prompts.hpp"
#include "interp/error.hpp"
#include "interp/util/text.hpp"

namespace interp::eval {

using json = nlohmann::json;

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n\"'`*");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n\"'`*.");
  return std::string(s.substr(b, e - b + 1));
}

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::vector<std::string> cluster_names(const tasks::TaskDefinition& task) {
  std::vector<std::string> names;
  for (const auto& c : task.expert.clusters) {
    if (std::find(names.begin(), names.end(), c.name) == names.end()) names.push_back(c.name);
  }
  return names;
}

std::string join(const std::vector<std::string>& xs, const std::string& sep) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? sep : "") + xs[i];
  return s;
}

std::string template_hash() {
  return util::sha256_hex(agent::load_prompt("judge_system.txt") + agent::load_prompt("judge_user.txt") +
                          agent::message("judge_corrective"));
}

}  // namespace

const std::string& JudgeAssignment::at(const std::string& id) const {
  auto it = matches.find(id);
  if (it == matches.end()) throw NotFoundError("no judge verdict for '" + id + "'");
  return it->second;
}

std::string judge_system_prompt(const tasks::TaskDefinition& task) {
  std::string clusters;
  std::vector<std::string> seen;
  for (const auto& c : task.expert.clusters) {
    if (std::find(seen.begin(), seen.end(), c.name) != seen.end()) continue;
    seen.push_back(c.name);
    clusters += "<cluster>\n<name>" + c.name + "</name>\n<description>" + c.description + "</description>\n</cluster>\n";
  }
  if (seen.empty()) throw ValidationError("task " + task.name + " has no expert clusters");
  return agent::fill(agent::load_prompt("judge_system.txt"), {{"task_description", task.description},
                                                              {"expert_clusters", clusters},
                                                              {"example_name", seen.front()}});
}

std::optional<std::string> parse_verdict(std::string_view reply, const std::vector<std::string>& names) {
  const auto all = agent::extract_all(reply, "match");
  if (all.empty()) return std::nullopt;
  const auto answer = lower(trim(all.back()));
  if (answer == kNoMatch || answer == "no match" || answer == "none") return kNoMatch;
  for (const auto& n : names) {
    if (lower(n) == answer) return n;
  }
  return std::nullopt;
}

JudgeAssignment judge_match(const std::vector<Explanation>& explanations, const tasks::TaskDefinition& task,
                            llm::LlmClient& client, const JudgeConfig& config) {
  const auto names = cluster_names(task);
  const auto system = judge_system_prompt(task);
  const auto user_tmpl = agent::load_prompt("judge_user.txt");
  JudgeAssignment out;
  out.template_hash = template_hash();
  for (const auto& ex : explanations) {
    if (out.matches.count(ex.id)) throw ValidationError("duplicate explanation id '" + ex.id + "'");
    JudgeRecord rec;
    rec.id = ex.id;
    rec.verdict = kNoMatch;
    if (!trim(ex.text).empty()) {
      llm::ChatRequest req;
      req.model = config.model;
      req.system = system;
      req.temperature = config.temperature;
      req.max_tokens = config.max_tokens;
      req.messages.push_back({"user", agent::fill(user_tmpl, {{"explanation", ex.text}})});
      for (int attempt = 0; attempt < 2; ++attempt) {
        rec.request_hashes.push_back(llm::request_hash(req));
        const auto reply = client.complete(req).text;
        rec.responses.push_back(reply);
        if (auto v = parse_verdict(reply, names)) {
          rec.verdict = *v;
          break;
        }
        req.messages.push_back({"assistant", reply});
        req.messages.push_back({"user", agent::fill(agent::message("judge_corrective"), {{"names", join(names, "; ")}})});
      }
    }
    out.matches[ex.id] = rec.verdict;
    out.records.push_back(std::move(rec));
  }
  return out;
}

json to_json(const JudgeAssignment& a) {
  json records = json::array();
  for (const auto& r : a.records) {
    json responses = json::array();
    for (const auto& s : r.responses) responses.push_back(util::printable(s));
    records.push_back(
        {{"id", r.id}, {"verdict", r.verdict}, {"request_hashes", r.request_hashes}, {"responses", responses}});
  }
  return {{"schema", "interp.judge"}, {"schema_version", 1}, {"template_hash", a.template_hash}, {"records", records}};
}

JudgeAssignment judge_from_json(const json& j) {
  JudgeAssignment a;
  a.template_hash = j.value("template_hash", "");
  for (const auto& r : j.at("records")) {
    JudgeRecord rec{r.at("id"), r.at("verdict"), r.value("request_hashes", std::vector<std::string>{}),
                    r.value("responses", std::vector<std::string>{})};
    a.matches[rec.id] = rec.verdict;
    a.records.push_back(std::move(rec));
  }
  return a;
}

std::vector<Explanation> component_explanations(const std::vector<agent::FinalHypothesis>& hypotheses) {
  std::vector<Explanation> out;
  for (const auto& h : hypotheses) {
    out.push_back({model::to_string(h.component), h.summarized_description.empty() ? h.text : h.summarized_description});
  }
  return out;
}

std::vector<Explanation> cluster_explanations(const agent::Clustering& clustering) {
  std::vector<Explanation> out;
  for (std::size_t i = 0; i < clustering.clusters.size(); ++i) {
    const auto& c = clustering.clusters[i];
    const auto text = c.function.empty() ? std::string() : "Cluster \"" + c.name + "\": " + c.function;
    out.push_back({"cluster:" + std::to_string(i), text});
  }
  return out;
}

namespace {

bool listed(const tasks::ExpertClustering& expert, const std::string& cluster, const ComponentRef& c) {
  if (cluster == kNoMatch) return false;
  for (const auto& cl : expert.clusters) {
    if (cl.name == cluster && std::find(cl.components.begin(), cl.components.end(), c) != cl.components.end()) {
      return true;
    }
  }
  return false;
}

}  // namespace

double component_functionality_accuracy(const std::vector<std::pair<ComponentRef, std::string>>& judged,
                                        const tasks::ExpertClustering& expert) {
  if (judged.empty()) throw ValidationError("no judged components");
  int correct = 0;
  for (const auto& [c, verdict] : judged) correct += listed(expert, verdict, c);
  return static_cast<double>(correct) / static_cast<double>(judged.size());
}

double cluster_functionality_accuracy(const agent::Clustering& predicted, const std::vector<std::string>& verdicts,
                                      const tasks::ExpertClustering& expert) {
  if (verdicts.size() != predicted.clusters.size()) throw ValidationError("one verdict per predicted cluster required");
  double total = 0.0;
  int m = 0;
  for (std::size_t j = 0; j < predicted.clusters.size(); ++j) {
    const auto& members = predicted.clusters[j].components;
    if (members.empty()) continue;
    int correct = 0;
    for (const auto& c : members) correct += listed(expert, verdicts[j], c);
    total += static_cast<double>(correct) / static_cast<double>(members.size());
    ++m;
  }
  if (m == 0) throw ValidationError("no non-empty predicted clusters");
  return total / m;
}

Partition partition_of(const agent::Clustering& c) {
  Partition p;
  for (const auto& cl : c.clusters) {
    p.names.push_back(cl.position.empty() ? cl.name : cl.position + "/" + cl.name);
    p.clusters.push_back(cl.components);
  }
  return p;
}

Partition partition_of(const tasks::ExpertClustering& c) {
  Partition p;
  for (const auto& cl : c.clusters) {
    p.names.push_back(cl.name);
    p.clusters.push_back(cl.components);
  }
  return p;
}

std::vector<int> hungarian_max(const std::vector<std::vector<double>>& weights) {
  const int rows = static_cast<int>(weights.size());
  int cols = 0;
  for (const auto& r : weights) cols = std::max(cols, static_cast<int>(r.size()));
  const int n = std::max(rows, cols);
  if (n == 0) return {};
  double top = 0.0;
  for (const auto& r : weights) {
    for (double w : r) top = std::max(top, w);
  }
  // Square cost matrix, 1-indexed, minimizing top - weight; padding costs top.
  std::vector<std::vector<double>> a(static_cast<std::size_t>(n + 1), std::vector<double>(static_cast<std::size_t>(n + 1), 0.0));
  for (int i = 1; i <= n; ++i) {
    for (int j = 1; j <= n; ++j) {
      double w = 0.0;
      if (i <= rows && j <= static_cast<int>(weights[static_cast<std::size_t>(i - 1)].size())) {
        w = weights[static_cast<std::size_t>(i - 1)][static_cast<std::size_t>(j - 1)];
      }
      a[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = top - w;
    }
  }
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n + 1)), v(static_cast<std::size_t>(n + 1));
  std::vector<int> p(static_cast<std::size_t>(n + 1)), way(static_cast<std::size_t>(n + 1));
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n + 1), inf);
    std::vector<char> used(static_cast<std::size_t>(n + 1), 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const int i0 = p[static_cast<std::size_t>(j0)];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = a[static_cast<std::size_t>(i0)][static_cast<std::size_t>(j)] -
                           u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> out(static_cast<std::size_t>(rows), -1);
  for (int j = 1; j <= n; ++j) {
    const int i = p[static_cast<std::size_t>(j)];
    if (i >= 1 && i <= rows && j <= static_cast<int>(weights[static_cast<std::size_t>(i - 1)].size())) {
      out[static_cast<std::size_t>(i - 1)] = j - 1;
    }
  }
  return out;
}

namespace {

std::set<ComponentRef> checked_set(const Partition& p, const char* which) {
  if (p.names.size() != p.clusters.size()) throw ValidationError(std::string(which) + " partition is malformed");
  std::set<ComponentRef> all;
  for (const auto& cl : p.clusters) {
    for (const auto& c : cl) {
      if (!all.insert(c).second) {
        throw ValidationError(std::string(which) + " clustering lists " + model::to_string(c) + " more than once");
      }
    }
  }
  return all;
}

// Indices sorted by name, so the assignment is deterministic under ties.
std::vector<int> name_order(const Partition& p) {
  std::vector<int> idx(p.names.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return p.names[static_cast<std::size_t>(a)] < p.names[static_cast<std::size_t>(b)]; });
  return idx;
}

}  // namespace

AssignmentResult component_assignment_accuracy(const Partition& predicted, const Partition& expert) {
  const auto a = checked_set(predicted, "predicted");
  const auto b = checked_set(expert, "expert");
  if (a != b) throw ValidationError("predicted and expert clusterings cover different components");
  if (a.empty()) throw ValidationError("empty clustering");
  const auto rows = name_order(predicted);
  const auto cols = name_order(expert);
  std::vector<std::vector<double>> overlap(rows.size(), std::vector<double>(cols.size(), 0.0));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& pc = predicted.clusters[static_cast<std::size_t>(rows[i])];
    for (std::size_t j = 0; j < cols.size(); ++j) {
      const auto& ec = expert.clusters[static_cast<std::size_t>(cols[j])];
      for (const auto& c : pc) overlap[i][j] += std::find(ec.begin(), ec.end(), c) != ec.end();
    }
  }
  const auto match = hungarian_max(overlap);
  AssignmentResult r;
  r.total = static_cast<int>(a.size());
  for (std::size_t i = 0; i < match.size(); ++i) {
    if (match[i] < 0) continue;
    const int w = static_cast<int>(overlap[i][static_cast<std::size_t>(match[i])]);
    r.matched += w;
    if (w > 0) r.pairs.emplace_back(rows[i], cols[static_cast<std::size_t>(match[i])]);
  }
  std::sort(r.pairs.begin(), r.pairs.end());
  r.accuracy = static_cast<double>(r.matched) / r.total;
  return r;
}

MetricSummary summarize(const std::vector<double>& values) {
  MetricSummary s;
  s.n = static_cast<int>(values.size());
  if (values.empty()) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / s.n;
  if (s.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / (s.n - 1));
  }
  return s;
}

AggregateReport aggregate(const std::vector<MetricsReport>& reports) {
  AggregateReport out;
  out.reports = reports;
  std::vector<double> a, b, c;
  for (const auto& r : reports) {
    if (out.task.empty()) {
      out.task = r.task;
      out.system = r.system;
    }
    a.push_back(r.component_functionality_accuracy);
    b.push_back(r.cluster_functionality_accuracy);
    c.push_back(r.component_assignment_accuracy);
  }
  out.component_functionality = summarize(a);
  out.cluster_functionality = summarize(b);
  out.component_assignment = summarize(c);
  return out;
}

json to_json(const MetricsReport& r) {
  return {{"task", r.task},
          {"system", r.system},
          {"run", r.run},
          {"clustering", r.clustering},
          {"component_functionality_accuracy", r.component_functionality_accuracy},
          {"cluster_functionality_accuracy", r.cluster_functionality_accuracy},
          {"component_assignment_accuracy", r.component_assignment_accuracy},
          {"n_components", r.n_components},
          {"n_clusters", r.n_clusters}};
}

json to_json(const AggregateReport& r) {
  auto summary = [](const MetricSummary& s) { return json{{"mean", s.mean}, {"std", s.std}, {"n", s.n}}; };
  json reports = json::array();
  for (const auto& x : r.reports) reports.push_back(to_json(x));
  return {{"schema", "interp.metrics"},
          {"schema_version", 1},
          {"task", r.task},
          {"system", r.system},
          {"component_functionality_accuracy", summary(r.component_functionality)},
          {"cluster_functionality_accuracy", summary(r.cluster_functionality)},
          {"component_assignment_accuracy", summary(r.component_assignment)},
          {"reports", reports}};
}

std::string to_csv(const AggregateReport& r) {
  std::ostringstream out;
  out << "task,system,run,clustering,component_functionality_accuracy,cluster_functionality_accuracy,"
         "component_assignment_accuracy,n_components,n_clusters\n";
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return std::string(buf);
  };
  for (const auto& x : r.reports) {
    out << x.task << "," << x.system << "," << x.run << "," << x.clustering << ","
        << num(x.component_functionality_accuracy) << "," << num(x.cluster_functionality_accuracy) << ","
        << num(x.component_assignment_accuracy) << "," << x.n_components << "," << x.n_clusters << "\n";
  }
  out << r.task << "," << r.system << ",mean,," << num(r.component_functionality.mean) << ","
      << num(r.cluster_functionality.mean) << "," << num(r.component_assignment.mean) << ",,\n";
  out << r.task << "," << r.system << ",std,," << num(r.component_functionality.std) << ","
      << num(r.cluster_functionality.std) << "," << num(r.component_assignment.std) << ",,\n";
  return out.str();
}

}  // namespace interp::eval
