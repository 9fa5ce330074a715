#include "interp/tasks/task.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "interp/error.hpp"
#include "interp/model/registry.hpp"

namespace interp::tasks {

namespace {

using json = nlohmann::json;

const std::vector<std::string>& known_tasks() {
  static const std::vector<std::string> names = {"ioi-gpt2",        "ioi-pythia",     "greater-than", "acronyms",
                                                 "colored-objects", "entity-tracking"};
  return names;
}

// "S1+1" -> ("S1", 1)
std::pair<std::string, int> split_offset(const std::string& name) {
  const auto plus = name.find('+');
  if (plus == std::string::npos) return {name, 0};
  return {name.substr(0, plus), std::stoi(name.substr(plus + 1))};
}

}  // namespace

std::vector<ComponentRef> ExpertClustering::components() const {
  std::vector<ComponentRef> out;
  std::set<ComponentRef> seen;
  for (const auto& c : clusters) {
    for (const auto& comp : c.components) {
      if (seen.insert(comp).second) out.push_back(comp);
    }
  }
  return out;
}

bool ExpertClustering::is_partition() const {
  std::set<ComponentRef> seen;
  for (const auto& c : clusters) {
    if (c.components.empty()) return false;
    for (const auto& comp : c.components) {
      if (!seen.insert(comp).second) return false;
    }
  }
  return true;
}

std::optional<std::size_t> ExpertClustering::cluster_of(const ComponentRef& c) const {
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    if (std::find(clusters[i].components.begin(), clusters[i].components.end(), c) != clusters[i].components.end()) {
      return i;
    }
  }
  return std::nullopt;
}

std::optional<std::size_t> ExpertClustering::find(const std::string& name) const {
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    if (clusters[i].name == name) return i;
  }
  return std::nullopt;
}

ExpertClustering ExpertClustering::canonical() const {
  ExpertClustering out;
  std::set<ComponentRef> seen;
  for (const auto& c : clusters) {
    ExpertCluster kept = c;
    kept.components.clear();
    for (const auto& comp : c.components) {
      if (seen.insert(comp).second) kept.components.push_back(comp);
    }
    if (!kept.components.empty()) out.clusters.push_back(std::move(kept));
  }
  return out;
}

std::vector<ComponentRef> TaskDefinition::heads() const {
  std::vector<ComponentRef> out;
  for (const auto& c : circuit) {
    if (c.is_head()) out.push_back(c);
  }
  return out;
}

std::string TaskDefinition::position_for(const ComponentRef& c) const {
  const auto idx = expert.cluster_of(c);
  if (!idx) throw NotFoundError(model::to_string(c) + " is not in the " + name + " circuit");
  return expert.clusters[*idx].position;
}

std::vector<std::string> TaskBundle::texts() const {
  std::vector<std::string> out;
  for (const auto& p : prompts) out.push_back(p.text);
  return out;
}

std::vector<int> TaskBundle::positions_for(const ComponentRef& c) const {
  const auto [base, offset] = split_offset(definition.position_for(c));
  std::vector<int> out;
  for (const auto& p : prompts) {
    auto it = p.positions.find(base);
    if (it == p.positions.end()) {
      throw ValidationError("position '" + base + "' is not resolved for prompt: " + p.text);
    }
    out.push_back(it->second + offset);
  }
  return out;
}

std::vector<std::string> task_names() { return known_tasks(); }

TaskDefinition parse_task_definition(const std::string& json_text) {
  const json j = json::parse(json_text);
  TaskDefinition d;
  d.schema_version = j.at("schema_version").get<int>();
  if (d.schema_version != 1) throw ConfigError("unsupported task schema version " + std::to_string(d.schema_version));
  d.name = j.at("name").get<std::string>();
  d.task = j.at("task").get<std::string>();
  d.model = j.at("model").get<std::string>();
  d.tier = j.value("tier", "desk");
  d.description = j.value("task_description", "");
  d.citation = j.value("citation", "");
  d.model_note = j.value("model_note", "");
  d.alternative_models = j.value("alternative_models", std::vector<std::string>{});
  for (const auto& c : j.at("clusters")) {
    ExpertCluster cl;
    cl.name = c.at("name").get<std::string>();
    cl.description = c.at("description").get<std::string>();
    cl.position = c.value("position", "END");
    cl.citation = c.value("citation", d.citation);
    for (const auto& s : c.at("components")) {
      const auto ref = model::parse_component(s.get<std::string>());
      if (!ref) throw ConfigError("bad component '" + s.get<std::string>() + "' in task " + d.name);
      cl.components.push_back(*ref);
    }
    if (cl.description.empty()) throw ConfigError("cluster '" + cl.name + "' has an empty description");
    d.expert.clusters.push_back(std::move(cl));
  }
  d.circuit = d.expert.components();
  return d;
}

TaskDefinition load_task_definition(const std::string& name) {
  if (std::find(known_tasks().begin(), known_tasks().end(), name) == known_tasks().end()) {
    throw NotFoundError("unknown task '" + name + "'");
  }
  const auto path = model::asset_dir() / "tasks" / (name + ".json");
  std::ifstream in(path);
  if (!in) throw NotFoundError("task data file missing: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_task_definition(ss.str());
}

TaskBundle load_task(const std::string& name, int n, std::uint64_t seed, const GenerateOptions& options) {
  TaskBundle b;
  b.definition = load_task_definition(name);
  b.seed = seed;
  b.prompts = generate_prompts(b.definition, n, seed, options);
  return b;
}

void resolve_positions(TaskExample& ex, const model::ModelHandle& model) {
  const auto tp = model.tokenize(ex.text);
  ex.positions.clear();
  ex.position_groups.clear();
  for (const auto& [name, span] : ex.spans) {
    const auto pos = tp.position_of_span(span.begin, span.end);
    if (!pos) throw ValidationError("span '" + name + "' does not map to a token in: " + ex.text);
    ex.positions[name] = *pos;
  }
  for (const auto& [name, spans] : ex.span_groups) {
    auto& out = ex.position_groups[name];
    for (const auto& span : spans) {
      const auto pos = tp.position_of_span(span.begin, span.end);
      if (!pos) throw ValidationError("span group '" + name + "' does not map to tokens in: " + ex.text);
      out.push_back(*pos);
    }
  }
  ex.positions["END"] = tp.size() - 1;
}

}  // namespace interp::tasks
