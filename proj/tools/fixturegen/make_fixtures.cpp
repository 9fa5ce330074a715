// Records the IOI replay fixtures with rule-based stand-ins for the backbone
// and the judge, replays them, and pins the replayed outputs.
//
//   interp_make_fixtures <out-dir>

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <regex>
#include <set>
#include <sstream>

#include "interp/agent/parser.hpp"
#include "interp/cli/commands.hpp"
#include "interp/error.hpp"

using namespace interp;
namespace fs = std::filesystem;

namespace {

struct Role {
  std::string key;
  std::string cluster;
  std::string sentence;
};

const std::vector<Role>& roles() {
  static const std::vector<Role> r{
      {"duplicate", "Duplicate detectors",
       "It is active at the second occurrence of the subject token and attends back to the first occurrence, "
       "marking the duplicate token position."},
      {"induction", "Induction-like heads",
       "It attends to the token after the first occurrence of the subject, an [A][B]...[A] pattern that signals the "
       "subject is duplicated."},
      {"inhibition", "Subject inhibitors",
       "It attends to the second occurrence of the subject and suppresses attention to the subject name downstream."},
      {"mover", "Name copiers",
       "It attends to the indirect object name and copies the recipient name forward to the output."},
      {"negative", "Negative copiers",
       "It writes opposite to the names it attends to, decreasing confidence in the predicted name."},
  };
  return r;
}

const Role& role_for_layer(int layer) {
  if (layer <= 3) return roles()[0];
  if (layer <= 6) return roles()[1];
  if (layer <= 8) return roles()[2];
  if (layer <= 10) return roles()[3];
  return roles()[4];
}

int assistant_turns(const llm::ChatRequest& r) {
  int n = 0;
  for (const auto& m : r.messages) n += m.role == "assistant";
  return n;
}

// Layer of the component named in <component_info>.
int component_layer(const std::string& system) {
  static const std::regex re(R"(of layer (\d+))");
  std::smatch m;
  const auto info = agent::extract_tag(system, {"component_info"}).value_or(system);
  if (!std::regex_search(info, m, re)) throw ValidationError("no component in prompt");
  return std::stoi(m[1]);
}

// Most attended key in the first attention block of the results.
std::string observation(const std::string& results) {
  static const std::regex attn(R"(\[(\d+)\] ('(?:[^'\\]|\\.)*'|"(?:[^"\\]|\\.)*") (\d\.\d{4}))");
  const auto at = results.find("Attention patterns");
  if (at != std::string::npos) {
    const auto end = results.find("\n\n", results.find("Prompt 1", at));
    const std::string block = results.substr(at, end == std::string::npos ? std::string::npos : end - at);
    std::string best_tok;
    double best = -1.0;
    for (std::sregex_iterator it(block.begin(), block.end(), attn), e; it != e; ++it) {
      const double w = std::stod((*it)[3]);
      if (w > best) {
        best = w;
        best_tok = (*it)[2];
      }
    }
    if (best >= 0.0) {
      return "On prompts[0] it puts " + std::to_string(best).substr(0, 6) + " of its attention on " + best_tok + ".";
    }
  }
  return "No attention pattern was available.";
}

std::string final_reply(const std::string& system, const std::string& results) {
  const auto& role = role_for_layer(component_layer(system));
  return "<final_hypothesis>\nRole: " + role.key + ".\n" + role.sentence + "\n" + observation(results) +
         "\n<summarized_description>" + role.sentence + "</summarized_description>\n</final_hypothesis>";
}

std::string agentic(const llm::ChatRequest& r, int) {
  if (assistant_turns(r) == 0) {
    return "<thought_process>Check how patching a clean prompt with a counterfactual moves the output."
           "</thought_process>\n<experiment_calls>\n<description>\nPatch prompts[0] with prompts[1].\n</description>\n"
           "<experiment>\nmi.run_patching([prompts[0]], [prompts[1]], token_positions_source=[token_positions[0]], "
           "token_positions_counterfactual=[token_positions[1]], layer_head_pairs=[(" +
           std::to_string(component_layer(r.system)) + ", None)], top_k=3)\n</experiment>\n</experiment_calls>";
  }
  return final_reply(r.system, r.system);
}

std::string oneshot(const llm::ChatRequest& r, int) { return final_reply(r.system, r.system); }

std::string clusterer(const llm::ChatRequest& r, int) {
  const auto results = agent::extract_tag(r.messages.front().content, {"experiment_results"}).value_or("");
  std::map<std::string, std::vector<std::string>> groups;
  for (const auto& block : agent::extract_all(results, "component_result")) {
    const auto comp = agent::extract_tag(block, {"component"}).value_or("");
    const auto hyp = agent::extract_tag(block, {"final_hypothesis"}).value_or("");
    std::string key = "mover";
    for (const auto& role : roles()) {
      if (hyp.find("Role: " + role.key + ".") != std::string::npos) key = role.key;
    }
    groups[key].push_back(comp);
  }
  std::string out = "<scratchpad>Grouped by the stated role.</scratchpad>\n<cluster_analysis>\n";
  for (const auto& role : roles()) {
    const auto it = groups.find(role.key);
    if (it == groups.end()) continue;
    out += "<cluster>\n<cluster_name>" + role.cluster + "</cluster_name>\n<components>\n";
    for (const auto& c : it->second) out += "<component>" + c + "</component>\n";
    out += "</components>\n<function>" + role.sentence + "</function>\n<evidence>Shared role statement.</evidence>\n"
           "</cluster>\n";
  }
  return out + "</cluster_analysis>";
}

std::set<std::string> words(const std::string& text) {
  std::set<std::string> out;
  std::string w;
  for (const char ch : text + " ") {
    if (std::isalpha(static_cast<unsigned char>(ch))) {
      w += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    } else {
      if (w.size() >= 4) out.insert(w);
      w.clear();
    }
  }
  return out;
}

std::string judge(const llm::ChatRequest& r, int) {
  const auto explanation = words(agent::extract_tag(r.messages.front().content, {"explanation"}).value_or(""));
  std::string best = "no-match";
  double best_score = 0.15;
  std::ostringstream notes;
  for (const auto& cluster : agent::extract_all(r.system, "cluster")) {
    const auto name = agent::extract_tag(cluster, {"name"}).value_or("");
    const auto desc = words(agent::extract_tag(cluster, {"description"}).value_or(""));
    int shared = 0;
    for (const auto& w : explanation) shared += static_cast<int>(desc.count(w));
    const double score = explanation.empty() ? 0.0 : static_cast<double>(shared) / explanation.size();
    notes << name << ": " << shared << " shared words\n";
    if (score > best_score) {
      best_score = score;
      best = name;
    }
  }
  return notes.str() + "<match>" + best + "</match>";
}

std::shared_ptr<llm::LlmClient> recording(llm::ScriptedClient::Script script, const fs::path& path) {
  fs::remove(path);
  return std::make_shared<llm::RecordingClient>(std::make_shared<llm::ScriptedClient>(std::move(script)), path);
}

void spit(const fs::path& p, const std::string& content) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << content;
}

cli::RunConfig base_config(const std::string& system, int n_clusterings) {
  cli::RunConfig c;
  c.task = "ioi-gpt2";
  c.model = "toy-gpt2-small";
  c.system = system;
  c.seed = 7;
  c.n_runs = 1;
  c.n_clusterings = n_clusterings;
  c.components = {"(0, 1)", "(3, 0)", "(5, 5)", "(6, 9)", "(9, 9)", "(10, 0)"};
  c.max_iterations = 3;
  c.n_init_prompts = 3;
  c.n_task_prompts = 6;
  return c;
}

// Records, replays into a fresh archive, checks both agree and pins the replay.
void make(const fs::path& out, const std::string& name, const std::string& system, int n_clusterings,
          const fs::path& scratch) {
  const auto dir = out / name;
  fs::create_directories(dir);
  auto c = base_config(system, n_clusterings);
  spit(dir / "config.json", cli::to_json(c).dump(2) + "\n");

  const auto rec_dir = scratch / (name + "-record");
  fs::remove_all(rec_dir);
  auto rec = cli::RunArchive::create(rec_dir);
  const bool one = system == "oneshot";
  cli::Clients clients{recording(
                           [one](const llm::ChatRequest& r, int i) {
                             if (r.messages.front().content.find("<experiment_results>") != std::string::npos) {
                               return clusterer(r, i);
                             }
                             return one ? oneshot(r, i) : agentic(r, i);
                           },
                           dir / "agent.jsonl"),
                       nullptr};
  cli::cmd_analyze(c, rec, clients);
  clients.judge = recording(judge, dir / "judge.jsonl");
  cli::cmd_judge(c, rec, clients);

  const auto rep_dir = scratch / (name + "-replay");
  fs::remove_all(rep_dir);
  auto rep = cli::RunArchive::create(rep_dir);
  c.mode = "replay";
  c.agent_transcript = (dir / "agent.jsonl").string();
  c.judge_transcript = (dir / "judge.jsonl").string();
  cli::cmd_analyze(c, rep);
  cli::cmd_judge(c, rep);

  std::vector<std::string> pinned{"runs/run-0/hypotheses.json", "judge/metrics.json"};
  if (n_clusterings > 0) pinned.push_back("runs/run-0/clusterings/clustering-0.json");
  for (const auto& rel : pinned) {
    if (rec.read(rel) != rep.read(rel)) throw ValidationError("replay differs from recording: " + rel);
    spit(dir / "expected" / fs::path(rel).filename(), rep.read(rel));
  }
  spit(dir / "expected" / "root_hash.txt", rep.root_hash() + "\n");
  std::cout << name << " root " << rep.root_hash() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: interp_make_fixtures <out-dir>\n";
    return 2;
  }
  const fs::path out(argv[1]);
  const auto scratch = fs::temp_directory_path() / "interp-fixtures";
  try {
    make(out, "agentic", "agentic", 1, scratch);
    make(out, "oneshot", "oneshot", 0, scratch);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  fs::remove_all(scratch);
  return 0;
}
