#include "interp/agent/agent.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include "interp/agent/prompts.hpp"
#include "interp/error.hpp"
#include "interp/util/random.hpp"
#include "interp/util/text.hpp"

namespace interp::agent {

using json = nlohmann::json;

void AgentConfig::validate() const {
  if (max_iterations < 1) throw ConfigError("max_iterations must be positive");
  if (n_init_prompts < 1 || n_init_prompts > n_task_prompts) {
    throw ConfigError("need 0 < n_init_prompts <= n_task_prompts");
  }
  if (noise_alpha < 0.0 || noise_alpha > 1.0) throw ConfigError("noise alpha must lie in [0, 1]");
}

int RunTrace::tool_calls() const {
  int n = 0;
  for (const auto& t : turns) n += static_cast<int>(t.calls.size());
  return n;
}

namespace {

std::string api_text() {
  static const std::string text = load_prompt("researcher_api.txt");
  return text;
}

Expr int_expr(long long v) { return {Expr::Kind::kInt, v, {}, {}}; }

Expr ref_list(Expr::Kind kind, const std::vector<int>& indices) {
  Expr list{Expr::Kind::kList, 0, {}, {}};
  for (int i : indices) list.items.push_back({kind, i, {}, {}});
  return list;
}

Expr pair_list(const ComponentRef& c) {
  Expr pair{Expr::Kind::kTuple, 0, {}, {int_expr(c.layer)}};
  pair.items.push_back(c.head ? int_expr(*c.head) : Expr{});
  return {Expr::Kind::kList, 0, {}, {pair}};
}

std::vector<int> iota(int n) {
  std::vector<int> v(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = i;
  return v;
}

ToolCallRequest make_call(const std::string& fn, std::vector<Argument> args) { return {fn, true, std::move(args)}; }

CallRecord run_request(const model::ModelHandle& m, const ExperimentRequest& req, const CallContext& ctx,
                       double alpha, std::uint64_t seed) {
  CallRecord rec;
  rec.description = req.description;
  rec.source = req.source;
  rec.result = nullptr;
  if (!req.call || !req.error.empty()) {
    rec.error = req.error.empty() ? "could not parse call" : req.error;
    return rec;
  }
  try {
    const auto bound = bind(*req.call, ctx);
    auto result = execute(m, bound);
    if (alpha > 0.0 && result.tool != tools::Tool::kTokenPositions) result = tools::apply_noise(result, alpha, seed);
    rec.tool = tools::to_string(result.tool);
    rec.output = result.canonical_text;
    rec.result = tools::to_json(result);
  } catch (const Error& e) {
    rec.error = e.what();
  }
  return rec;
}

std::string format_results(const std::vector<CallRecord>& calls) {
  std::string out = "<experiments_results>\n";
  for (const auto& c : calls) {
    out += "<experiment_result>\n";
    if (!c.description.empty()) out += "<description>\n" + c.description + "\n</description>\n";
    out += "<experiment>\n" + c.source + "\n</experiment>\n<output>\n";
    out += c.error.empty() ? c.output : "Error: " + c.error + "\n";
    if (!out.empty() && out.back() != '\n') out += '\n';
    out += "</output>\n</experiment_result>\n";
  }
  return out + "</experiments_results>";
}

struct RunSetup {
  std::vector<std::string> prompts;
  std::vector<int> positions;
  std::string position_name;
  CallContext context;
};

RunSetup setup(const tasks::TaskBundle& task, const ComponentRef& c, const AgentConfig& config) {
  config.validate();
  if (std::find(task.circuit().begin(), task.circuit().end(), c) == task.circuit().end()) {
    throw ValidationError(model::to_string(c) + " is not in the " + task.name() + " circuit");
  }
  if (static_cast<int>(task.prompts.size()) < config.n_task_prompts) {
    throw ValidationError("task bundle has " + std::to_string(task.prompts.size()) + " prompts, need " +
                          std::to_string(config.n_task_prompts));
  }
  RunSetup s;
  const auto texts = task.texts();
  const auto positions = task.positions_for(c);
  s.prompts.assign(texts.begin(), texts.begin() + config.n_task_prompts);
  s.positions.assign(positions.begin(), positions.begin() + config.n_task_prompts);
  s.position_name = task.definition.position_for(c);
  s.context = {s.prompts, s.positions, c};
  return s;
}

std::vector<CallRecord> initial_calls(const model::ModelHandle& m, const RunSetup& s, const ComponentRef& c,
                                      const AgentConfig& config) {
  const auto idx = iota(config.n_init_prompts);
  std::vector<CallRecord> out;
  const auto lens = make_call("logit_lens", {{"", ref_list(Expr::Kind::kPromptRef, idx)},
                                             {"token_positions", ref_list(Expr::Kind::kPositionRef, idx)},
                                             {"layer_head_pairs", pair_list(c)}});
  out.push_back(run_request(m, {"Logit lens of the component at the position of interest.", render_call(lens), lens, ""},
                            s.context, config.noise_alpha, util::derive_seed(config.seed, "noise/initial/lens")));
  if (c.is_head()) {
    const auto attn = make_call("attention_map_generation",
                                {{"", ref_list(Expr::Kind::kPromptRef, idx)},
                                 {"query_positions", ref_list(Expr::Kind::kPositionRef, idx)},
                                 {"layer_head_pairs", pair_list(c)}});
    out.push_back(run_request(m, {"Attention pattern of the component from the position of interest.",
                                  render_call(attn), attn, ""},
                              s.context, config.noise_alpha, util::derive_seed(config.seed, "noise/initial/attention")));
  }
  return out;
}

std::string agent_prompt(const model::ModelHandle& m, const tasks::TaskBundle& task, const ComponentRef& c,
                         const AgentConfig& config, const RunSetup& s) {
  const auto init = initial_calls(m, s, c, config);
  const std::string initial = "Initial results for prompts[0] to prompts[" + std::to_string(config.n_init_prompts - 1) +
                              "] at their token positions:\n\n" + format_results(init);
  return fill(load_prompt("agent_system.txt"),
              {{"user_guidelines", format_user_guidelines(task.definition.description, s.position_name)},
               {"prompts_and_positions", format_prompts_and_positions(m, s.prompts, s.positions)},
               {"component", format_component(c)},
               {"api_functions", api_text()},
               {"initial_results", initial}});
}

llm::ChatRequest chat(const AgentConfig& config, const std::string& system, const std::vector<llm::Message>& msgs) {
  llm::ChatRequest r;
  r.model = config.model;
  r.system = system;
  r.messages = msgs;
  r.temperature = config.temperature;
  r.max_tokens = config.max_tokens;
  return r;
}

// Sends the pending conversation and records the turn; on failure the trace
// is marked interrupted and the error rethrown.
TurnRecord& exchange(RunTrace& trace, llm::LlmClient& client, const Checkpoint& checkpoint) {
  const auto req = chat(trace.config, trace.system_prompt, trace.messages);
  TurnRecord turn;
  turn.index = static_cast<int>(trace.turns.size());
  turn.request_hash = llm::request_hash(req);
  llm::ChatResponse resp;
  try {
    resp = client.complete(req);
  } catch (const Error& e) {
    trace.status = "interrupted";
    trace.error = e.what();
    if (checkpoint) checkpoint(trace);
    throw;
  }
  turn.response = resp.text;
  turn.input_tokens = resp.input_tokens;
  turn.output_tokens = resp.output_tokens;
  trace.messages.push_back({"assistant", resp.text});
  trace.turns.push_back(std::move(turn));
  return trace.turns.back();
}

FinalHypothesis empty_final(const ComponentRef& c) { return FinalHypothesis{c, "", "", ""}; }

}  // namespace

std::string build_agent_prompt(const model::ModelHandle& m, const tasks::TaskBundle& task, const ComponentRef& c,
                               const AgentConfig& config) {
  return agent_prompt(m, task, c, config, setup(task, c, config));
}

RunTrace run_agent(const model::ModelHandle& m, const tasks::TaskBundle& task, const ComponentRef& c,
                   const AgentConfig& config, llm::LlmClient& client, const Checkpoint& checkpoint,
                   const RunTrace* resume) {
  const auto s = setup(task, c, config);
  RunTrace trace;
  if (resume) {
    trace = *resume;
    if (trace.kind != "agentic" || trace.component != c) throw ValidationError("trace does not match this run");
    if (trace.messages.empty() || trace.messages.back().role != "user") {
      throw ValidationError("trace has no pending request to resume");
    }
    trace.status = "running";
    trace.error.clear();
  } else {
    trace.kind = "agentic";
    trace.task = task.name();
    trace.component = c;
    trace.config = config;
    trace.position_name = s.position_name;
    trace.prompts = s.prompts;
    trace.positions = s.positions;
    trace.system_prompt = agent_prompt(m, task, c, config, s);
    trace.messages.push_back({"user", message("agent_start")});
  }

  while (true) {
    auto& turn = exchange(trace, client, checkpoint);
    std::optional<AgentTurn> parsed;
    try {
      parsed = parse_agent_turn(turn.response);
      if (trace.forced && parsed->kind == AgentTurn::Kind::kExperiments) {
        throw ProtocolError("experiments requested after the iteration limit");
      }
    } catch (const ProtocolError& e) {
      turn.parse = "malformed";
      turn.parse_error = e.what();
      if (trace.retry_pending) {
        trace.status = "malformed";
        trace.final = empty_final(c);
        break;
      }
      trace.retry_pending = true;
      trace.messages.push_back({"user", message(trace.forced ? "agent_forced_corrective" : "agent_corrective")});
      if (checkpoint) checkpoint(trace);
      continue;
    }
    trace.retry_pending = false;
    if (parsed->kind == AgentTurn::Kind::kFinal) {
      turn.parse = "final";
      parsed->final.component = c;
      trace.final = parsed->final;
      trace.status = trace.forced ? "forced" : "complete";
      break;
    }
    turn.parse = "experiments";
    ++trace.iterations;
    for (std::size_t k = 0; k < parsed->experiments.size(); ++k) {
      const auto seed = util::derive_seed(config.seed, "noise/turn/" + std::to_string(turn.index) + "/" +
                                                           std::to_string(k));
      turn.calls.push_back(run_request(m, parsed->experiments[k], s.context, config.noise_alpha, seed));
    }
    std::string reply = format_results(turn.calls);
    if (trace.iterations >= config.max_iterations) {
      trace.forced = true;
      reply += "\n\n" + message("agent_forced_final");
    }
    trace.messages.push_back({"user", reply});
    if (checkpoint) checkpoint(trace);
  }
  if (checkpoint) checkpoint(trace);
  return trace;
}

RunTrace run_oneshot(const model::ModelHandle& m, const tasks::TaskBundle& task, const ComponentRef& c,
                     const AgentConfig& config, llm::LlmClient& client) {
  const auto s = setup(task, c, config);
  if (config.n_task_prompts < 2) throw ConfigError("one-shot counterfactual sampling needs at least two task prompts");
  RunTrace trace;
  trace.kind = "oneshot";
  trace.task = task.name();
  trace.component = c;
  trace.config = config;
  trace.position_name = s.position_name;
  trace.prompts = s.prompts;
  trace.positions = s.positions;
  trace.counterfactual_seed = util::derive_seed(config.seed, "oneshot/counterfactuals/" + model::to_string(c));
  util::Rng rng(trace.counterfactual_seed);
  const auto idx = iota(config.n_init_prompts);
  for (int i : idx) {
    int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(config.n_task_prompts - 1)));
    if (j >= i) ++j;
    trace.counterfactual_indices.push_back(j);
  }

  auto calls = std::vector<CallRecord>{};
  const auto positions_call = make_call("get_token_indices_in_prompt", {{"", ref_list(Expr::Kind::kPromptRef, idx)}});
  calls.push_back(run_request(m, {"Tokens and their indices.", render_call(positions_call), positions_call, ""},
                              s.context, 0.0, 0));
  for (auto& r : initial_calls(m, s, c, config)) calls.push_back(std::move(r));
  const auto patch = make_call(
      "run_patching", {{"", ref_list(Expr::Kind::kPromptRef, idx)},
                       {"", ref_list(Expr::Kind::kPromptRef, trace.counterfactual_indices)},
                       {"token_positions_source", ref_list(Expr::Kind::kPositionRef, idx)},
                       {"token_positions_counterfactual", ref_list(Expr::Kind::kPositionRef, trace.counterfactual_indices)},
                       {"layer_head_pairs", pair_list(c)}});
  calls.push_back(run_request(m, {"Patching the component with activations from randomly chosen task prompts.",
                                  render_call(patch), patch, ""},
                              s.context, config.noise_alpha, util::derive_seed(config.seed, "noise/oneshot/patching")));

  trace.system_prompt =
      fill(load_prompt("oneshot_system.txt"),
           {{"user_guidelines", format_user_guidelines(task.definition.description, s.position_name)},
            {"prompts_and_positions", format_prompts_and_positions(m, s.prompts, s.positions)},
            {"component", format_component(c)},
            {"api_functions", api_text()},
            {"experiment_results", format_results(calls)}});
  trace.messages.push_back({"user", message("oneshot_user")});

  for (int attempt = 0; attempt < 2; ++attempt) {
    auto& turn = exchange(trace, client, {});
    if (attempt == 0) turn.calls = calls;
    if (auto f = parse_final(turn.response)) {
      turn.parse = "final";
      f->component = c;
      trace.final = *f;
      trace.status = "complete";
      return trace;
    }
    turn.parse = "malformed";
    turn.parse_error = "reply contains no <final_hypothesis>";
    if (attempt == 0) trace.messages.push_back({"user", message("agent_forced_corrective")});
  }
  trace.status = "malformed";
  trace.final = empty_final(c);
  return trace;
}

std::vector<RunTrace> analyze_components(std::shared_ptr<const model::Checkpoint> checkpoint,
                                         const tasks::TaskBundle& task, const std::vector<ComponentRef>& components,
                                         const AgentConfig& config, llm::LlmClient& client, bool oneshot,
                                         int workers) {
  std::vector<std::optional<RunTrace>> slots(components.size());
  std::vector<std::exception_ptr> errors(components.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    model::ModelHandle handle(checkpoint);
    for (std::size_t i; (i = next++) < components.size();) {
      try {
        slots[i] = oneshot ? run_oneshot(handle, task, components[i], config, client)
                           : run_agent(handle, task, components[i], config, client);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int n = std::max(1, std::min<int>(workers, static_cast<int>(components.size())));
  if (n == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < n; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::vector<RunTrace> out;
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

std::vector<ComponentRef> Clustering::components() const {
  std::vector<ComponentRef> out;
  for (const auto& cl : clusters) out.insert(out.end(), cl.components.begin(), cl.components.end());
  return out;
}

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string join_components(const std::vector<ComponentRef>& cs) {
  std::string s;
  for (std::size_t i = 0; i < cs.size(); ++i) s += (i ? ", " : "") + model::describe(cs[i]);
  return s;
}

// Problems with a parsed clustering of `group`, as one sentence each.
std::string clustering_problems(const std::vector<Cluster>& clusters, const std::vector<std::string>& unparsed,
                                const std::vector<ComponentRef>& group) {
  std::map<ComponentRef, int> seen;
  std::vector<ComponentRef> unknown;
  for (const auto& cl : clusters) {
    for (const auto& c : cl.components) {
      if (std::find(group.begin(), group.end(), c) == group.end()) {
        unknown.push_back(c);
      } else {
        ++seen[c];
      }
    }
  }
  std::vector<ComponentRef> missing, repeated;
  for (const auto& c : group) {
    if (!seen.count(c)) missing.push_back(c);
    if (seen[c] > 1) repeated.push_back(c);
  }
  std::string out;
  if (clusters.empty()) out += "No <cluster> elements were found. ";
  if (!missing.empty()) out += "Not assigned: " + join_components(missing) + ". ";
  if (!repeated.empty()) out += "Assigned more than once: " + join_components(repeated) + ". ";
  if (!unknown.empty()) out += "Not part of this analysis: " + join_components(unknown) + ". ";
  if (!unparsed.empty()) {
    out += "Unreadable component names:";
    for (const auto& u : unparsed) out += " '" + u + "'";
    out += ". ";
  }
  return trim(out);
}

}  // namespace

std::vector<Cluster> parse_cluster_analysis(std::string_view text, std::vector<std::string>* unparsed) {
  const auto block = extract_tag(text, {"cluster_analysis"}).value_or(std::string(text));
  std::vector<Cluster> out;
  for (const auto& body : extract_all(block, "cluster")) {
    Cluster cl;
    cl.name = trim(extract_tag(body, {"cluster_name"}).value_or(""));
    cl.function = trim(extract_tag(body, {"function"}).value_or(""));
    cl.evidence = trim(extract_tag(body, {"evidence"}).value_or(""));
    for (const auto& raw : extract_all(extract_tag(body, {"components"}).value_or(body), "component")) {
      const auto t = trim(raw);
      if (auto c = model::parse_component(t)) {
        cl.components.push_back(*c);
      } else if (unparsed) {
        unparsed->push_back(t);
      }
    }
    out.push_back(std::move(cl));
  }
  return out;
}

Clustering run_clustering(const model::ModelHandle& m, const tasks::TaskBundle& task,
                          const std::vector<FinalHypothesis>& hypotheses, const ClusteringConfig& config,
                          llm::LlmClient& client, ClusteringTrace* trace) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const FinalHypothesis*>> groups;
  std::set<ComponentRef> seen;
  for (const auto& h : hypotheses) {
    if (!seen.insert(h.component).second) throw ValidationError("two hypotheses for " + model::to_string(h.component));
    const auto pos = task.definition.position_for(h.component);
    if (!groups.count(pos)) order.push_back(pos);
    groups[pos].push_back(&h);
  }
  const auto texts = task.texts();
  const auto n = std::min<std::size_t>(texts.size(), static_cast<std::size_t>(config.n_prompts));
  const std::vector<std::string> prompts(texts.begin(), texts.begin() + static_cast<std::ptrdiff_t>(n));
  const auto tmpl = load_prompt("clustering.txt");

  Clustering out;
  for (const auto& pos : order) {
    const auto& members = groups[pos];
    std::vector<ComponentRef> group;
    std::string results;
    for (const auto* h : members) {
      group.push_back(h->component);
      results += "<component_result>\n<component>" + model::describe(h->component) + "</component>\n<final_hypothesis>\n" +
                 h->text + "\n</final_hypothesis>\n</component_result>\n";
    }
    auto positions = task.positions_for(group.front());
    positions.resize(n);
    ClusteringGroupTrace gt;
    gt.position = pos;
    gt.components = group;
    gt.prompt = fill(tmpl, {{"prompts_and_positions", format_prompts_and_positions(m, prompts, positions)},
                            {"experiment_results", results}});
    gt.messages.push_back({"user", gt.prompt});

    std::vector<Cluster> clusters;
    std::string problems;
    for (int attempt = 0; attempt < 2; ++attempt) {
      llm::ChatRequest req;
      req.model = config.model;
      req.messages = gt.messages;
      req.temperature = config.temperature;
      req.max_tokens = config.max_tokens;
      gt.request_hashes.push_back(llm::request_hash(req));
      const auto reply = client.complete(req).text;
      gt.messages.push_back({"assistant", reply});
      std::vector<std::string> unparsed;
      clusters = parse_cluster_analysis(reply, &unparsed);
      problems = clustering_problems(clusters, unparsed, group);
      if (problems.empty()) break;
      if (attempt == 0) {
        gt.messages.push_back({"user", fill(message("clustering_corrective"),
                                            {{"problems", problems}, {"components", join_components(group)}})});
      }
    }
    if (trace) trace->groups.push_back(gt);
    if (!problems.empty()) {
      throw ProtocolError("clustering for position " + pos + " still invalid after a corrective prompt: " + problems);
    }
    for (auto& cl : clusters) {
      if (cl.components.empty()) continue;
      cl.position = pos;
      out.clusters.push_back(std::move(cl));
    }
  }
  return out;
}

json to_json(const AgentConfig& c) {
  return {{"max_iterations", c.max_iterations},
          {"n_init_prompts", c.n_init_prompts},
          {"n_task_prompts", c.n_task_prompts},
          {"model", c.model},
          {"temperature", c.temperature ? json(*c.temperature) : json(nullptr)},
          {"max_tokens", c.max_tokens},
          {"noise_alpha", c.noise_alpha},
          {"seed", c.seed}};
}

AgentConfig agent_config_from_json(const json& j) {
  AgentConfig c;
  c.max_iterations = j.value("max_iterations", c.max_iterations);
  c.n_init_prompts = j.value("n_init_prompts", c.n_init_prompts);
  c.n_task_prompts = j.value("n_task_prompts", c.n_task_prompts);
  c.model = j.value("model", c.model);
  if (j.contains("temperature") && !j["temperature"].is_null()) c.temperature = j["temperature"].get<double>();
  c.max_tokens = j.value("max_tokens", c.max_tokens);
  c.noise_alpha = j.value("noise_alpha", c.noise_alpha);
  c.seed = j.value("seed", c.seed);
  return c;
}

json to_json(const FinalHypothesis& f) {
  return {{"component", model::to_string(f.component)},
          {"text", util::printable(f.text)},
          {"summarized_description", util::printable(f.summarized_description)},
          {"evidence", util::printable(f.evidence)}};
}

namespace {

ComponentRef component_from(const json& j) {
  auto c = model::parse_component(j.get<std::string>());
  if (!c) throw ValidationError("bad component '" + j.get<std::string>() + "'");
  return *c;
}

json messages_json(const std::vector<llm::Message>& msgs) {
  json out = json::array();
  for (const auto& m : msgs) out.push_back({{"role", m.role}, {"content", util::printable(m.content)}});
  return out;
}

std::vector<llm::Message> messages_from(const json& j) {
  std::vector<llm::Message> out;
  for (const auto& m : j) out.push_back({m.at("role"), m.at("content")});
  return out;
}

}  // namespace

FinalHypothesis final_from_json(const json& j) {
  return {component_from(j.at("component")), j.value("text", ""), j.value("summarized_description", ""),
          j.value("evidence", "")};
}

json to_json(const RunTrace& t) {
  json turns = json::array();
  for (const auto& turn : t.turns) {
    json calls = json::array();
    for (const auto& c : turn.calls) {
      calls.push_back({{"description", util::printable(c.description)},
                       {"source", util::printable(c.source)},
                       {"tool", c.tool},
                       {"error", util::printable(c.error)},
                       {"output", util::printable(c.output)},
                       {"result", c.result}});
    }
    turns.push_back({{"index", turn.index},
                     {"request_hash", turn.request_hash},
                     {"response", util::printable(turn.response)},
                     {"parse", turn.parse},
                     {"parse_error", turn.parse_error},
                     {"input_tokens", turn.input_tokens},
                     {"output_tokens", turn.output_tokens},
                     {"calls", calls}});
  }
  return {{"schema", "interp.run_trace"},
          {"schema_version", RunTrace::kSchemaVersion},
          {"kind", t.kind},
          {"task", t.task},
          {"component", model::to_string(t.component)},
          {"config", to_json(t.config)},
          {"position_name", t.position_name},
          {"prompts", t.prompts},
          {"positions", t.positions},
          {"counterfactual_indices", t.counterfactual_indices},
          {"counterfactual_seed", t.counterfactual_seed},
          {"system_prompt", util::printable(t.system_prompt)},
          {"messages", messages_json(t.messages)},
          {"turns", turns},
          {"status", t.status},
          {"error", util::printable(t.error)},
          {"iterations", t.iterations},
          {"tool_calls", t.tool_calls()},
          {"forced", t.forced},
          {"retry_pending", t.retry_pending},
          {"final", t.final ? to_json(*t.final) : json(nullptr)}};
}

RunTrace trace_from_json(const json& j) {
  if (j.value("schema_version", 0) != RunTrace::kSchemaVersion) {
    throw ValidationError("unsupported run trace schema version " + std::to_string(j.value("schema_version", 0)));
  }
  RunTrace t;
  t.kind = j.at("kind");
  t.task = j.at("task");
  t.component = component_from(j.at("component"));
  t.config = agent_config_from_json(j.at("config"));
  t.position_name = j.value("position_name", "");
  t.prompts = j.at("prompts").get<std::vector<std::string>>();
  t.positions = j.at("positions").get<std::vector<int>>();
  t.counterfactual_indices = j.value("counterfactual_indices", std::vector<int>{});
  t.counterfactual_seed = j.value("counterfactual_seed", std::uint64_t{0});
  t.system_prompt = j.at("system_prompt");
  t.messages = messages_from(j.at("messages"));
  for (const auto& tj : j.at("turns")) {
    TurnRecord turn;
    turn.index = tj.at("index");
    turn.request_hash = tj.value("request_hash", "");
    turn.response = tj.at("response");
    turn.parse = tj.value("parse", "");
    turn.parse_error = tj.value("parse_error", "");
    turn.input_tokens = tj.value("input_tokens", 0);
    turn.output_tokens = tj.value("output_tokens", 0);
    for (const auto& cj : tj.at("calls")) {
      turn.calls.push_back({cj.value("description", ""), cj.value("source", ""), cj.value("tool", ""),
                            cj.value("error", ""), cj.value("output", ""), cj.value("result", json(nullptr))});
    }
    t.turns.push_back(std::move(turn));
  }
  t.status = j.value("status", "");
  t.error = j.value("error", "");
  t.iterations = j.value("iterations", 0);
  t.forced = j.value("forced", false);
  t.retry_pending = j.value("retry_pending", false);
  if (j.contains("final") && !j["final"].is_null()) t.final = final_from_json(j["final"]);
  return t;
}

json to_json(const Clustering& c) {
  json clusters = json::array();
  for (const auto& cl : c.clusters) {
    json comps = json::array();
    for (const auto& x : cl.components) comps.push_back(model::to_string(x));
    clusters.push_back({{"name", util::printable(cl.name)},
                        {"position", cl.position},
                        {"components", comps},
                        {"function", util::printable(cl.function)},
                        {"evidence", util::printable(cl.evidence)}});
  }
  return {{"schema", "interp.clustering"}, {"schema_version", 1}, {"clusters", clusters}};
}

Clustering clustering_from_json(const json& j) {
  Clustering c;
  for (const auto& cj : j.at("clusters")) {
    Cluster cl;
    cl.name = cj.value("name", "");
    cl.position = cj.value("position", "");
    cl.function = cj.value("function", "");
    cl.evidence = cj.value("evidence", "");
    for (const auto& x : cj.at("components")) cl.components.push_back(component_from(x));
    c.clusters.push_back(std::move(cl));
  }
  return c;
}

json to_json(const ClusteringTrace& t) {
  json groups = json::array();
  for (const auto& g : t.groups) {
    json comps = json::array();
    for (const auto& x : g.components) comps.push_back(model::to_string(x));
    groups.push_back({{"position", g.position},
                      {"components", comps},
                      {"messages", messages_json(g.messages)},
                      {"request_hashes", g.request_hashes}});
  }
  return {{"schema", "interp.clustering_trace"}, {"schema_version", 1}, {"groups", groups}};
}

}  // namespace interp::agent
