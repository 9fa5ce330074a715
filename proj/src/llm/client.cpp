#include "interp/llm/client.hpp"

#include <httplib.h>

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <thread>

#include "interp/error.hpp"
#include "interp/util/text.hpp"

namespace interp::llm {

namespace {

using json = nlohmann::json;

std::string dump(const json& j) { return j.dump(-1, ' ', false, json::error_handler_t::replace); }

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : fallback;
}

bool retryable(int status) { return status == 0 || status == 408 || status == 409 || status == 429 || status >= 500; }

// Posts with retries; returns the parsed body of the first 2xx reply.
json post_with_retry(const ProviderOptions& opt, const std::string& base, const std::string& path,
                     const std::map<std::string, std::string>& headers, const std::string& body, double& latency_ms) {
  const auto post = opt.post ? opt.post : default_http_post();
  auto backoff = opt.retry.initial_backoff;
  HttpReply reply;
  for (int attempt = 1;; ++attempt) {
    const auto t0 = std::chrono::steady_clock::now();
    reply = post(base, path, headers, body);
    latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (reply.status >= 200 && reply.status < 300) break;
    if (!retryable(reply.status) || attempt >= opt.retry.max_attempts) {
      std::string msg = reply.status == 0 ? "transport failure: " + reply.error
                                          : "HTTP " + std::to_string(reply.status) + ": " + reply.body.substr(0, 500);
      throw ProviderError(reply.status, base + path + " failed after " + std::to_string(attempt) + " attempt(s), " + msg);
    }
    std::this_thread::sleep_for(backoff);
    backoff = std::min(opt.retry.max_backoff,
                       std::chrono::milliseconds(static_cast<long long>(backoff.count() * opt.retry.multiplier)));
  }
  try {
    return json::parse(reply.body);
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("provider returned malformed JSON: ") + e.what());
  }
}

}  // namespace

json to_json(const ChatRequest& r) {
  json msgs = json::array();
  for (const auto& m : r.messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
  return {{"model", r.model},
          {"system", r.system},
          {"messages", msgs},
          {"temperature", r.temperature ? json(*r.temperature) : json(nullptr)},
          {"max_tokens", r.max_tokens}};
}

ChatRequest request_from_json(const json& j) {
  ChatRequest r;
  r.model = j.at("model").get<std::string>();
  r.system = j.value("system", "");
  for (const auto& m : j.at("messages")) r.messages.push_back({m.at("role"), m.at("content")});
  if (j.contains("temperature") && !j["temperature"].is_null()) r.temperature = j["temperature"].get<double>();
  r.max_tokens = j.value("max_tokens", 8192);
  return r;
}

json to_json(const ChatResponse& r) {
  return {{"text", r.text},
          {"input_tokens", r.input_tokens},
          {"output_tokens", r.output_tokens},
          {"latency_ms", r.latency_ms},
          {"stop_reason", r.stop_reason}};
}

ChatResponse response_from_json(const json& j) {
  ChatResponse r;
  r.text = j.at("text").get<std::string>();
  r.input_tokens = j.value("input_tokens", 0);
  r.output_tokens = j.value("output_tokens", 0);
  r.latency_ms = j.value("latency_ms", 0.0);
  r.stop_reason = j.value("stop_reason", "");
  return r;
}

json to_json(const ChatExchange& e) {
  return {{"request_hash", e.request_hash}, {"request", to_json(e.request)}, {"response", to_json(e.response)}};
}

ChatExchange exchange_from_json(const json& j) {
  ChatExchange e;
  e.request = request_from_json(j.at("request"));
  e.request_hash = j.value("request_hash", request_hash(e.request));
  e.response = response_from_json(j.at("response"));
  return e;
}

std::string request_hash(const ChatRequest& r) { return util::sha256_hex(dump(to_json(r))); }

namespace {
std::atomic<std::uint64_t> g_network_requests{0};
}  // namespace

std::uint64_t network_requests() { return g_network_requests.load(); }

HttpPost default_http_post() {
  return [](const std::string& base, const std::string& path, const std::map<std::string, std::string>& headers,
            const std::string& body) {
    ++g_network_requests;
    httplib::Client cli(base);
    cli.set_connection_timeout(30);
    cli.set_read_timeout(600);
    cli.set_write_timeout(60);
    httplib::Headers h;
    for (const auto& [k, v] : headers) h.emplace(k, v);
    HttpReply out;
    auto res = cli.Post(path, h, body, "application/json");
    if (!res) {
      out.error = httplib::to_string(res.error());
      return out;
    }
    out.status = res->status;
    out.body = res->body;
    return out;
  };
}

AnthropicClient::AnthropicClient(ProviderOptions options) : options_(std::move(options)) {
  if (options_.api_key.empty()) options_.api_key = env_or("ANTHROPIC_API_KEY", "");
  if (options_.base_url.empty()) options_.base_url = env_or("ANTHROPIC_BASE_URL", "https://api.anthropic.com");
}

ChatResponse AnthropicClient::complete(const ChatRequest& request) {
  if (options_.api_key.empty()) throw ConfigError("ANTHROPIC_API_KEY is not set");
  json body = {{"model", request.model}, {"max_tokens", request.max_tokens}};
  if (!request.system.empty()) body["system"] = request.system;
  body["messages"] = json::array();
  for (const auto& m : request.messages) body["messages"].push_back({{"role", m.role}, {"content", m.content}});
  if (request.temperature) body["temperature"] = *request.temperature;
  ChatResponse out;
  const auto reply = post_with_retry(
      options_, options_.base_url, "/v1/messages",
      {{"x-api-key", options_.api_key}, {"anthropic-version", "2023-06-01"}}, dump(body), out.latency_ms);
  try {
    for (const auto& block : reply.at("content")) {
      if (block.value("type", "") == "text") out.text += block.at("text").get<std::string>();
    }
    out.stop_reason = reply.value("stop_reason", "");
    if (reply.contains("usage")) {
      out.input_tokens = reply["usage"].value("input_tokens", 0);
      out.output_tokens = reply["usage"].value("output_tokens", 0);
    }
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("unexpected Anthropic response shape: ") + e.what());
  }
  return out;
}

OpenAIClient::OpenAIClient(ProviderOptions options) : options_(std::move(options)) {
  if (options_.api_key.empty()) options_.api_key = env_or("OPENAI_API_KEY", "");
  if (options_.base_url.empty()) options_.base_url = env_or("OPENAI_BASE_URL", "https://api.openai.com");
}

ChatResponse OpenAIClient::complete(const ChatRequest& request) {
  if (options_.api_key.empty()) throw ConfigError("OPENAI_API_KEY is not set");
  json msgs = json::array();
  if (!request.system.empty()) msgs.push_back({{"role", "system"}, {"content", request.system}});
  for (const auto& m : request.messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
  json body = {{"model", request.model}, {"messages", msgs}, {"max_completion_tokens", request.max_tokens}};
  if (request.temperature) body["temperature"] = *request.temperature;
  ChatResponse out;
  const auto reply = post_with_retry(options_, options_.base_url, "/v1/chat/completions",
                                     {{"Authorization", "Bearer " + options_.api_key}}, dump(body), out.latency_ms);
  try {
    const auto& choice = reply.at("choices").at(0);
    const auto& content = choice.at("message").at("content");
    out.text = content.is_null() ? "" : content.get<std::string>();
    out.stop_reason = choice.value("finish_reason", "");
    if (reply.contains("usage")) {
      out.input_tokens = reply["usage"].value("prompt_tokens", 0);
      out.output_tokens = reply["usage"].value("completion_tokens", 0);
    }
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("unexpected OpenAI response shape: ") + e.what());
  }
  return out;
}

Transcript Transcript::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open transcript " + path.string());
  Transcript t;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      t.exchanges_.push_back(exchange_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return t;
}

void Transcript::append(ChatExchange e) {
  std::lock_guard lock(mu_);
  exchanges_.push_back(std::move(e));
}

std::vector<ChatExchange> Transcript::exchanges() const {
  std::lock_guard lock(mu_);
  return exchanges_;
}

std::size_t Transcript::size() const {
  std::lock_guard lock(mu_);
  return exchanges_.size();
}

void Transcript::save(const std::filesystem::path& path) const {
  std::lock_guard lock(mu_);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write transcript " + path.string());
  for (const auto& e : exchanges_) out << dump(to_json(e)) << "\n";
}

RecordingClient::RecordingClient(std::shared_ptr<LlmClient> inner, std::filesystem::path path)
    : inner_(std::move(inner)), path_(std::move(path)) {}

ChatResponse RecordingClient::complete(const ChatRequest& request) {
  auto response = inner_->complete(request);
  const ChatExchange e{request_hash(request), request, response};
  std::lock_guard lock(mu_);
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  std::ofstream out(path_, std::ios::app);
  if (!out) throw IoError("cannot append to transcript " + path_.string());
  out << dump(to_json(e)) << "\n";
  return response;
}

ReplayClient::ReplayClient(const std::filesystem::path& path) : ReplayClient(Transcript::load(path).exchanges()) {}

ReplayClient::ReplayClient(const std::vector<ChatExchange>& exchanges) {
  for (const auto& e : exchanges) by_hash_[request_hash(e.request)].push_back(e.response);
}

ChatResponse ReplayClient::complete(const ChatRequest& request) {
  const auto h = request_hash(request);
  std::lock_guard lock(mu_);
  auto it = by_hash_.find(h);
  if (it != by_hash_.end() && !it->second.empty()) {
    auto r = it->second.front();
    it->second.pop_front();
    last_[h] = r;
    return r;
  }
  if (auto l = last_.find(h); l != last_.end()) return l->second;
  throw ReplayMissError("no recorded response for request " + h + " (model " + request.model + ", " +
                        std::to_string(request.messages.size()) + " messages)");
}

ScriptedClient::ScriptedClient(Script script) : script_(std::move(script)) {}

ScriptedClient::ScriptedClient(std::vector<std::string> responses)
    : script_([r = std::move(responses)](const ChatRequest&, int i) {
        if (static_cast<std::size_t>(i) >= r.size()) throw ProviderError(0, "scripted client ran out of responses");
        return r[static_cast<std::size_t>(i)];
      }) {}

ChatResponse ScriptedClient::complete(const ChatRequest& request) {
  int i;
  {
    std::lock_guard lock(mu_);
    i = calls_++;
  }
  ChatResponse r;
  r.text = script_(request, i);
  r.stop_reason = "end_turn";
  return r;
}

int ScriptedClient::calls() const {
  std::lock_guard lock(mu_);
  return calls_;
}

std::shared_ptr<LlmClient> make_client(const ClientSpec& spec) {
  if (!spec.replay.empty()) return std::make_shared<ReplayClient>(spec.replay);
  std::shared_ptr<LlmClient> live;
  if (spec.provider == "anthropic") {
    live = std::make_shared<AnthropicClient>(spec.options);
  } else if (spec.provider == "openai") {
    live = std::make_shared<OpenAIClient>(spec.options);
  } else {
    throw ConfigError("unknown LLM provider '" + spec.provider + "'");
  }
  if (!spec.record.empty()) return std::make_shared<RecordingClient>(live, spec.record);
  return live;
}

}  // namespace interp::llm
