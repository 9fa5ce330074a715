#pragma once

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace interp::llm {

struct Message {
  std::string role;  // "user" or "assistant"
  std::string content;
  friend bool operator==(const Message&, const Message&) = default;
};

struct ChatRequest {
  std::string model;
  std::string system;
  std::vector<Message> messages;
  /// Unset means the provider default.
  std::optional<double> temperature;
  int max_tokens = 8192;
};

struct ChatResponse {
  std::string text;
  int input_tokens = 0;
  int output_tokens = 0;
  double latency_ms = 0.0;
  std::string stop_reason;
};

struct ChatExchange {
  std::string request_hash;
  ChatRequest request;
  ChatResponse response;
};

nlohmann::json to_json(const ChatRequest& r);
ChatRequest request_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ChatResponse& r);
ChatResponse response_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ChatExchange& e);
ChatExchange exchange_from_json(const nlohmann::json& j);

/// SHA-256 of the compact, key-sorted JSON form of the request.
std::string request_hash(const ChatRequest& r);

class LlmClient {
 public:
  virtual ~LlmClient() = default;
  virtual ChatResponse complete(const ChatRequest& request) = 0;
};

struct RetryPolicy {
  int max_attempts = 5;
  std::chrono::milliseconds initial_backoff{1000};
  double multiplier = 2.0;
  std::chrono::milliseconds max_backoff{30000};
};

/// Minimal transport seam; the default uses HTTPS via cpp-httplib.
struct HttpReply {
  int status = 0;  // 0 on transport failure
  std::string body;
  std::string error;
};
using HttpPost = std::function<HttpReply(const std::string& base_url, const std::string& path,
                                         const std::map<std::string, std::string>& headers, const std::string& body)>;
HttpPost default_http_post();
/// Requests sent by default_http_post transports in this process.
std::uint64_t network_requests();

struct ProviderOptions {
  std::string api_key;   // empty: read from the provider's environment variable
  std::string base_url;  // empty: provider default, or the *_BASE_URL environment variable
  RetryPolicy retry;
  HttpPost post;  // empty: default_http_post()
};

/// Anthropic Messages API. Key from ANTHROPIC_API_KEY.
class AnthropicClient final : public LlmClient {
 public:
  explicit AnthropicClient(ProviderOptions options = {});
  ChatResponse complete(const ChatRequest& request) override;

 private:
  ProviderOptions options_;
};

/// OpenAI Chat Completions API. Key from OPENAI_API_KEY.
class OpenAIClient final : public LlmClient {
 public:
  explicit OpenAIClient(ProviderOptions options = {});
  ChatResponse complete(const ChatRequest& request) override;

 private:
  ProviderOptions options_;
};

/// Thread-safe JSON-lines log of exchanges.
class Transcript {
 public:
  Transcript() = default;
  Transcript(Transcript&& other) noexcept : exchanges_(std::move(other.exchanges_)) {}
  static Transcript load(const std::filesystem::path& path);

  void append(ChatExchange e);
  std::vector<ChatExchange> exchanges() const;
  std::size_t size() const;
  void save(const std::filesystem::path& path) const;

 private:
  mutable std::mutex mu_;
  std::vector<ChatExchange> exchanges_;
};

/// Forwards to `inner` and appends every exchange to `path` as it happens.
class RecordingClient final : public LlmClient {
 public:
  RecordingClient(std::shared_ptr<LlmClient> inner, std::filesystem::path path);
  ChatResponse complete(const ChatRequest& request) override;

 private:
  std::shared_ptr<LlmClient> inner_;
  std::filesystem::path path_;
  std::mutex mu_;
};

/// Serves recorded responses by request hash. Repeats of one request are
/// served in recorded order and the last one is reused once exhausted. An
/// unknown request throws ReplayMissError.
class ReplayClient final : public LlmClient {
 public:
  explicit ReplayClient(const std::filesystem::path& path);
  explicit ReplayClient(const std::vector<ChatExchange>& exchanges);
  ChatResponse complete(const ChatRequest& request) override;

 private:
  std::mutex mu_;
  std::map<std::string, std::deque<ChatResponse>> by_hash_;
  std::map<std::string, ChatResponse> last_;
};

/// Deterministic client for tests: returns responses from a callback.
class ScriptedClient final : public LlmClient {
 public:
  using Script = std::function<std::string(const ChatRequest&, int call_index)>;
  explicit ScriptedClient(Script script);
  explicit ScriptedClient(std::vector<std::string> responses);
  ChatResponse complete(const ChatRequest& request) override;
  int calls() const;

 private:
  Script script_;
  mutable std::mutex mu_;
  int calls_ = 0;
};

struct ClientSpec {
  std::string provider = "anthropic";  // "anthropic" or "openai"
  std::filesystem::path replay;        // when set, no network is used
  std::filesystem::path record;        // when set, live exchanges are appended here
  ProviderOptions options;
};

std::shared_ptr<LlmClient> make_client(const ClientSpec& spec);

}  // namespace interp::llm
