#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "sael/corpus.hpp"
#include "sael/prompt.hpp"
#include "sael/types.hpp"

namespace sael {

struct InferenceParams {
  std::size_t max_input_tokens = 2048;
  std::size_t max_output_tokens = 512;
  double top_p = 1.0;
  double temperature = 0.0;
  double repetition_penalty = 1.2;
  std::size_t n_votes = 5;
  std::string model_name = "qwen1.5-72b-chat";
  // Endpoints disagree on the name of this field.
  std::string repetition_penalty_field = "repetition_penalty";

  void validate() const;
  bool operator==(const InferenceParams&) const = default;
};

// Chat-completions request body for one prompt.
nlohmann::json build_request(std::string_view prompt, const InferenceParams& params);
// choices[0].message.content; throws TransportError on an unexpected shape.
std::string extract_content(std::string_view response_body);

struct VoteTally {
  std::size_t vulnerable = 0;
  std::size_t secure = 0;
  bool operator==(const VoteTally&) const = default;
};

struct LlmVerdict {
  Verdict prediction = Verdict::Vulnerable;
  std::string explanation;
  VoteTally votes;
  std::size_t abstentions = 0;
  std::vector<std::string> raw_responses;

  // Compares the persisted fields (raw responses are not cached).
  bool same_decision(const LlmVerdict& o) const {
    return prediction == o.prediction && explanation == o.explanation && votes == o.votes &&
           abstentions == o.abstentions;
  }
};

struct ParsedResponse {
  std::optional<Verdict> verdict;  // nullopt = abstain
  std::string explanation;
};

// Rule order: a "VERDICT: VULNERABLE|SECURE" line (case-insensitive), then
// phrase fallbacks, else abstain. The explanation excludes the verdict line.
ParsedResponse parse_verdict(std::string_view response);

// Majority of the parsed votes; equal counts resolve to Vulnerable. The
// explanation comes from the first response on the winning side. Throws
// AllAbstained when nothing parsed.
LlmVerdict aggregate_votes(std::vector<std::string> responses);

// ---- transports ----

struct TransportReply {
  bool connected = false;
  int status = 0;
  std::string body;
  std::string error;
};

class Transport {
public:
  virtual ~Transport() = default;
  virtual TransportReply post(const std::string& json_body) = 0;
};

// POSTs to an HTTP(S) chat-completions endpoint.
class HttpTransport final : public Transport {
public:
  HttpTransport(std::string url, std::string api_key = {},
                std::chrono::milliseconds timeout = std::chrono::seconds(120));
  TransportReply post(const std::string& json_body) override;

private:
  std::string url_;
  std::string api_key_;
  std::chrono::milliseconds timeout_;
};

// Replies with scripted completion texts in order, wrapping around at the
// end. Counts calls. Thread-safe.
class ScriptedTransport final : public Transport {
public:
  explicit ScriptedTransport(std::vector<std::string> responses);
  // One JSON string (or {"content": ...} object) per line.
  static std::vector<std::string> load_script(const std::filesystem::path& path);

  TransportReply post(const std::string& json_body) override;
  std::size_t calls() const { return calls_.load(); }
  const std::vector<nlohmann::json>& requests() const { return requests_; }

private:
  std::vector<std::string> responses_;
  std::atomic<std::size_t> calls_{0};
  std::mutex mu_;
  std::vector<nlohmann::json> requests_;
};

struct RetryPolicy {
  std::size_t max_retries = 3;
  std::chrono::milliseconds base_backoff{1000};  // doubles per retry: 1s, 2s, 4s
};

class LlmClient {
public:
  explicit LlmClient(std::shared_ptr<Transport> transport, RetryPolicy retry = {});

  // Sends one completion request. 5xx and connection failures are retried
  // with exponential backoff; other non-200 statuses throw EndpointRejected.
  std::string complete(std::string_view prompt, const InferenceParams& params);

  // Issues params.n_votes completions and aggregates them.
  LlmVerdict detect_with_vote(std::string_view prompt, const InferenceParams& params);

  std::size_t requests_sent() const { return requests_.load(); }
  void set_sleeper(std::function<void(std::chrono::milliseconds)> sleeper) { sleep_ = std::move(sleeper); }

private:
  std::shared_ptr<Transport> transport_;
  RetryPolicy retry_;
  std::atomic<std::size_t> requests_{0};
  std::function<void(std::chrono::milliseconds)> sleep_;
};

// ---- verdict cache ----

// JSON-lines file <dir>/verdicts.jsonl with
// {"key","prediction","explanation","votes","abstentions"} per line.
class VerdictCache {
public:
  explicit VerdictCache(std::filesystem::path dir);  // throws CacheCorrupt

  std::optional<LlmVerdict> get(const std::string& key) const;
  void put(const std::string& key, const LlmVerdict& verdict);
  std::size_t size() const;
  const std::filesystem::path& file() const { return file_; }

private:
  std::filesystem::path file_;
  mutable std::mutex mu_;
  std::map<std::string, LlmVerdict> entries_;
};

std::string cache_key(std::string_view rendered_prompt, const InferenceParams& params);

LlmVerdict cached_detect(const FunctionRecord& record, const PromptTemplate& tmpl,
                         const InferenceParams& params, VerdictCache& cache, LlmClient& client);

nlohmann::json verdict_to_json(const LlmVerdict& v);
LlmVerdict verdict_from_json(const nlohmann::json& j);  // throws DataError

}  // namespace sael
