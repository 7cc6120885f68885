#include "sael/llm_client.hpp"

#include <cmath>
#include <regex>
#include <sstream>
#include <thread>

#include "sael/errors.hpp"
#include "sael/http.hpp"

namespace sael {

using nlohmann::json;

void InferenceParams::validate() const {
  if (n_votes == 0 || n_votes % 2 == 0) {
    throw DataError("n_votes must be odd and positive, got " + std::to_string(n_votes));
  }
  if (!(top_p > 0.0 && top_p <= 1.0)) throw DataError("top_p must lie in (0, 1]");
  if (!(temperature >= 0.0)) throw DataError("temperature must be >= 0");
  if (!(repetition_penalty >= 1.0)) throw DataError("repetition_penalty must be >= 1");
  if (max_input_tokens == 0 || max_output_tokens == 0) throw DataError("token limits must be positive");
}

json build_request(std::string_view prompt, const InferenceParams& params) {
  json body = json::object();
  body["model"] = params.model_name;
  body["messages"] = json::array({json{{"role", "user"}, {"content", std::string(prompt)}}});
  body["temperature"] = params.temperature;
  body["top_p"] = params.top_p;
  body["max_tokens"] = params.max_output_tokens;
  body[params.repetition_penalty_field] = params.repetition_penalty;
  return body;
}

std::string extract_content(std::string_view response_body) {
  try {
    const json j = json::parse(response_body);
    const json& content = j.at("choices").at(0).at("message").at("content");
    if (!content.is_string()) throw TransportError("choices[0].message.content is not a string");
    return content.get<std::string>();
  } catch (const json::exception& e) {
    throw TransportError(std::string("unexpected completion response: ") + e.what());
  }
}

// ---- parsing and voting ----

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

const std::regex& verdict_line() {
  static const std::regex re(R"(^\s*\**\s*verdict\s*\**\s*:\s*\**\s*(vulnerable|secure)\b.*$)",
                             std::regex::icase);
  return re;
}

const std::regex& negated_contain() {
  static const std::regex re(R"(\b(does\s+not|doesn't|do\s+not|don't)\s+contain)", std::regex::icase);
  return re;
}

const std::regex& no_vulnerability() {
  static const std::regex re(R"(\bno\s+([\w/-]+\s+){0,3}vulnerabilit(y|ies)\b)", std::regex::icase);
  return re;
}

const std::regex& vulnerable_phrase() {
  static const std::regex re(R"(\bcontains?\b[^.\n]{0,60}\bvulnerabilit(y|ies)\b)",
                             std::regex::icase);
  return re;
}

}  // namespace

ParsedResponse parse_verdict(std::string_view response) {
  std::istringstream in{std::string(response)};
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);

  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::smatch m;
    if (std::regex_match(lines[i], m, verdict_line())) {
      std::string word = m[1].str();
      for (char& c : word) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      std::string rest;
      for (std::size_t j = 0; j < lines.size(); ++j) {
        if (j == i) continue;
        rest += lines[j];
        rest += '\n';
      }
      return {word == "vulnerable" ? Verdict::Vulnerable : Verdict::Secure, trim(rest)};
    }
  }

  const std::string text(response);
  if (std::regex_search(text, negated_contain())) return {Verdict::Secure, trim(text)};
  if (std::regex_search(text, vulnerable_phrase())) return {Verdict::Vulnerable, trim(text)};
  if (std::regex_search(text, no_vulnerability())) return {Verdict::Secure, trim(text)};
  return {std::nullopt, trim(text)};
}

LlmVerdict aggregate_votes(std::vector<std::string> responses) {
  LlmVerdict v;
  std::vector<ParsedResponse> parsed;
  parsed.reserve(responses.size());
  for (const auto& r : responses) {
    parsed.push_back(parse_verdict(r));
    if (!parsed.back().verdict) ++v.abstentions;
    else if (*parsed.back().verdict == Verdict::Vulnerable) ++v.votes.vulnerable;
    else ++v.votes.secure;
  }
  if (v.votes.vulnerable + v.votes.secure == 0) throw AllAbstained();
  v.prediction = v.votes.vulnerable >= v.votes.secure ? Verdict::Vulnerable : Verdict::Secure;
  for (const auto& p : parsed) {
    if (p.verdict == v.prediction) {
      v.explanation = p.explanation;
      break;
    }
  }
  v.raw_responses = std::move(responses);
  return v;
}

// ---- transports ----

HttpTransport::HttpTransport(std::string url, std::string api_key, std::chrono::milliseconds timeout)
    : url_(std::move(url)), api_key_(std::move(api_key)), timeout_(timeout) {}

TransportReply HttpTransport::post(const std::string& json_body) {
  http::Headers headers;
  if (!api_key_.empty()) headers.emplace_back("Authorization", "Bearer " + api_key_);
  const http::Response r = http::post_json(url_, json_body, headers, timeout_);
  return {r.connected, r.status, r.body, r.error};
}

ScriptedTransport::ScriptedTransport(std::vector<std::string> responses)
    : responses_(std::move(responses)) {
  if (responses_.empty()) throw DataError("scripted transport needs at least one response");
}

std::vector<std::string> ScriptedTransport::load_script(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  std::vector<std::string> responses;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const json j = json::parse(line);
      if (j.is_string()) responses.push_back(j.get<std::string>());
      else if (j.is_object() && j.contains("content") && j["content"].is_string()) {
        responses.push_back(j["content"].get<std::string>());
      } else {
        throw MalformedRecord(line_no, "stub line must be a JSON string or {\"content\": ...}");
      }
    } catch (const json::exception& e) {
      throw MalformedRecord(line_no, std::string("stub: ") + e.what());
    }
  }
  return responses;
}

TransportReply ScriptedTransport::post(const std::string& json_body) {
  std::lock_guard lock(mu_);
  const std::size_t i = calls_++;
  requests_.push_back(json::parse(json_body));
  const json reply{{"choices", json::array({json{{"index", 0},
                                                 {"message", {{"role", "assistant"},
                                                              {"content", responses_[i % responses_.size()]}}}}})}};
  return {true, 200, reply.dump(), {}};
}

// ---- client ----

LlmClient::LlmClient(std::shared_ptr<Transport> transport, RetryPolicy retry)
    : transport_(std::move(transport)), retry_(retry),
      sleep_([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }) {
  if (!transport_) throw TransportError("no transport configured");
}

std::string LlmClient::complete(std::string_view prompt, const InferenceParams& params) {
  const std::size_t est = estimate_tokens(prompt);
  if (est > params.max_input_tokens) throw BudgetExceeded(est, params.max_input_tokens);
  const std::string body = build_request(prompt, params).dump();

  std::string last_error;
  for (std::size_t attempt = 0; attempt <= retry_.max_retries; ++attempt) {
    if (attempt > 0) sleep_(retry_.base_backoff * (1LL << (attempt - 1)));
    ++requests_;
    const TransportReply r = transport_->post(body);
    if (!r.connected) {
      last_error = r.error.empty() ? "connection failed" : r.error;
      continue;
    }
    if (r.status == 200) return extract_content(r.body);
    if (r.status >= 500 || r.status == 429 || r.status == 408) {
      last_error = "status " + std::to_string(r.status);
      continue;
    }
    throw EndpointRejected(r.status, r.body);
  }
  throw TransportError("giving up after " + std::to_string(retry_.max_retries + 1) +
                       " attempts: " + last_error);
}

LlmVerdict LlmClient::detect_with_vote(std::string_view prompt, const InferenceParams& params) {
  if (params.n_votes == 0) throw DataError("n_votes must be >= 1");
  std::vector<std::string> responses;
  responses.reserve(params.n_votes);
  for (std::size_t i = 0; i < params.n_votes; ++i) responses.push_back(complete(prompt, params));
  return aggregate_votes(std::move(responses));
}

}  // namespace sael
