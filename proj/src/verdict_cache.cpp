#include <fstream>
#include <sstream>

#include "sael/errors.hpp"
#include "sael/hashing.hpp"
#include "sael/llm_client.hpp"

namespace sael {

namespace fs = std::filesystem;
using nlohmann::json;

json verdict_to_json(const LlmVerdict& v) {
  json j = json::object();
  j["prediction"] = std::string(to_string(v.prediction));
  j["explanation"] = v.explanation;
  j["votes"] = json{{"vulnerable", v.votes.vulnerable}, {"secure", v.votes.secure}};
  j["abstentions"] = v.abstentions;
  return j;
}

LlmVerdict verdict_from_json(const json& j) {
  try {
    LlmVerdict v;
    const auto pred = parse_verdict_name(j.at("prediction").get<std::string>());
    if (!pred) throw DataError("unknown prediction value");
    v.prediction = *pred;
    v.explanation = j.at("explanation").get<std::string>();
    v.votes.vulnerable = j.at("votes").at("vulnerable").get<std::size_t>();
    v.votes.secure = j.at("votes").at("secure").get<std::size_t>();
    v.abstentions = j.at("abstentions").get<std::size_t>();
    return v;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed verdict: ") + e.what());
  }
}

std::string cache_key(std::string_view rendered_prompt, const InferenceParams& params) {
  json k = json::object();
  k["prompt"] = std::string(rendered_prompt);
  k["model"] = params.model_name;
  k["max_input_tokens"] = params.max_input_tokens;
  k["max_output_tokens"] = params.max_output_tokens;
  k["top_p"] = params.top_p;
  k["temperature"] = params.temperature;
  k["repetition_penalty"] = params.repetition_penalty;
  k["repetition_penalty_field"] = params.repetition_penalty_field;
  k["n_votes"] = params.n_votes;
  return sha256_hex(k.dump());
}

VerdictCache::VerdictCache(fs::path dir) : file_(std::move(dir) / "verdicts.jsonl") {
  if (!fs::exists(file_)) return;
  std::ifstream in(file_, std::ios::binary);
  if (!in) throw CacheCorrupt(file_.string(), 0);
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      const std::string key = j.at("key").get<std::string>();
      entries_.insert_or_assign(key, verdict_from_json(j));
    } catch (const std::exception&) {
      throw CacheCorrupt(file_.string(), line_no);
    }
  }
}

std::optional<LlmVerdict> VerdictCache::get(const std::string& key) const {
  std::lock_guard lock(mu_);
  const auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void VerdictCache::put(const std::string& key, const LlmVerdict& verdict) {
  json j = verdict_to_json(verdict);
  j["key"] = key;
  std::lock_guard lock(mu_);
  fs::create_directories(file_.parent_path());
  std::ofstream out(file_, std::ios::binary | std::ios::app);
  if (!out) throw DataError("cannot append to cache " + file_.string());
  out << j.dump() << '\n';
  LlmVerdict stored = verdict;
  stored.raw_responses.clear();
  entries_.insert_or_assign(key, std::move(stored));
}

std::size_t VerdictCache::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

LlmVerdict cached_detect(const FunctionRecord& record, const PromptTemplate& tmpl,
                         const InferenceParams& params, VerdictCache& cache, LlmClient& client) {
  const std::string prompt = render_prompt(tmpl, record.source, params.max_input_tokens);
  const std::string key = cache_key(prompt, params);
  if (auto hit = cache.get(key)) return *hit;
  LlmVerdict v = client.detect_with_vote(prompt, params);
  cache.put(key, v);
  return v;
}

}  // namespace sael
