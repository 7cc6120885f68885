#include "sael/cli.hpp"

#include <atomic>
#include <charconv>
#include <cstdlib>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "sael/checkpoint.hpp"
#include "sael/errors.hpp"
#include "sael/prompt.hpp"

namespace sael::cli {

namespace fs = std::filesystem;
using nlohmann::json;

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const TransportError*>(&e) != nullptr) return kTransportFailure;
  return kDataFailure;
}

// ---- configuration ----

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

template <typename T>
T parse_integer(std::string_view key, std::string_view text) {
  const std::string t = trim(text);
  T value{};
  const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (ec != std::errc() || p != t.data() + t.size()) {
    throw DataError("setting '" + std::string(key) + "' expects an integer, got '" + t + "'");
  }
  return value;
}

double parse_real(std::string_view key, std::string_view text) {
  const std::string t = trim(text);
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  if (t.empty() || end != t.c_str() + t.size()) {
    throw DataError("setting '" + std::string(key) + "' expects a number, got '" + t + "'");
  }
  return v;
}

bool parse_bool(std::string_view key, std::string_view text) {
  const std::string t = lower(trim(text));
  if (t == "1" || t == "true" || t == "yes" || t == "on") return true;
  if (t == "0" || t == "false" || t == "no" || t == "off") return false;
  throw DataError("setting '" + std::string(key) + "' expects a boolean, got '" + t + "'");
}

std::string json_value_text(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_array()) {
    std::string out;
    for (const auto& e : v) {
      if (!out.empty()) out += ',';
      out += json_value_text(e);
    }
    return out;
  }
  return v.dump();
}

}  // namespace

void RunConfig::validate() const {
  moe.validate();
  inference.validate();
  if (provider == "remote") {
    if (provider_endpoint.empty()) throw DataError("the remote provider needs provider_endpoint");
  } else if (provider != "mock") {
    throw DataError("provider must be 'mock' or 'remote', got '" + provider + "'");
  }
  if (parallelism && *parallelism == 0) throw DataError("parallelism must be >= 1");
}

void apply_setting(RunConfig& cfg, std::string_view raw_key, std::string_view value) {
  const std::string key = trim(raw_key);
  auto& m = cfg.moe;
  auto& p = cfg.inference;
  if (key == "d") m.d = parse_integer<std::size_t>(key, value);
  else if (key == "n_heads") m.n_heads = parse_integer<std::size_t>(key, value);
  else if (key == "d_gate") m.d_gate = parse_integer<std::size_t>(key, value);
  else if (key == "k") m.k = parse_integer<std::size_t>(key, value);
  else if (key == "alpha") m.alpha = parse_real(key, value);
  else if (key == "gamma") m.gamma = parse_real(key, value);
  else if (key == "eta") m.eta = parse_real(key, value);
  else if (key == "epochs") m.epochs = parse_integer<std::size_t>(key, value);
  else if (key == "batch_size") m.batch_size = parse_integer<std::size_t>(key, value);
  else if (key == "seed") m.seed = parse_integer<std::uint64_t>(key, value);
  else if (key == "use_mhsa") m.use_mhsa = parse_bool(key, value);
  else if (key == "use_gate") m.use_gate = parse_bool(key, value);
  else if (key == "active") {
    std::vector<std::string> parts;
    std::stringstream in{std::string(value)};
    for (std::string part; std::getline(in, part, ',');) parts.push_back(part);
    if (parts.size() != kNumExperts) throw DataError("'active' expects three comma-separated booleans");
    for (std::size_t i = 0; i < kNumExperts; ++i) m.active[i] = parse_bool(key, parts[i]);
  } else if (key == "mode") {
    const auto mode = parse_fusion_mode(trim(value));
    if (!mode) throw DataError("unknown fusion mode '" + std::string(value) + "'");
    cfg.mode = *mode;
  } else if (key == "max_input_tokens") p.max_input_tokens = parse_integer<std::size_t>(key, value);
  else if (key == "max_output_tokens") p.max_output_tokens = parse_integer<std::size_t>(key, value);
  else if (key == "top_p") p.top_p = parse_real(key, value);
  else if (key == "temperature") p.temperature = parse_real(key, value);
  else if (key == "repetition_penalty") p.repetition_penalty = parse_real(key, value);
  else if (key == "repetition_penalty_field") p.repetition_penalty_field = trim(value);
  else if (key == "n_votes") p.n_votes = parse_integer<std::size_t>(key, value);
  else if (key == "model") p.model_name = trim(value);
  else if (key == "provider") cfg.provider = lower(trim(value));
  else if (key == "provider_endpoint") cfg.provider_endpoint = trim(value);
  else if (key == "provider_seed") cfg.provider_seed = parse_integer<std::uint64_t>(key, value);
  else if (key == "llm_endpoint") cfg.llm_endpoint = trim(value);
  else if (key == "api_key") cfg.api_key = trim(value);
  else if (key == "parallelism") cfg.parallelism = parse_integer<std::size_t>(key, value);
  else if (key == "max_retries") cfg.retry.max_retries = parse_integer<std::size_t>(key, value);
  else if (key == "retry_backoff_ms") {
    cfg.retry.base_backoff = std::chrono::milliseconds(parse_integer<std::uint32_t>(key, value));
  }
  else if (key == "templates") cfg.templates = fs::path(trim(value));
  else if (key == "vuln_type") {
    const auto v = parse_vuln_type(trim(value));
    if (!v) throw DataError("unknown vulnerability type '" + std::string(value) + "'");
    cfg.vuln_type = *v;
  } else {
    throw DataError("unknown setting '" + key + "'");
  }
}

void apply_config_text(RunConfig& cfg, std::string_view text) {
  const std::string body = trim(text);
  if (!body.empty() && body.front() == '{') {
    json j;
    try {
      j = json::parse(body);
    } catch (const json::exception& e) {
      throw DataError(std::string("config is not valid JSON: ") + e.what());
    }
    for (const auto& [key, value] : j.items()) apply_setting(cfg, key, json_value_text(value));
    return;
  }
  std::istringstream in(body);
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw DataError("config line " + std::to_string(line_no) + " is not key=value");
    }
    apply_setting(cfg, line.substr(0, eq), line.substr(eq + 1));
  }
}

RunConfig load_run_config(const fs::path& path) {
  RunConfig cfg;
  apply_config_text(cfg, read_text_file(path));
  return cfg;
}

void apply_environment(RunConfig& cfg) {
  if (cfg.llm_endpoint.empty()) {
    if (const char* v = std::getenv("SAEL_LLM_ENDPOINT")) cfg.llm_endpoint = v;
  }
  if (cfg.api_key.empty()) {
    if (const char* v = std::getenv("SAEL_LLM_API_KEY")) cfg.api_key = v;
  }
  if (!cfg.parallelism) {
    if (const char* v = std::getenv("SAEL_PARALLELISM")) apply_setting(cfg, "parallelism", v);
  }
}

std::vector<double> parse_number_list(std::string_view text) {
  std::vector<double> out;
  std::stringstream in{std::string(text)};
  for (std::string part; std::getline(in, part, ',');) {
    if (trim(part).empty()) continue;
    out.push_back(parse_real("list", part));
  }
  if (out.empty()) throw DataError("empty number list");
  return out;
}

// ---- verdict files ----

std::string serialize_verdict_row(const VerdictRow& row) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  j["id"] = row.id;
  const LlmVerdict none;
  const LlmVerdict& v = row.verdict ? *row.verdict : none;
  j["prediction"] = row.verdict ? std::string(to_string(v.prediction)) : std::string("abstain");
  j["explanation"] = v.explanation;
  j["votes"] = {{"vulnerable", v.votes.vulnerable}, {"secure", v.votes.secure}};
  j["abstentions"] = row.verdict ? v.abstentions : row.abstentions;
  if (!row.error.empty()) j["error"] = row.error;
  return j.dump();
}

VerdictRow parse_verdict_row(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw DataError(std::string("verdict line is not JSON: ") + e.what());
  }
  VerdictRow row;
  try {
    row.id = j.at("id").get<std::string>();
    if (j.at("prediction").get<std::string>() == "abstain") {
      row.abstentions = j.value("abstentions", std::size_t{0});
      row.error = j.value("error", std::string());
    } else {
      row.verdict = verdict_from_json(j);
      row.abstentions = row.verdict->abstentions;
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed verdict line: ") + e.what());
  }
  return row;
}

std::map<std::string, VerdictRow> load_verdicts(const fs::path& path) {
  std::istringstream in(read_text_file(path));
  std::map<std::string, VerdictRow> rows;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      VerdictRow row = parse_verdict_row(line);
      const std::string id = row.id;
      if (!rows.emplace(id, std::move(row)).second) throw DuplicateId(id, line_no);
    } catch (const DuplicateId&) {
      throw;
    } catch (const DataError& e) {
      throw MalformedRecord(line_no, e.what());
    }
  }
  return rows;
}

// ---- pipeline helpers ----

Corpus read_corpus_file(const fs::path& path, std::optional<VulnType> vuln) {
  const std::string text = read_text_file(path);
  if (!vuln) {
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) {
      if (trim(line).empty()) continue;
      try {
        vuln = parse_vuln_type(json::parse(line).at("vuln_type").get<std::string>());
      } catch (const json::exception&) {
        throw MalformedRecord(1, "cannot read vuln_type of the first record in " + path.string());
      }
      break;
    }
  }
  if (!vuln) throw DataError("corpus " + path.string() + " is empty or has an unknown vuln_type");
  return parse_corpus(text, *vuln);
}

std::unique_ptr<EmbeddingProvider> make_provider(const RunConfig& cfg) {
  if (cfg.provider == "remote") return remote_provider(cfg.provider_endpoint, cfg.moe.d);
  return mock_provider(cfg.moe.d, cfg.provider_seed);
}

Dataset build_dataset(const Corpus& corpus, const std::map<std::string, VerdictRow>& verdicts,
                      const EmbeddingProvider& provider, std::uint64_t seed) {
  const Corpus split = corpus.is_split() ? corpus : split_corpus(corpus, seed);
  Dataset data;
  for (const auto& r : split.records) {
    const auto it = verdicts.find(r.id);
    if (it == verdicts.end()) throw DataError("no verdict for record '" + r.id + "'");
    const VerdictRow& row = it->second;
    std::optional<Verdict> prediction;
    std::string explanation;
    if (row.verdict) {
      prediction = row.verdict->prediction;
      explanation = row.verdict->explanation;
    }
    LabeledBundles* dest = nullptr;
    switch (r.split) {
      case Split::Train: dest = &data.train; break;
      case Split::Valid: dest = &data.valid; break;
      case Split::Test: dest = &data.test; break;
      case Split::Unassigned: continue;
    }
    dest->bundles.push_back(build_bundle(r.source, explanation, prediction, provider));
    dest->labels.push_back(r.label);
  }
  return data;
}

// ---- commands ----

int cmd_ingest(const IngestArgs& args, std::ostream& log) {
  Corpus c = ingest_directory(args.src, args.labels, args.vuln);
  write_corpus(c, args.out);
  std::size_t vulnerable = 0;
  for (const auto& r : c.records) vulnerable += r.label == 1 ? 1 : 0;
  log << "ingested " << c.size() << " functions (" << to_string(args.vuln) << "): " << vulnerable
      << " vulnerable, " << (c.size() - vulnerable) << " secure\n";
  return kOk;
}

int cmd_detect(const DetectArgs& args, std::ostream& log, std::shared_ptr<Transport> transport) {
  RunConfig cfg = args.config;
  apply_environment(cfg);
  cfg.inference.validate();
  if (cfg.parallelism && *cfg.parallelism == 0) throw DataError("parallelism must be >= 1");
  const Corpus corpus = read_corpus_file(args.corpus, cfg.vuln_type);
  const auto templates = cfg.templates ? load_templates(*cfg.templates) : builtin_templates();
  const PromptTemplate& tmpl = templates.at(corpus.vuln_type);

  std::size_t parallelism = cfg.parallelism.value_or(4);
  if (!transport) {
    if (args.stub) {
      transport = std::make_shared<ScriptedTransport>(ScriptedTransport::load_script(*args.stub));
      parallelism = 1;  // scripted replies are consumed in order
    } else {
      if (cfg.llm_endpoint.empty()) {
        throw DataError("no LLM endpoint: pass --stub, set llm_endpoint or SAEL_LLM_ENDPOINT");
      }
      transport = std::make_shared<HttpTransport>(cfg.llm_endpoint, cfg.api_key);
    }
  }
  LlmClient client(transport, cfg.retry);
  VerdictCache cache(args.cache);

  const std::size_t n = corpus.size();
  std::vector<VerdictRow> rows(n);
  std::vector<int> failure(n, kOk);
  std::atomic<std::size_t> next{0};
  std::mutex log_mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      const FunctionRecord& r = corpus.records[i];
      rows[i].id = r.id;
      try {
        rows[i].verdict = cached_detect(r, tmpl, cfg.inference, cache, client);
        rows[i].abstentions = rows[i].verdict->abstentions;
      } catch (const AllAbstained& e) {
        rows[i].abstentions = cfg.inference.n_votes;
        rows[i].error = e.what();
        failure[i] = kDataFailure;
      } catch (const Error& e) {
        rows[i].abstentions = cfg.inference.n_votes;
        rows[i].error = e.what();
        failure[i] = exit_code_for(e);
      }
      if (failure[i] != kOk) {
        std::lock_guard lock(log_mu);
        log << "detect: " << r.id << ": " << rows[i].error << '\n';
      }
    }
  };
  const std::size_t threads = std::min(parallelism, std::max<std::size_t>(n, 1));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::string text;
  std::size_t vulnerable = 0, secure = 0, failed = 0;
  for (std::size_t i = 0; i < n; ++i) {
    text += serialize_verdict_row(rows[i]);
    text += '\n';
    if (!rows[i].verdict) ++failed;
    else if (rows[i].verdict->prediction == Verdict::Vulnerable) ++vulnerable;
    else ++secure;
  }
  write_text_file(args.out, text);
  log << "detected " << n << " functions: " << vulnerable << " vulnerable, " << secure << " secure, "
      << failed << " abstained (" << client.requests_sent() << " requests)\n";
  if (n > 0 && failed == n) return failure.front();
  return kOk;
}

int cmd_train(const TrainArgs& args, std::ostream& log) {
  const RunConfig& cfg = args.config;
  cfg.validate();
  const Corpus corpus = read_corpus_file(args.corpus, cfg.vuln_type);
  const auto verdicts = load_verdicts(args.verdicts);
  const auto provider = make_provider(cfg);
  const Dataset data = build_dataset(corpus, verdicts, *provider, cfg.moe.seed);
  const FitResult fr = train_model(data, cfg.moe);

  json meta = json::object();
  meta["vuln_type"] = std::string(to_string(corpus.vuln_type));
  meta["provider"] = cfg.provider;
  meta["provider_seed"] = cfg.provider_seed;
  meta["provider_endpoint"] = cfg.provider_endpoint;
  meta["mode"] = std::string(to_string(cfg.mode));
  meta["best_epoch"] = fr.best_epoch;
  save_checkpoint(args.out, fr.model, meta);

  const double f1 = fr.best_epoch > 0 ? fr.history[fr.best_epoch - 1].valid_f1 : 0.0;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * f1);
  log << "trained " << fr.history.size() << " epochs on " << data.train.size() << " functions; best epoch "
      << fr.best_epoch << ", valid F1 " << buf << '\n';
  return kOk;
}

int cmd_eval(const EvalArgs& args, std::ostream& log) {
  const Checkpoint ck = load_checkpoint(args.checkpoint);
  RunConfig cfg;
  cfg.moe = ck.model.config;
  try {
    cfg.provider = ck.metadata.value("provider", std::string("mock"));
    cfg.provider_seed = ck.metadata.value("provider_seed", std::uint64_t{0});
    cfg.provider_endpoint = ck.metadata.value("provider_endpoint", std::string());
    if (ck.metadata.contains("mode")) apply_setting(cfg, "mode", ck.metadata["mode"].get<std::string>());
    if (ck.metadata.contains("vuln_type")) {
      apply_setting(cfg, "vuln_type", ck.metadata["vuln_type"].get<std::string>());
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("bad checkpoint metadata: ") + e.what());
  }
  if (args.mode) cfg.mode = *args.mode;

  const Corpus corpus = read_corpus_file(args.corpus, cfg.vuln_type);
  const auto verdicts = load_verdicts(args.verdicts);
  const auto provider = make_provider(cfg);
  const Dataset data = build_dataset(corpus, verdicts, *provider, cfg.moe.seed);
  if (data.test.size() == 0) throw EmptyInput("test split");
  const EvalReport report = evaluate(ck.model, data.test, corpus.vuln_type, cfg.mode);

  if (args.out.extension() == ".txt") write_text_file(args.out, report_to_text(report));
  else write_text_file(args.out, report_to_json(report).dump(2) + "\n");
  log << report_to_text(report);
  return kOk;
}

namespace {

Dataset load_source(const DataSource& src, const RunConfig& cfg) {
  if (src.synthetic) {
    SyntheticSpec spec = *src.synthetic;
    spec.d = cfg.moe.d;
    return make_synthetic_dataset(spec);
  }
  if (!src.corpus || !src.verdicts) throw DataError("need --corpus and --verdicts, or --synthetic");
  const Corpus corpus = read_corpus_file(*src.corpus, cfg.vuln_type);
  const auto verdicts = load_verdicts(*src.verdicts);
  const auto provider = make_provider(cfg);
  return build_dataset(corpus, verdicts, *provider, cfg.moe.seed);
}

void emit(const std::optional<fs::path>& out, const std::string& text, std::ostream& log) {
  if (out) write_text_file(*out, text);
  else log << text;
}

}  // namespace

int cmd_sweep(const SweepArgs& args, std::ostream& log) {
  args.config.validate();
  const Dataset data = load_source(args.data, args.config);
  const auto cells = sweep(data, args.config.moe, args.alphas, args.gammas);
  emit(args.out, sweep_csv(cells), log);
  if (args.out) log << "wrote " << cells.size() << " sweep cells to " << args.out->string() << '\n';
  return kOk;
}

int cmd_ablation(const AblationArgs& args, std::ostream& log) {
  args.config.validate();
  const Dataset data = load_source(args.data, args.config);
  const auto rows = run_ablation(data, args.config.moe);
  emit(args.out, ablation_table(rows), log);
  return kOk;
}

}  // namespace sael::cli
