#pragma once

// Pipeline commands behind the `sael` executable. Stages exchange files:
// corpus (JSON lines) -> verdicts (JSON lines) -> checkpoint (JSON) -> report.

#include <cstddef>
#include <exception>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sael/corpus.hpp"
#include "sael/evaluation.hpp"
#include "sael/features.hpp"
#include "sael/llm_client.hpp"
#include "sael/moe.hpp"
#include "sael/synthetic.hpp"

namespace sael::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataFailure = 2, kTransportFailure = 3 };

// TransportError -> 3, any other sael::Error -> 2, anything else -> 2.
int exit_code_for(const std::exception& e);

struct RunConfig {
  MoeConfig moe;
  InferenceParams inference;
  FusionMode mode = FusionMode::WeightedSum;

  std::string provider = "mock";  // "mock" or "remote"
  std::string provider_endpoint;
  std::uint64_t provider_seed = 0;

  std::string llm_endpoint;
  std::string api_key;
  std::optional<std::size_t> parallelism;  // 4 when unset
  RetryPolicy retry;
  std::optional<std::filesystem::path> templates;
  std::optional<VulnType> vuln_type;

  void validate() const;
};

// Applies one setting; keys mirror the field names ("alpha", "n_votes",
// "provider", "llm_endpoint", ...). Throws DataError for unknown keys or
// unparsable values.
void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value);
// Flat key=value lines ('#' comments allowed) or a JSON object.
void apply_config_text(RunConfig& cfg, std::string_view text);
RunConfig load_run_config(const std::filesystem::path& path);
// Fills the endpoint, API key and parallelism from SAEL_LLM_ENDPOINT,
// SAEL_LLM_API_KEY and SAEL_PARALLELISM when they are still unset.
void apply_environment(RunConfig& cfg);

// ---- verdict files ----

struct VerdictRow {
  std::string id;
  std::optional<LlmVerdict> verdict;  // nullopt: the record failed or every vote abstained
  std::size_t abstentions = 0;
  std::string error;
};

std::string serialize_verdict_row(const VerdictRow& row);
VerdictRow parse_verdict_row(std::string_view line);
std::map<std::string, VerdictRow> load_verdicts(const std::filesystem::path& path);

// ---- shared pipeline helpers ----

// Reads a corpus file, taking the vulnerability type from `vuln` or else
// from the first record.
Corpus read_corpus_file(const std::filesystem::path& path, std::optional<VulnType> vuln = std::nullopt);

std::unique_ptr<EmbeddingProvider> make_provider(const RunConfig& cfg);

// Embeds every record and groups the bundles by split. Unsplit corpora are
// split with `seed` first. Throws DataError when a record has no verdict.
Dataset build_dataset(const Corpus& corpus, const std::map<std::string, VerdictRow>& verdicts,
                      const EmbeddingProvider& provider, std::uint64_t seed);

// ---- commands ----

struct IngestArgs {
  std::filesystem::path src;
  std::filesystem::path labels;
  VulnType vuln = VulnType::Reentrancy;
  std::filesystem::path out;
};
int cmd_ingest(const IngestArgs& args, std::ostream& log);

struct DetectArgs {
  std::filesystem::path corpus;
  std::filesystem::path cache;
  std::filesystem::path out;
  std::optional<std::filesystem::path> stub;
  RunConfig config;
};
// `transport` overrides both the stub and the HTTP endpoint when given.
int cmd_detect(const DetectArgs& args, std::ostream& log,
               std::shared_ptr<Transport> transport = nullptr);

struct TrainArgs {
  std::filesystem::path corpus;
  std::filesystem::path verdicts;
  std::filesystem::path out;
  RunConfig config;
};
int cmd_train(const TrainArgs& args, std::ostream& log);

struct EvalArgs {
  std::filesystem::path checkpoint;
  std::filesystem::path corpus;
  std::filesystem::path verdicts;
  std::filesystem::path out;  // ".txt" writes the plain-text form, anything else JSON
  std::optional<FusionMode> mode;
};
int cmd_eval(const EvalArgs& args, std::ostream& log);

struct DataSource {
  // Either corpus + verdicts, or a synthetic dataset.
  std::optional<std::filesystem::path> corpus;
  std::optional<std::filesystem::path> verdicts;
  std::optional<SyntheticSpec> synthetic;
};

struct SweepArgs {
  DataSource data;
  std::vector<double> alphas;
  std::vector<double> gammas;
  std::optional<std::filesystem::path> out;  // stdout when absent
  RunConfig config;
};
int cmd_sweep(const SweepArgs& args, std::ostream& log);

struct AblationArgs {
  DataSource data;
  std::optional<std::filesystem::path> out;
  RunConfig config;
};
int cmd_ablation(const AblationArgs& args, std::ostream& log);

std::vector<double> parse_number_list(std::string_view text);

}  // namespace sael::cli
