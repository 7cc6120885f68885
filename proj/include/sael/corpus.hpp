#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sael/types.hpp"

namespace sael {

// A function-level unit pulled out of a Solidity file.
struct ExtractedFunction {
  std::string contract_name;
  std::string function_name;  // "constructor", "fallback" and "receive" are synthesized
  std::string source;         // from the introducing keyword to the closing brace
  std::size_t offset = 0;     // byte offset of the keyword in the input
  std::size_t line = 1;

  bool operator==(const ExtractedFunction&) const = default;
};

// Lexical extraction of every function body defined directly inside a
// contract, abstract contract or library. Comments and string literals are
// skipped, so braces inside them never count. Declarations without a body
// (interfaces, abstract functions, function-typed state variables) are not
// returned. Modifier definitions are not returned. Throws UnbalancedBraces.
std::vector<ExtractedFunction> extract_functions(std::string_view solidity_source);

struct FunctionRecord {
  std::string id;
  std::string contract_name;
  std::string function_name;
  std::string source;
  VulnType vuln_type = VulnType::Reentrancy;
  int label = 0;  // 1 vulnerable, 0 secure
  Split split = Split::Unassigned;

  void validate() const;
  bool operator==(const FunctionRecord&) const = default;
};

struct Corpus {
  VulnType vuln_type = VulnType::Reentrancy;
  std::vector<FunctionRecord> records;

  std::size_t size() const noexcept { return records.size(); }
  bool operator==(const Corpus&) const = default;

  // Records with the given split, in corpus order.
  std::vector<const FunctionRecord*> subset(Split s) const;
  std::size_t count(Split s, int label) const;
  bool is_split() const;
};

// One record as a single JSON line (no trailing newline).
std::string serialize_record(const FunctionRecord& r);
std::string serialize_corpus(const Corpus& c);
void write_corpus(const Corpus& c, const std::filesystem::path& path);

// Parses the JSON-lines corpus text. Line numbers are 1-based; blank lines
// are skipped. Throws MalformedRecord / DuplicateId.
Corpus parse_corpus(std::string_view text, VulnType vuln_type);

// `path` is either a JSON-lines corpus file or a directory of .sol files.
// For a directory the label manifest defaults to <dir>/labels.jsonl.
// Throws MalformedRecord, DuplicateId, MissingLabel.
Corpus load_corpus(const std::filesystem::path& path, VulnType vuln_type,
                   const std::optional<std::filesystem::path>& manifest = std::nullopt);

// Builds records from a directory of .sol files (sorted by filename) and a
// manifest of {"id","label"} lines. Ids are "<file stem>:<contract>.<function>",
// with "#2", "#3", ... appended to repeated names (overloads).
Corpus ingest_directory(const std::filesystem::path& dir, const std::filesystem::path& manifest,
                        VulnType vuln_type);

// Label-stratified 3:1:1 assignment. Within each class of n records:
// valid = round(n/5), test = round(n/5), train = the rest. Deterministic in
// seed; record order is preserved. Throws AlreadySplit.
Corpus split_corpus(Corpus corpus, std::uint64_t seed);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace sael
