#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "sael/types.hpp"

namespace sael {

inline constexpr std::string_view kCodeSlot = "{{CODE}}";
inline constexpr std::size_t kDefaultMaxInputTokens = 2048;

// Vulnerability-specific detection prompt. Rendered section order:
// definition, characteristics, code, instructions, reasoning steps, answer format.
struct PromptTemplate {
  VulnType vuln_type = VulnType::Reentrancy;
  std::string definition_block;
  std::string characteristics_block;
  std::string instruction_block;
  std::vector<std::string> cot_steps;  // exactly four
  std::string answer_format_block;

  void validate() const;
  // The template as text with a single {{CODE}} slot.
  std::string to_text() const;
  bool operator==(const PromptTemplate&) const = default;
};

// characters / 4, rounded up.
std::size_t estimate_tokens(std::string_view text);

// Throws CodeTooLong when the rendered prompt exceeds max_input_tokens.
std::string render_prompt(const PromptTemplate& tmpl, std::string_view source,
                          std::size_t max_input_tokens = kDefaultMaxInputTokens);

std::map<VulnType, PromptTemplate> builtin_templates();

// Parses the section-marked text produced by PromptTemplate::to_text().
PromptTemplate parse_template(std::string_view text, VulnType vuln_type);

// Built-in templates, with any <vuln_type>.prompt file found in `dir`
// replacing the corresponding entry.
std::map<VulnType, PromptTemplate> load_templates(const std::filesystem::path& dir);

}  // namespace sael
