#include "sael/prompt.hpp"

#include <sstream>

#include "sael/corpus.hpp"
#include "sael/errors.hpp"

namespace sael {

namespace {

constexpr std::string_view kDefinitionHeader = "### Definition";
constexpr std::string_view kCharacteristicsHeader = "### Typical Characteristics";
constexpr std::string_view kCodeHeader = "### Code Under Review";
constexpr std::string_view kInstructionsHeader = "### Instructions";
constexpr std::string_view kStepsHeader = "### Reasoning Steps";
constexpr std::string_view kAnswerHeader = "### Answer Format";

std::size_t count_of(std::string_view text, std::string_view needle) {
  std::size_t n = 0;
  for (auto p = text.find(needle); p != std::string_view::npos; p = text.find(needle, p + 1)) ++n;
  return n;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> standard_steps(VulnType v) {
  const std::string name(display_name(v));
  return {
      "Understand the definition and typical characteristics of " + name + " vulnerabilities given above.",
      "Analyze the structure of the code: its state variables, external interactions, control flow and modifiers.",
      "Identify potential " + name + " vulnerabilities and locate the statements involved.",
      "Explain the causes of any vulnerability you found, or give evidence that the code is secure against " + name + ".",
  };
}

const std::string kInstructions =
    "Analyze the code above for the vulnerability type described. Decide whether it is "
    "vulnerable, explain the cause of any vulnerability you find, and point to the "
    "problematic statements. Consider modifiers and access control applied to the function.";

const std::string kAnswerFormat =
    "Write your analysis first, then end your answer with exactly one line of the form\n"
    "VERDICT: VULNERABLE\n"
    "or\n"
    "VERDICT: SECURE";

}  // namespace

std::size_t estimate_tokens(std::string_view text) { return (text.size() + 3) / 4; }

void PromptTemplate::validate() const {
  if (cot_steps.size() != 4) {
    throw DataError("prompt template needs exactly 4 reasoning steps, got " +
                    std::to_string(cot_steps.size()));
  }
  for (const std::string* block :
       {&definition_block, &characteristics_block, &instruction_block, &answer_format_block}) {
    if (count_of(*block, kCodeSlot) != 0) throw DataError("code slot may only appear in the code section");
  }
}

std::string PromptTemplate::to_text() const {
  validate();
  std::ostringstream out;
  out << kDefinitionHeader << '\n' << definition_block << "\n\n";
  out << kCharacteristicsHeader << '\n' << characteristics_block << "\n\n";
  out << kCodeHeader << '\n' << kCodeSlot << "\n\n";
  out << kInstructionsHeader << '\n' << instruction_block << "\n\n";
  out << kStepsHeader << '\n';
  for (std::size_t i = 0; i < cot_steps.size(); ++i) {
    out << "Step " << (i + 1) << ": " << cot_steps[i] << '\n';
  }
  out << '\n' << kAnswerHeader << '\n' << answer_format_block << '\n';
  return out.str();
}

std::string render_prompt(const PromptTemplate& tmpl, std::string_view source,
                          std::size_t max_input_tokens) {
  if (source.empty()) throw DataError("cannot render a prompt for empty source");
  const std::string text = tmpl.to_text();
  const auto slot = text.find(kCodeSlot);
  std::string out;
  out.reserve(text.size() + source.size());
  out.append(text, 0, slot);
  out.append(source);
  out.append(text, slot + kCodeSlot.size());
  const std::size_t est = estimate_tokens(out);
  if (est > max_input_tokens) throw CodeTooLong(est, max_input_tokens);
  return out;
}

std::map<VulnType, PromptTemplate> builtin_templates() {
  std::map<VulnType, PromptTemplate> m;

  m[VulnType::Reentrancy] = PromptTemplate{
      VulnType::Reentrancy,
      "Vulnerability type: Reentrancy.\n"
      "A reentrancy vulnerability exists when a contract calls an external contract or sends "
      "Ether before completing all necessary internal state changes. The callee can call back "
      "into the vulnerable function while the original invocation is still in progress, and "
      "observe or act on stale state, for example withdrawing the same funds repeatedly.",
      "- External calls (call, send, transfer, calls into other contracts) that happen before "
      "the state updates they depend on, such as balance resets.\n"
      "- Low-level call{value: ...} forwarding all remaining gas.\n"
      "- External calls inside loops.\n"
      "- Missing reentrancy guards or checks-effects-interactions ordering.\n"
      "- Access-control modifiers (e.g. onlyOwner) that restrict who can trigger the call.",
      kInstructions,
      standard_steps(VulnType::Reentrancy),
      kAnswerFormat,
  };

  m[VulnType::Timestamp] = PromptTemplate{
      VulnType::Timestamp,
      "Vulnerability type: Timestamp Dependence.\n"
      "A timestamp dependence vulnerability exists when critical contract logic relies on the "
      "block timestamp. Miners can manipulate block.timestamp within a tolerance, which can "
      "compromise the integrity of the contract and cause financial loss.",
      "- block.timestamp or now used as a source of randomness.\n"
      "- Payouts, deadlines or state transitions decided by comparisons against block.timestamp "
      "that a miner-manipulable block timestamp can flip.\n"
      "- Timestamps used in key decision-making conditions rather than only for logging.",
      kInstructions,
      standard_steps(VulnType::Timestamp),
      kAnswerFormat,
  };

  m[VulnType::OverflowUnderflow] = PromptTemplate{
      VulnType::OverflowUnderflow,
      "Vulnerability type: Integer Overflow/Underflow.\n"
      "An integer overflow or underflow occurs when the result of an arithmetic operation "
      "exceeds the storage range of its variable. On overflow the value wraps around to the "
      "minimum of the type; on underflow it wraps around to the maximum.",
      "- Unchecked addition, subtraction or multiplication on user-controlled values with "
      "wrap-around arithmetic (pre-0.8 compilers or unchecked blocks).\n"
      "- Balance or allowance subtraction without a prior sufficiency check.\n"
      "- Loop counters or lengths of narrow integer types that can wrap around.\n"
      "- Absence of SafeMath or equivalent checked arithmetic.",
      kInstructions,
      standard_steps(VulnType::OverflowUnderflow),
      kAnswerFormat,
  };

  m[VulnType::Delegatecall] = PromptTemplate{
      VulnType::Delegatecall,
      "Vulnerability type: Delegatecall.\n"
      "delegatecall is a low-level call that runs code from another contract. The callee "
      "executes in the caller's storage context, so it can modify the calling contract's "
      "storage, balance and ownership.",
      "- delegatecall to an address supplied by the caller or stored in mutable state.\n"
      "- Forwarding msg.data to delegatecall in fallback functions without access control.\n"
      "- Storage layout mismatches between the proxy and the callee executing in the caller "
      "storage context.\n"
      "- Unchecked return values of delegatecall.",
      kInstructions,
      standard_steps(VulnType::Delegatecall),
      kAnswerFormat,
  };
  return m;
}

PromptTemplate parse_template(std::string_view text, VulnType vuln_type) {
  if (count_of(text, kCodeSlot) != 1) {
    throw DataError("prompt template must contain exactly one " + std::string(kCodeSlot) + " slot");
  }
  const std::vector<std::string_view> headers{kDefinitionHeader, kCharacteristicsHeader,
                                              kCodeHeader,       kInstructionsHeader,
                                              kStepsHeader,      kAnswerHeader};
  std::vector<std::size_t> at;
  for (auto h : headers) {
    const auto p = text.find(h);
    if (p == std::string_view::npos) throw DataError("prompt template lacks section '" + std::string(h) + "'");
    if (!at.empty() && p < at.back()) throw DataError("prompt template sections out of order");
    at.push_back(p);
  }
  auto section = [&](std::size_t i) {
    const std::size_t begin = at[i] + headers[i].size();
    const std::size_t end = i + 1 < at.size() ? at[i + 1] : text.size();
    return trim(text.substr(begin, end - begin));
  };
  if (section(2) != kCodeSlot) throw DataError("code section must contain only the code slot");

  PromptTemplate t;
  t.vuln_type = vuln_type;
  t.definition_block = section(0);
  t.characteristics_block = section(1);
  t.instruction_block = section(3);
  t.answer_format_block = section(5);
  std::istringstream steps(section(4));
  for (std::string line; std::getline(steps, line);) {
    line = trim(line);
    if (line.empty()) continue;
    const auto colon = line.find(':');
    if (line.rfind("Step ", 0) != 0 || colon == std::string::npos) {
      throw DataError("malformed reasoning step line: " + line);
    }
    t.cot_steps.push_back(trim(std::string_view(line).substr(colon + 1)));
  }
  t.validate();
  return t;
}

std::map<VulnType, PromptTemplate> load_templates(const std::filesystem::path& dir) {
  auto m = builtin_templates();
  for (VulnType v : kAllVulnTypes) {
    const auto file = dir / (std::string(to_string(v)) + ".prompt");
    if (std::filesystem::exists(file)) m[v] = parse_template(read_text_file(file), v);
  }
  return m;
}

}  // namespace sael
