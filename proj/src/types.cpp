#include "sael/types.hpp"

namespace sael {

std::string_view to_string(VulnType v) {
  switch (v) {
    case VulnType::Reentrancy: return "reentrancy";
    case VulnType::Timestamp: return "timestamp";
    case VulnType::OverflowUnderflow: return "overflow_underflow";
    case VulnType::Delegatecall: return "delegatecall";
  }
  return "unknown";
}

std::string_view display_name(VulnType v) {
  switch (v) {
    case VulnType::Reentrancy: return "Reentrancy";
    case VulnType::Timestamp: return "Timestamp Dependence";
    case VulnType::OverflowUnderflow: return "Integer Overflow/Underflow";
    case VulnType::Delegatecall: return "Delegatecall";
  }
  return "Unknown";
}

std::optional<VulnType> parse_vuln_type(std::string_view s) {
  for (VulnType v : kAllVulnTypes) {
    if (s == to_string(v)) return v;
  }
  if (s == "timestamp_dependence" || s == "timestamp_dependency") return VulnType::Timestamp;
  if (s == "overflow" || s == "integer_overflow" || s == "overflow/underflow") {
    return VulnType::OverflowUnderflow;
  }
  return std::nullopt;
}

std::string_view to_string(Verdict v) { return v == Verdict::Vulnerable ? "vulnerable" : "secure"; }

std::optional<Verdict> parse_verdict_name(std::string_view s) {
  if (s == "vulnerable") return Verdict::Vulnerable;
  if (s == "secure") return Verdict::Secure;
  return std::nullopt;
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Valid: return "valid";
    case Split::Test: return "test";
    case Split::Unassigned: return "unassigned";
  }
  return "unassigned";
}

std::optional<Split> parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "valid") return Split::Valid;
  if (s == "test") return Split::Test;
  if (s == "unassigned") return Split::Unassigned;
  return std::nullopt;
}

}  // namespace sael
