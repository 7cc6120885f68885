#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

namespace sael {

enum class VulnType { Reentrancy, Timestamp, OverflowUnderflow, Delegatecall };

inline constexpr std::array<VulnType, 4> kAllVulnTypes{VulnType::Reentrancy, VulnType::Timestamp,
                                                      VulnType::OverflowUnderflow,
                                                      VulnType::Delegatecall};

// Binary verdict; Vulnerable is the positive class (label 1).
enum class Verdict { Vulnerable, Secure };

enum class Split { Train, Valid, Test, Unassigned };

// Stable identifiers used in files: "reentrancy", "timestamp",
// "overflow_underflow", "delegatecall".
std::string_view to_string(VulnType v);
// Human-readable names used in prompts.
std::string_view display_name(VulnType v);
std::optional<VulnType> parse_vuln_type(std::string_view s);

std::string_view to_string(Verdict v);
std::optional<Verdict> parse_verdict_name(std::string_view s);

std::string_view to_string(Split s);
std::optional<Split> parse_split(std::string_view s);

inline int label_of(Verdict v) { return v == Verdict::Vulnerable ? 1 : 0; }
inline Verdict verdict_of(int label) { return label == 1 ? Verdict::Vulnerable : Verdict::Secure; }
// Class index used by the probability vectors (Vulnerable, Secure).
inline std::size_t class_index(int label) { return label == 1 ? 0 : 1; }

}  // namespace sael
