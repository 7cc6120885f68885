#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sael/metrics.hpp"
#include "sael/moe.hpp"
#include "sael/synthetic.hpp"
#include "sael/types.hpp"

namespace sael {

struct EvalReport {
  VulnType vuln_type = VulnType::Reentrancy;
  Metrics metrics;
  FusionMode mode = FusionMode::WeightedSum;
  MoeConfig config;
  std::uint64_t seed = 0;

  bool operator==(const EvalReport&) const = default;
};

nlohmann::json report_to_json(const EvalReport& r);
EvalReport report_from_json(const nlohmann::json& j);
// Aligned two-column plain text.
std::string report_to_text(const EvalReport& r);

std::vector<int> predict_labels(const MoeModel& model, const LabeledBundles& data,
                                FusionMode mode = FusionMode::WeightedSum);
EvalReport evaluate(const MoeModel& model, const LabeledBundles& data, VulnType vuln_type,
                    FusionMode mode = FusionMode::WeightedSum);

// Batches train/valid with config.batch_size and runs fit().
FitResult train_model(const Dataset& data, const MoeConfig& config);

struct AblationRow {
  std::string group;  // "feature" or "module"
  std::string name;
  Metrics metrics;
};

// Seven variants trained and scored on data.test under one seed:
// feature sets R, E, P, REP and module sets Base, w/o MOE (no attention, no
// gate, mean of the expert outputs), w/o LLM (raw-code expert only).
std::vector<AblationRow> run_ablation(const Dataset& data, const MoeConfig& base);
std::string ablation_table(const std::vector<AblationRow>& rows);
MoeConfig ablation_variant(const MoeConfig& base, const std::string& name);

struct SweepCell {
  double alpha = 0.0;
  double gamma = 0.0;
  double f1 = 0.0;
  double mean_gate_drift = 0.0;
};

// One fit + test evaluation per (alpha, gamma), all with base.seed. Cells are
// independent and run concurrently; the result is in grid order
// (alpha-major).
std::vector<SweepCell> sweep(const Dataset& data, const MoeConfig& base,
                             std::span<const double> alphas, std::span<const double> gammas);
// "alpha,gamma,f1" header plus one row per cell.
std::string sweep_csv(const std::vector<SweepCell>& cells);

}  // namespace sael
