#pragma once

// Adaptive mixture of experts over (raw, explanation, prediction) features.
//
// Forward pass for one function:
//   1. The three embeddings form a 3-token sequence; multi-head self-attention
//      with a residual connection produces enhanced tokens E.
//   2. Gate: H(x) = W2 relu(W1 [E_raw, E_expl, E_pred] + b1) + b2,
//      G = softmax(topk_mask(H(x), k)).
//   3. Expert i maps E_i through a two-layer head to O_i over (Vulnerable, Secure).
//   4. O_final = sum_i G_i O_i.
//
// Training minimizes
//   L_total = alpha (L_feature + L_reg) + (1 - alpha) L_pred
// with L_feature = mean_n sum_i G_i CE(O_i, y), L_pred = mean_n CE(O_final, y),
// L_reg = gamma ||mean_n G - w||^2 where w is the previous step's batch-mean
// gate vector (held constant), by plain gradient descent on all parameters.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <string>
#include <utility>
#include <vector>

#include "sael/features.hpp"
#include "sael/numeric.hpp"

namespace sael {

inline constexpr std::size_t kNumExperts = 3;
inline constexpr std::size_t kNumClasses = 2;

using Probs2 = std::array<double, kNumClasses>;
using GateVector = std::array<double, kNumExperts>;

enum class FusionMode {
  WeightedSum,  // argmax of O_final
  Selection,    // argmax of O_j for the expert j with the largest gate weight
};

std::string_view to_string(FusionMode m);
std::optional<FusionMode> parse_fusion_mode(std::string_view s);

struct MoeConfig {
  std::size_t d = 32;
  std::size_t n_heads = 2;
  std::size_t d_gate = 64;
  std::size_t k = 3;
  double alpha = 0.5;
  double gamma = 0.1;
  double eta = 1e-3;
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;

  // Ablation switches. The defaults describe the full model.
  bool use_mhsa = true;
  bool use_gate = true;  // false: uniform weights over the active experts
  std::array<bool, kNumExperts> active{true, true, true};

  void validate() const;
  std::size_t head_dim() const { return d / n_heads; }
  std::size_t active_count() const;
  bool operator==(const MoeConfig&) const = default;
};

struct AttentionHead {
  nn::Param wq, bq, wk, bk, wv, bv;  // wq: d_h x d, bq: d_h x 1
};

struct ExpertHead {
  nn::Param w1, b1, w2, b2;  // w1: d_gate x d, w2: 2 x d_gate
};

struct MoeModel {
  MoeConfig config;
  std::vector<AttentionHead> heads;
  nn::Param wo, bo;  // output projection, d x d
  nn::Param gate_w1, gate_b1, gate_w2, gate_b2;  // 3d -> d_gate -> 3
  std::array<ExpertHead, kNumExperts> experts;
  GateVector prev_gate{};

  // All parameters zero; prev_gate uniform over the active experts.
  explicit MoeModel(MoeConfig cfg);
  MoeModel() : MoeModel(MoeConfig{}) {}

  // Seeded uniform init in [-s, s], s = 1/sqrt(fan_in).
  static MoeModel initialized(const MoeConfig& cfg);

  std::vector<std::pair<std::string, nn::Param*>> named_parameters();
  std::vector<std::pair<std::string, const nn::Param*>> named_parameters() const;
  std::vector<nn::Param*> parameters();
  void zero_grad();
  std::size_t parameter_count() const;

  bool operator==(const MoeModel&) const;
};

struct Batch {
  std::vector<FeatureBundle> bundles;
  std::vector<int> labels;  // 1 vulnerable, 0 secure

  std::size_t size() const noexcept { return bundles.size(); }
  void validate(std::size_t d) const;
};

std::vector<Batch> make_batches(const std::vector<FeatureBundle>& bundles,
                                const std::vector<int>& labels, std::size_t batch_size);

// ---- forward pieces ----

std::array<Embedding, kNumExperts> mhsa_enhance(const FeatureBundle& bundle, const MoeModel& model);
// H(x) before masking.
std::array<double, kNumExperts> gate_logits(const FeatureBundle& enhanced, const MoeModel& model);
GateVector gate_forward(const FeatureBundle& enhanced, const MoeModel& model);
Probs2 expert_forward(std::span<const double> embedding, std::size_t expert_index,
                      const MoeModel& model);
nn::Tensor2 assemble_matrix(const Probs2& o1, const Probs2& o2, const Probs2& o3);
Probs2 fuse(const GateVector& gate, const nn::Tensor2& matrix);

struct Prediction {
  int label = 1;
  Probs2 final_probs{};
  GateVector gate{};
  std::array<Probs2, kNumExperts> expert_probs{};
  FusionMode mode = FusionMode::WeightedSum;
};

// Ties (0.5/0.5) resolve to Vulnerable.
Prediction predict(const FeatureBundle& bundle, const MoeModel& model,
                   FusionMode mode = FusionMode::WeightedSum);
int decide(const Probs2& probs);

// ---- loss and training ----

struct LossBreakdown {
  double total = 0.0;
  double feature = 0.0;
  double pred = 0.0;
  double reg = 0.0;
  GateVector mean_gate{};
};

LossBreakdown loss_total(const Batch& batch, const MoeModel& model);
// Zeroes and fills every Param grad with dL_total/dtheta. Returns the loss.
LossBreakdown compute_gradients(const Batch& batch, MoeModel& model);

struct StepResult {
  LossBreakdown loss;
  double gate_drift = 0.0;  // ||mean gate this step - previous snapshot||
};

// One gradient-descent step. On a non-finite loss throws NonFiniteLoss and
// leaves the model unchanged.
StepResult train_step(const Batch& batch, MoeModel& model);

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double valid_loss = 0.0;
  double valid_f1 = 0.0;
  double mean_gate_drift = 0.0;
};

struct FitResult {
  MoeModel model;
  std::vector<EpochMetrics> history;
  std::size_t best_epoch = 0;  // 0 when no epoch ran
  double mean_gate_drift = 0.0;  // over every step of every epoch
};

FitResult fit(const std::vector<Batch>& train, const std::vector<Batch>& valid,
              const MoeConfig& config);

}  // namespace sael
