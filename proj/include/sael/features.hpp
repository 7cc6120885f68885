#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sael/types.hpp"

namespace sael {

using Embedding = std::vector<double>;

// The three per-function feature vectors consumed by the MoE, ordered
// (raw code, explanation, prediction).
struct FeatureBundle {
  Embedding raw;
  Embedding expl;
  Embedding pred;

  std::size_t dim() const noexcept { return raw.size(); }
  const Embedding& operator[](std::size_t i) const { return i == 0 ? raw : (i == 1 ? expl : pred); }
  Embedding& operator[](std::size_t i) { return i == 0 ? raw : (i == 1 ? expl : pred); }

  // Throws DimensionMismatch / DataError if the invariants do not hold.
  void validate() const;
  bool operator==(const FeatureBundle&) const = default;
};

// Label words per class used by the prompt-tuned encoders.
struct Verbalizer {
  std::vector<std::string> vulnerable_words{"defective", "bad"};
  std::vector<std::string> secure_words{"clean", "perfect"};

  void validate() const;
  // Maps a label word to a verdict; nullopt if the word is unknown.
  std::optional<Verdict> classify(std::string_view word) const;
};

// Cloze template with one input slot [X] and one answer slot [Z].
struct ClozeTemplate {
  std::string text = "[X] The code is [Z]";

  void validate() const;
  // Substitutes the input slot; the answer slot is left for the encoder.
  std::string apply(std::string_view input) const;
};

class EmbeddingProvider {
public:
  virtual ~EmbeddingProvider() = default;
  virtual std::size_t dim() const = 0;
  virtual Embedding embed(std::string_view text) const = 0;
};

// Hash-seeded deterministic stand-in for a trained encoder. Values lie in
// [-1, 1]; empty text maps to the zero vector.
class MockProvider final : public EmbeddingProvider {
public:
  MockProvider(std::size_t d, std::uint64_t seed);
  std::size_t dim() const override { return d_; }
  Embedding embed(std::string_view text) const override;

private:
  std::size_t d_;
  std::uint64_t seed_;
};

// POSTs {"text": ...} to an endpoint and expects {"embedding": [d reals]}.
class RemoteProvider final : public EmbeddingProvider {
public:
  RemoteProvider(std::string endpoint, std::size_t d, std::size_t max_in_flight = 4);
  ~RemoteProvider() override;
  std::size_t dim() const override { return d_; }
  Embedding embed(std::string_view text) const override;

private:
  struct Impl;
  std::string endpoint_;
  std::size_t d_;
  std::unique_ptr<Impl> impl_;
};

std::unique_ptr<EmbeddingProvider> mock_provider(std::size_t d, std::uint64_t seed);
std::unique_ptr<EmbeddingProvider> remote_provider(const std::string& endpoint, std::size_t d);

// Embeds the cloze-wrapped source.
Embedding embed_raw(std::string_view source, const EmbeddingProvider& provider,
                    const ClozeTemplate& cloze = {});
Embedding embed_expl(std::string_view explanation, const EmbeddingProvider& provider);
// One-hot in the first two coordinates: 0 = Vulnerable, 1 = Secure.
Embedding embed_pred(Verdict prediction, std::size_t d);
// Abstained verdicts (no usable prediction) map to the zero vector.
Embedding embed_pred(const std::optional<Verdict>& prediction, std::size_t d);

FeatureBundle build_bundle(std::string_view source, std::string_view explanation,
                           const std::optional<Verdict>& prediction,
                           const EmbeddingProvider& provider);

}  // namespace sael
