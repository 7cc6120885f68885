#include "sael/features.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <condition_variable>

#include "json.hpp"
#include "sael/errors.hpp"
#include "sael/hashing.hpp"
#include "sael/http.hpp"
#include "sael/rng.hpp"

namespace sael {

namespace {

std::size_t count_occurrences(std::string_view text, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string_view::npos;
       pos = text.find(needle, pos + needle.size())) {
    ++n;
  }
  return n;
}

}  // namespace

void FeatureBundle::validate() const {
  const std::size_t d = raw.size();
  if (expl.size() != d) throw DimensionMismatch(d, expl.size());
  if (pred.size() != d) throw DimensionMismatch(d, pred.size());
  for (const Embedding* v : {&raw, &expl, &pred}) {
    if (!std::all_of(v->begin(), v->end(), [](double x) { return std::isfinite(x); })) {
      throw DataError("feature bundle contains a non-finite entry");
    }
  }
}

void Verbalizer::validate() const {
  if (vulnerable_words.empty() || secure_words.empty()) {
    throw DataError("verbalizer label-word lists must be non-empty");
  }
  for (const auto& w : vulnerable_words) {
    if (std::find(secure_words.begin(), secure_words.end(), w) != secure_words.end()) {
      throw DataError("verbalizer word '" + w + "' maps to both classes");
    }
  }
}

std::optional<Verdict> Verbalizer::classify(std::string_view word) const {
  if (std::find(vulnerable_words.begin(), vulnerable_words.end(), word) != vulnerable_words.end()) {
    return Verdict::Vulnerable;
  }
  if (std::find(secure_words.begin(), secure_words.end(), word) != secure_words.end()) {
    return Verdict::Secure;
  }
  return std::nullopt;
}

void ClozeTemplate::validate() const {
  if (count_occurrences(text, "[X]") != 1 || count_occurrences(text, "[Z]") != 1) {
    throw DataError("cloze template needs exactly one [X] and one [Z]: " + text);
  }
}

std::string ClozeTemplate::apply(std::string_view input) const {
  validate();
  const auto pos = text.find("[X]");
  std::string out;
  out.reserve(text.size() + input.size());
  out.append(text, 0, pos);
  out.append(input);
  out.append(text, pos + 3);
  return out;
}

MockProvider::MockProvider(std::size_t d, std::uint64_t seed) : d_(d), seed_(seed) {
  if (d < 2) throw DataError("mock provider needs d >= 2");
}

Embedding MockProvider::embed(std::string_view text) const {
  Embedding out(d_, 0.0);
  if (text.empty()) return out;
  // Counter-based: entry i = f(hash(text), seed, i), independent of call order.
  const std::uint64_t key = mix_seed(fnv1a64(text), seed_);
  for (std::size_t i = 0; i < d_; ++i) {
    out[i] = 2.0 * to_unit(splitmix64(key + 0x9E3779B97F4A7C15ULL * (i + 1))) - 1.0;
  }
  return out;
}

struct RemoteProvider::Impl {
  std::size_t max_in_flight;
  mutable std::mutex mu;
  mutable std::condition_variable cv;
  mutable std::size_t in_flight = 0;
};

RemoteProvider::RemoteProvider(std::string endpoint, std::size_t d, std::size_t max_in_flight)
    : endpoint_(std::move(endpoint)), d_(d), impl_(std::make_unique<Impl>()) {
  if (d == 0) throw DataError("remote provider needs d >= 1");
  impl_->max_in_flight = std::max<std::size_t>(1, max_in_flight);
}

RemoteProvider::~RemoteProvider() = default;

Embedding RemoteProvider::embed(std::string_view text) const {
  {
    std::unique_lock lock(impl_->mu);
    impl_->cv.wait(lock, [&] { return impl_->in_flight < impl_->max_in_flight; });
    ++impl_->in_flight;
  }
  struct Release {
    const Impl& impl;
    ~Release() {
      std::lock_guard lock(impl.mu);
      --impl.in_flight;
      impl.cv.notify_one();
    }
  } release{*impl_};

  const nlohmann::json req{{"text", std::string(text)}};
  http::Response res;
  try {
    res = http::post_json(endpoint_, req.dump(), {}, std::chrono::seconds(60));
  } catch (const TransportError& e) {
    throw ProviderUnavailable(e.what());
  }
  if (!res.connected) throw ProviderUnavailable(endpoint_ + ": " + res.error);
  if (res.status != 200) {
    throw ProviderUnavailable(endpoint_ + " returned status " + std::to_string(res.status));
  }
  nlohmann::json body;
  try {
    body = nlohmann::json::parse(res.body);
  } catch (const nlohmann::json::exception& e) {
    throw ProviderUnavailable(std::string("unparseable embedding response: ") + e.what());
  }
  if (!body.contains("embedding") || !body["embedding"].is_array()) {
    throw ProviderUnavailable("response lacks an \"embedding\" array");
  }
  const auto& arr = body["embedding"];
  if (arr.size() != d_) throw DimensionMismatch(d_, arr.size());
  Embedding out;
  out.reserve(d_);
  for (const auto& v : arr) {
    if (!v.is_number()) throw ProviderUnavailable("embedding contains a non-number");
    out.push_back(v.get<double>());
  }
  return out;
}

std::unique_ptr<EmbeddingProvider> mock_provider(std::size_t d, std::uint64_t seed) {
  return std::make_unique<MockProvider>(d, seed);
}

std::unique_ptr<EmbeddingProvider> remote_provider(const std::string& endpoint, std::size_t d) {
  return std::make_unique<RemoteProvider>(endpoint, d);
}

namespace {

Embedding checked(Embedding v, std::size_t d) {
  if (v.size() != d) throw DimensionMismatch(d, v.size());
  return v;
}

}  // namespace

Embedding embed_raw(std::string_view source, const EmbeddingProvider& provider,
                    const ClozeTemplate& cloze) {
  return checked(provider.embed(cloze.apply(source)), provider.dim());
}

Embedding embed_expl(std::string_view explanation, const EmbeddingProvider& provider) {
  return checked(provider.embed(explanation), provider.dim());
}

Embedding embed_pred(Verdict prediction, std::size_t d) {
  if (d < 2) throw DataError("prediction embedding needs d >= 2");
  Embedding out(d, 0.0);
  out[prediction == Verdict::Vulnerable ? 0 : 1] = 1.0;
  return out;
}

Embedding embed_pred(const std::optional<Verdict>& prediction, std::size_t d) {
  if (prediction) return embed_pred(*prediction, d);
  if (d < 2) throw DataError("prediction embedding needs d >= 2");
  return Embedding(d, 0.0);
}

FeatureBundle build_bundle(std::string_view source, std::string_view explanation,
                           const std::optional<Verdict>& prediction,
                           const EmbeddingProvider& provider) {
  FeatureBundle b{embed_raw(source, provider), embed_expl(explanation, provider),
                  embed_pred(prediction, provider.dim())};
  b.validate();
  return b;
}

}  // namespace sael
