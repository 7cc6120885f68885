#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sael {

// Root of every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Bad or inconsistent input data (corpus files, manifests, caches, checkpoints).
class DataError : public Error {
public:
  using Error::Error;
};

// Shape, range or domain violations in the numeric core and the MoE.
class NumericError : public Error {
public:
  using Error::Error;
};

// Failures talking to an LLM or embedding endpoint.
class TransportError : public Error {
public:
  using Error::Error;
};

// ---- contract_corpus ----

class UnbalancedBraces : public DataError {
public:
  UnbalancedBraces(std::size_t offset, std::size_t line)
      : DataError("unbalanced braces at offset " + std::to_string(offset) + " (line " +
                  std::to_string(line) + ")"),
        offset_(offset), line_(line) {}
  std::size_t offset() const noexcept { return offset_; }
  std::size_t line() const noexcept { return line_; }

private:
  std::size_t offset_;
  std::size_t line_;
};

class MalformedRecord : public DataError {
public:
  MalformedRecord(std::size_t line, const std::string& why)
      : DataError("malformed record on line " + std::to_string(line) + ": " + why), line_(line) {}
  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

class DuplicateId : public DataError {
public:
  DuplicateId(const std::string& id, std::size_t line)
      : DataError("duplicate id '" + id + "' on line " + std::to_string(line)), id_(id), line_(line) {}
  const std::string& id() const noexcept { return id_; }
  std::size_t line() const noexcept { return line_; }

private:
  std::string id_;
  std::size_t line_;
};

class MissingLabel : public DataError {
public:
  explicit MissingLabel(const std::string& what) : DataError("missing label: " + what) {}
};

class AlreadySplit : public DataError {
public:
  AlreadySplit() : DataError("corpus already has split assignments") {}
};

// ---- prompt_engine ----

class CodeTooLong : public DataError {
public:
  CodeTooLong(std::size_t estimated, std::size_t budget)
      : DataError("prompt too long: ~" + std::to_string(estimated) + " tokens, budget " +
                  std::to_string(budget)),
        estimated_(estimated), budget_(budget) {}
  std::size_t estimated() const noexcept { return estimated_; }
  std::size_t budget() const noexcept { return budget_; }

private:
  std::size_t estimated_;
  std::size_t budget_;
};

// ---- llm_client ----

class EndpointRejected : public TransportError {
public:
  EndpointRejected(int status, const std::string& body)
      : TransportError("endpoint rejected request with status " + std::to_string(status) + ": " +
                       body),
        status_(status), body_(body) {}
  int status() const noexcept { return status_; }
  const std::string& body() const noexcept { return body_; }

private:
  int status_;
  std::string body_;
};

class BudgetExceeded : public DataError {
public:
  BudgetExceeded(std::size_t estimated, std::size_t budget)
      : DataError("prompt exceeds input budget: ~" + std::to_string(estimated) + " > " +
                  std::to_string(budget)) {}
};

class AllAbstained : public DataError {
public:
  AllAbstained() : DataError("no LLM response could be parsed into a verdict") {}
};

class CacheCorrupt : public DataError {
public:
  CacheCorrupt(const std::string& path, std::size_t line)
      : DataError("corrupt cache file " + path + " at line " + std::to_string(line)), path_(path) {}
  const std::string& path() const noexcept { return path_; }

private:
  std::string path_;
};

// ---- feature_providers ----

class ProviderUnavailable : public TransportError {
public:
  explicit ProviderUnavailable(const std::string& why)
      : TransportError("embedding provider unavailable: " + why) {}
};

class DimensionMismatch : public DataError {
public:
  DimensionMismatch(std::size_t expected, std::size_t got)
      : DataError("dimension mismatch: expected " + std::to_string(expected) + ", got " +
                  std::to_string(got)),
        expected_(expected), got_(got) {}
  std::size_t expected() const noexcept { return expected_; }
  std::size_t got() const noexcept { return got_; }

private:
  std::size_t expected_;
  std::size_t got_;
};

// ---- numeric_core / adaptive_moe / evaluation ----

class ShapeMismatch : public NumericError {
public:
  explicit ShapeMismatch(const std::string& what) : NumericError("shape mismatch: " + what) {}
};

class AllMasked : public NumericError {
public:
  AllMasked() : NumericError("softmax input has no finite entry") {}
};

class KTooLarge : public NumericError {
public:
  KTooLarge(std::size_t k, std::size_t n)
      : NumericError("top-k with k=" + std::to_string(k) + " over " + std::to_string(n) +
                     " entries") {}
};

class NotASimplex : public NumericError {
public:
  explicit NotASimplex(const std::string& what) : NumericError("not a probability vector: " + what) {}
};

class TargetOutOfRange : public NumericError {
public:
  TargetOutOfRange(std::size_t target, std::size_t classes)
      : NumericError("target " + std::to_string(target) + " out of range for " +
                     std::to_string(classes) + " classes") {}
};

class EmptyBatch : public NumericError {
public:
  EmptyBatch() : NumericError("empty batch") {}
};

class NonFiniteLoss : public NumericError {
public:
  explicit NonFiniteLoss(const std::string& context)
      : NumericError("non-finite loss" + (context.empty() ? std::string() : " (" + context + ")")) {}
};

class LengthMismatch : public DataError {
public:
  LengthMismatch(std::size_t a, std::size_t b)
      : DataError("length mismatch: " + std::to_string(a) + " vs " + std::to_string(b)) {}
};

class EmptyInput : public DataError {
public:
  explicit EmptyInput(const std::string& what) : DataError("empty input: " + what) {}
};

}  // namespace sael
