#include <algorithm>
#include <cctype>
#include <string>
#include <vector>

#include "sael/corpus.hpp"
#include "sael/errors.hpp"

namespace sael {

namespace {

enum class TokKind { Ident, Punct, Literal };

struct Token {
  TokKind kind;
  std::string_view text;
  std::size_t offset;
};

bool ident_start(char c) {
  return std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == '$';
}

bool ident_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '$';
}

// Comment- and string-aware tokenizer. Comments vanish; string literals
// become a single Literal token so their braces never count.
std::vector<Token> tokenize(std::string_view src) {
  std::vector<Token> out;
  std::size_t i = 0;
  const std::size_t n = src.size();
  while (i < n) {
    const char c = src[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
    } else if (c == '/' && i + 1 < n && src[i + 1] == '/') {
      while (i < n && src[i] != '\n') ++i;
    } else if (c == '/' && i + 1 < n && src[i + 1] == '*') {
      const auto end = src.find("*/", i + 2);
      i = end == std::string_view::npos ? n : end + 2;
    } else if (c == '"' || c == '\'') {
      const std::size_t start = i++;
      while (i < n && src[i] != c && src[i] != '\n') {
        if (src[i] == '\\' && i + 1 < n) ++i;
        ++i;
      }
      if (i < n && src[i] == c) ++i;
      out.push_back({TokKind::Literal, src.substr(start, i - start), start});
    } else if (ident_start(c)) {
      const std::size_t start = i;
      while (i < n && ident_char(src[i])) ++i;
      out.push_back({TokKind::Ident, src.substr(start, i - start), start});
    } else if (std::isdigit(static_cast<unsigned char>(c))) {
      const std::size_t start = i;
      while (i < n && (ident_char(src[i]) || src[i] == '.')) ++i;
      out.push_back({TokKind::Literal, src.substr(start, i - start), start});
    } else {
      out.push_back({TokKind::Punct, src.substr(i, 1), i});
      ++i;
    }
  }
  return out;
}

std::size_t line_of(std::string_view src, std::size_t offset) {
  return 1 + static_cast<std::size_t>(std::count(src.begin(), src.begin() + offset, '\n'));
}

bool is(const Token& t, std::string_view s) { return t.text == s; }

class Extractor {
public:
  explicit Extractor(std::string_view src) : src_(src), toks_(tokenize(src)) {}

  std::vector<ExtractedFunction> run() {
    int depth = 0;
    std::vector<std::size_t> open;
    while (pos_ < toks_.size()) {
      const Token& t = toks_[pos_];
      if (depth == 0 && t.kind == TokKind::Ident && is_container_keyword(t.text) &&
          !(pos_ > 0 && is(toks_[pos_ - 1], "."))) {
        container();
        continue;
      }
      if (is(t, "{")) {
        ++depth;
        open.push_back(t.offset);
      } else if (is(t, "}")) {
        if (depth == 0) unbalanced(t.offset);
        --depth;
        open.pop_back();
      }
      ++pos_;
    }
    if (depth != 0) unbalanced(open.back());
    return std::move(out_);
  }

private:
  static bool is_container_keyword(std::string_view s) {
    return s == "contract" || s == "library" || s == "interface";
  }

  [[noreturn]] void unbalanced(std::size_t offset) const {
    throw UnbalancedBraces(offset, line_of(src_, offset));
  }

  // Parses `contract Name [is ...] { ... }` starting at the keyword.
  void container() {
    ++pos_;
    std::string name;
    if (pos_ < toks_.size() && toks_[pos_].kind == TokKind::Ident) name = toks_[pos_].text;
    // Skip the inheritance list up to the body's opening brace.
    int parens = 0;
    while (pos_ < toks_.size()) {
      const Token& t = toks_[pos_];
      if (is(t, "(")) ++parens;
      else if (is(t, ")")) --parens;
      else if (parens == 0 && is(t, ";")) {  // forward-declaration-like junk
        ++pos_;
        return;
      } else if (parens == 0 && is(t, "{")) break;
      else if (is(t, "}")) unbalanced(t.offset);
      ++pos_;
    }
    if (pos_ >= toks_.size()) return;

    const std::size_t body_open = toks_[pos_].offset;
    ++pos_;
    int depth = 1;
    std::vector<std::size_t> open{body_open};
    while (pos_ < toks_.size()) {
      const Token& t = toks_[pos_];
      if (depth == 1 && t.kind == TokKind::Ident && member(name)) continue;
      if (is(t, "{")) {
        ++depth;
        open.push_back(t.offset);
      } else if (is(t, "}")) {
        --depth;
        open.pop_back();
        if (depth == 0) {
          ++pos_;
          return;
        }
      }
      ++pos_;
    }
    unbalanced(open.back());
  }

  // Tries to consume a function-like member at the current token. Returns
  // true when tokens were consumed.
  bool member(const std::string& contract) {
    const Token& kw = toks_[pos_];
    const bool has_next = pos_ + 1 < toks_.size();
    std::string fname;
    if (is(kw, "function")) {
      if (!has_next) return false;
      const Token& next = toks_[pos_ + 1];
      if (next.kind == TokKind::Ident) fname = next.text;
      else if (is(next, "(")) fname = "fallback";  // pre-0.6 unnamed fallback
      else return false;
    } else if (is(kw, "constructor") || is(kw, "fallback") || is(kw, "receive")) {
      if (!has_next || !is(toks_[pos_ + 1], "(")) return false;
      fname = kw.text;
    } else {
      return false;
    }

    // Find the body: first '{' or ';' outside parentheses.
    std::size_t j = pos_ + 1;
    int parens = 0;
    for (; j < toks_.size(); ++j) {
      const Token& t = toks_[j];
      if (is(t, "(")) ++parens;
      else if (is(t, ")")) --parens;
      else if (parens == 0 && (is(t, "{") || is(t, ";"))) break;
      else if (is(t, "}")) unbalanced(t.offset);
    }
    if (j >= toks_.size()) unbalanced(kw.offset);
    if (is(toks_[j], ";")) {
      pos_ = j + 1;
      return true;
    }

    const std::size_t open_at = toks_[j].offset;
    int depth = 0;
    for (; j < toks_.size(); ++j) {
      if (is(toks_[j], "{")) ++depth;
      else if (is(toks_[j], "}") && --depth == 0) break;
    }
    if (j >= toks_.size()) unbalanced(open_at);

    const std::size_t end = toks_[j].offset + 1;
    out_.push_back({contract, fname, std::string(src_.substr(kw.offset, end - kw.offset)),
                    kw.offset, line_of(src_, kw.offset)});
    pos_ = j + 1;
    return true;
  }

  std::string_view src_;
  std::vector<Token> toks_;
  std::size_t pos_ = 0;
  std::vector<ExtractedFunction> out_;
};

}  // namespace

std::vector<ExtractedFunction> extract_functions(std::string_view solidity_source) {
  return Extractor(solidity_source).run();
}

}  // namespace sael
