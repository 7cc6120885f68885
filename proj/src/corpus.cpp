#include "sael/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_set>

#include "json.hpp"
#include "sael/errors.hpp"
#include "sael/rng.hpp"

namespace sael {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

bool braces_balanced(std::string_view source) {
  try {
    // A function source is balanced iff wrapping it in a contract extracts cleanly.
    const std::string wrapped = "contract __Check {\n" + std::string(source) + "\n}";
    extract_functions(wrapped);
    return true;
  } catch (const UnbalancedBraces&) {
    return false;
  }
}

}  // namespace

void FunctionRecord::validate() const {
  if (id.empty()) throw DataError("record id is empty");
  if (source.empty()) throw DataError("record '" + id + "' has empty source");
  if (label != 0 && label != 1) throw DataError("record '" + id + "' label must be 0 or 1");
  if (!braces_balanced(source)) throw DataError("record '" + id + "' source has unbalanced braces");
}

std::vector<const FunctionRecord*> Corpus::subset(Split s) const {
  std::vector<const FunctionRecord*> out;
  for (const auto& r : records) {
    if (r.split == s) out.push_back(&r);
  }
  return out;
}

std::size_t Corpus::count(Split s, int label) const {
  return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [&](const auto& r) {
    return r.split == s && r.label == label;
  }));
}

bool Corpus::is_split() const {
  return std::any_of(records.begin(), records.end(),
                     [](const auto& r) { return r.split != Split::Unassigned; });
}

std::string serialize_record(const FunctionRecord& r) {
  // Field order is fixed so that output files are byte-stable.
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  j["id"] = r.id;
  j["contract"] = r.contract_name;
  j["function"] = r.function_name;
  j["source"] = r.source;
  j["vuln_type"] = std::string(to_string(r.vuln_type));
  j["label"] = r.label;
  j["split"] = std::string(to_string(r.split));
  return j.dump();
}

std::string serialize_corpus(const Corpus& c) {
  std::string out;
  for (const auto& r : c.records) {
    out += serialize_record(r);
    out += '\n';
  }
  return out;
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const fs::path& path, std::string_view text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

void write_corpus(const Corpus& c, const fs::path& path) { write_text_file(path, serialize_corpus(c)); }

namespace {

template <class Fn>
void for_each_line(std::string_view text, Fn&& fn) {
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    const bool blank = std::all_of(line.begin(), line.end(),
                                   [](char c) { return std::isspace(static_cast<unsigned char>(c)); });
    if (!blank) fn(line_no, line);
    if (end == text.size()) break;
    start = end + 1;
  }
}

std::string require_string(const json& j, const char* key, std::size_t line) {
  if (!j.contains(key) || !j[key].is_string()) {
    throw MalformedRecord(line, std::string("field \"") + key + "\" missing or not a string");
  }
  return j[key].get<std::string>();
}

int require_label(const json& j, std::size_t line) {
  if (!j.contains("label")) throw MalformedRecord(line, "field \"label\" missing");
  const auto& v = j["label"];
  if (v.is_number_integer() && (v.get<long long>() == 0 || v.get<long long>() == 1)) {
    return static_cast<int>(v.get<long long>());
  }
  if (v.is_boolean()) return v.get<bool>() ? 1 : 0;
  throw MalformedRecord(line, "label must be 0 or 1");
}

}  // namespace

Corpus parse_corpus(std::string_view text, VulnType vuln_type) {
  Corpus c;
  c.vuln_type = vuln_type;
  std::map<std::string, std::size_t> seen;
  for_each_line(text, [&](std::size_t line, std::string_view content) {
    json j;
    try {
      j = json::parse(content);
    } catch (const json::exception& e) {
      throw MalformedRecord(line, e.what());
    }
    if (!j.is_object()) throw MalformedRecord(line, "not a JSON object");

    FunctionRecord r;
    r.id = require_string(j, "id", line);
    r.contract_name = require_string(j, "contract", line);
    r.function_name = require_string(j, "function", line);
    r.source = require_string(j, "source", line);
    const auto vt = parse_vuln_type(require_string(j, "vuln_type", line));
    if (!vt) throw MalformedRecord(line, "unknown vuln_type");
    if (*vt != vuln_type) {
      throw MalformedRecord(line, "vuln_type '" + std::string(to_string(*vt)) +
                                      "' does not match corpus type '" +
                                      std::string(to_string(vuln_type)) + "'");
    }
    r.vuln_type = *vt;
    r.label = require_label(j, line);
    const auto sp = parse_split(require_string(j, "split", line));
    if (!sp) throw MalformedRecord(line, "unknown split");
    r.split = *sp;
    try {
      r.validate();
    } catch (const DataError& e) {
      throw MalformedRecord(line, e.what());
    }
    if (seen.count(r.id)) throw DuplicateId(r.id, line);
    seen.emplace(r.id, line);
    c.records.push_back(std::move(r));
  });
  return c;
}

namespace {

std::map<std::string, int> load_manifest(const fs::path& manifest) {
  if (!fs::exists(manifest)) throw MissingLabel("label manifest not found: " + manifest.string());
  const std::string text = read_text_file(manifest);
  std::map<std::string, int> labels;
  for_each_line(text, [&](std::size_t line, std::string_view content) {
    json j;
    try {
      j = json::parse(content);
    } catch (const json::exception& e) {
      throw MalformedRecord(line, std::string("manifest: ") + e.what());
    }
    if (!j.is_object()) throw MalformedRecord(line, "manifest entry is not a JSON object");
    const std::string id = require_string(j, "id", line);
    const int label = require_label(j, line);
    if (!labels.emplace(id, label).second) throw DuplicateId(id, line);
  });
  return labels;
}

}  // namespace

Corpus ingest_directory(const fs::path& dir, const fs::path& manifest, VulnType vuln_type) {
  const auto labels = load_manifest(manifest);

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".sol") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  Corpus c;
  c.vuln_type = vuln_type;
  for (const auto& file : files) {
    std::vector<ExtractedFunction> fns;
    try {
      fns = extract_functions(read_text_file(file));
    } catch (const UnbalancedBraces& e) {
      throw DataError(file.string() + ": " + e.what());
    }
    std::map<std::string, int> seen;
    for (auto& f : fns) {
      std::string id = file.stem().string() + ":" + f.contract_name + "." + f.function_name;
      const int n = ++seen[id];
      if (n > 1) id += "#" + std::to_string(n);
      const auto it = labels.find(id);
      if (it == labels.end()) throw MissingLabel("no manifest entry for '" + id + "' (" + file.string() + ")");
      c.records.push_back({id, std::move(f.contract_name), std::move(f.function_name),
                           std::move(f.source), vuln_type, it->second, Split::Unassigned});
    }
  }
  return c;
}

Corpus load_corpus(const fs::path& path, VulnType vuln_type,
                   const std::optional<fs::path>& manifest) {
  if (fs::is_directory(path)) {
    return ingest_directory(path, manifest.value_or(path / "labels.jsonl"), vuln_type);
  }
  return parse_corpus(read_text_file(path), vuln_type);
}

Corpus split_corpus(Corpus corpus, std::uint64_t seed) {
  if (corpus.is_split()) throw AlreadySplit();
  for (int label : {1, 0}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < corpus.records.size(); ++i) {
      if (corpus.records[i].label == label) idx.push_back(i);
    }
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(label) + 0x5117));
    rng.shuffle(idx);
    const std::size_t n = idx.size();
    const auto fifth = static_cast<std::size_t>(std::lround(static_cast<double>(n) / 5.0));
    for (std::size_t k = 0; k < n; ++k) {
      Split s = Split::Train;
      if (k < fifth) s = Split::Valid;
      else if (k < 2 * fifth) s = Split::Test;
      corpus.records[idx[k]].split = s;
    }
  }
  return corpus;
}

}  // namespace sael
