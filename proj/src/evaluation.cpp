#include "sael/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <future>
#include <sstream>

#include "sael/checkpoint.hpp"
#include "sael/errors.hpp"

namespace sael {

using nlohmann::json;

json report_to_json(const EvalReport& r) {
  json j = json::object();
  j["vuln_type"] = std::string(to_string(r.vuln_type));
  j["tp"] = r.metrics.tp;
  j["fp"] = r.metrics.fp;
  j["fn"] = r.metrics.fn;
  j["tn"] = r.metrics.tn;
  j["precision"] = r.metrics.precision;
  j["recall"] = r.metrics.recall;
  j["f1"] = r.metrics.f1;
  j["mode"] = std::string(to_string(r.mode));
  j["config"] = config_to_json(r.config);
  j["seed"] = r.seed;
  return j;
}

EvalReport report_from_json(const json& j) {
  try {
    EvalReport r;
    const auto vt = parse_vuln_type(j.at("vuln_type").get<std::string>());
    if (!vt) throw DataError("unknown vuln_type in report");
    r.vuln_type = *vt;
    r.metrics.tp = j.at("tp").get<std::size_t>();
    r.metrics.fp = j.at("fp").get<std::size_t>();
    r.metrics.fn = j.at("fn").get<std::size_t>();
    r.metrics.tn = j.at("tn").get<std::size_t>();
    r.metrics.precision = j.at("precision").get<double>();
    r.metrics.recall = j.at("recall").get<double>();
    r.metrics.f1 = j.at("f1").get<double>();
    const auto mode = parse_fusion_mode(j.at("mode").get<std::string>());
    if (!mode) throw DataError("unknown fusion mode in report");
    r.mode = *mode;
    r.config = config_from_json(j.at("config"));
    r.seed = j.at("seed").get<std::uint64_t>();
    return r;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed report: ") + e.what());
  }
}

std::string report_to_text(const EvalReport& r) {
  const auto& m = r.metrics;
  std::ostringstream out;
  char buf[128];
  auto row = [&](const char* key, const std::string& value) {
    std::snprintf(buf, sizeof buf, "%-12s %s\n", key, value.c_str());
    out << buf;
  };
  auto pct = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * v);
    return std::string(buf);
  };
  row("vuln_type", std::string(to_string(r.vuln_type)));
  row("mode", std::string(to_string(r.mode)));
  row("seed", std::to_string(r.seed));
  row("records", std::to_string(m.total()));
  row("tp", std::to_string(m.tp));
  row("fp", std::to_string(m.fp));
  row("fn", std::to_string(m.fn));
  row("tn", std::to_string(m.tn));
  row("precision", pct(m.precision));
  row("recall", pct(m.recall));
  row("f1", pct(m.f1));
  return out.str();
}

std::vector<int> predict_labels(const MoeModel& model, const LabeledBundles& data, FusionMode mode) {
  std::vector<int> out;
  out.reserve(data.size());
  for (const auto& b : data.bundles) out.push_back(predict(b, model, mode).label);
  return out;
}

EvalReport evaluate(const MoeModel& model, const LabeledBundles& data, VulnType vuln_type,
                    FusionMode mode) {
  EvalReport r;
  r.vuln_type = vuln_type;
  r.metrics = compute_metrics(predict_labels(model, data, mode), data.labels);
  r.mode = mode;
  r.config = model.config;
  r.seed = model.config.seed;
  return r;
}

FitResult train_model(const Dataset& data, const MoeConfig& config) {
  if (data.train.size() == 0) throw EmptyInput("training split is empty");
  const auto train = make_batches(data.train.bundles, data.train.labels, config.batch_size);
  const auto valid = data.valid.size() > 0
                         ? make_batches(data.valid.bundles, data.valid.labels, config.batch_size)
                         : std::vector<Batch>{};
  return fit(train, valid, config);
}

MoeConfig ablation_variant(const MoeConfig& base, const std::string& name) {
  MoeConfig c = base;
  c.use_mhsa = true;
  c.use_gate = true;
  c.active = {true, true, true};
  if (name == "R" || name == "w/o LLM") {
    c.active = {true, false, false};
  } else if (name == "E") {
    c.active = {false, true, false};
  } else if (name == "P") {
    c.active = {false, false, true};
  } else if (name == "w/o MOE") {
    c.use_mhsa = false;
    c.use_gate = false;
  } else if (name != "REP" && name != "Base") {
    throw DataError("unknown ablation variant '" + name + "'");
  }
  return c;
}

std::vector<AblationRow> run_ablation(const Dataset& data, const MoeConfig& base) {
  const std::vector<std::pair<std::string, std::string>> variants{
      {"feature", "R"},    {"feature", "E"},       {"feature", "P"},      {"feature", "REP"},
      {"module", "Base"},  {"module", "w/o MOE"},  {"module", "w/o LLM"},
  };
  std::vector<AblationRow> rows;
  for (const auto& [group, name] : variants) {
    const MoeConfig cfg = ablation_variant(base, name);
    const FitResult fr = train_model(data, cfg);
    rows.push_back({group, name, compute_metrics(predict_labels(fr.model, data.test), data.test.labels)});
  }
  return rows;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-8s %-8s %9s %9s %9s\n", "group", "variant", "precision", "recall", "f1");
  out << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-8s %-8s %9.4f %9.4f %9.4f\n", r.group.c_str(), r.name.c_str(),
                  r.metrics.precision, r.metrics.recall, r.metrics.f1);
    out << buf;
  }
  return out.str();
}

std::vector<SweepCell> sweep(const Dataset& data, const MoeConfig& base, std::span<const double> alphas,
                             std::span<const double> gammas) {
  if (alphas.empty() || gammas.empty()) throw EmptyInput("sweep grid");
  std::vector<std::future<SweepCell>> jobs;
  for (double a : alphas) {
    for (double g : gammas) {
      MoeConfig cfg = base;
      cfg.alpha = a;
      cfg.gamma = g;
      cfg.validate();
      jobs.push_back(std::async(std::launch::async, [&data, cfg] {
        const FitResult fr = train_model(data, cfg);
        const Metrics m = compute_metrics(predict_labels(fr.model, data.test), data.test.labels);
        return SweepCell{cfg.alpha, cfg.gamma, m.f1, fr.mean_gate_drift};
      }));
    }
  }
  std::vector<SweepCell> cells;
  cells.reserve(jobs.size());
  for (auto& j : jobs) cells.push_back(j.get());
  return cells;
}

std::string sweep_csv(const std::vector<SweepCell>& cells) {
  std::ostringstream out;
  out << "alpha,gamma,f1\n";
  char buf[96];
  for (const auto& c : cells) {
    std::snprintf(buf, sizeof buf, "%.6g,%.6g,%.6f\n", c.alpha, c.gamma, c.f1);
    out << buf;
  }
  return out.str();
}

}  // namespace sael
