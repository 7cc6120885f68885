// sael: smart-contract vulnerability detection pipeline.
//
//   sael ingest   --src DIR --labels FILE --vuln TYPE --out FILE
//   sael detect   --corpus FILE --cache DIR --out FILE [--stub FILE]
//   sael train    --corpus FILE --verdicts FILE --provider mock|remote --config FILE --out CKPT
//   sael eval     --ckpt CKPT --corpus FILE --verdicts FILE --out REPORT
//   sael sweep    --alphas LIST --gammas LIST (--corpus FILE --verdicts FILE | --synthetic N)
//   sael ablation (--corpus FILE --verdicts FILE | --synthetic N)
//
// Settings come from --config (key=value or JSON), then dedicated flags,
// then repeated --set key=value.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sael/cli.hpp"
#include "sael/errors.hpp"

namespace {

using namespace sael;
using namespace sael::cli;

struct Settings {
  std::string config_file;
  std::vector<std::string> sets;
  std::vector<std::pair<std::string, std::string>> flags;

  RunConfig resolve() const {
    RunConfig cfg;
    if (!config_file.empty()) cfg = load_run_config(config_file);
    for (const auto& [key, value] : flags) apply_setting(cfg, key, value);
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw DataError("--set expects key=value, got '" + kv + "'");
      apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
  }
};

// Flags that map one-to-one onto settings.
struct SettingFlags {
  Settings* settings;
  std::vector<std::pair<std::string, CLI::Option*>> opts;
  std::vector<std::pair<std::string, std::string>> values;

  SettingFlags(CLI::App* app, Settings* s, std::initializer_list<std::pair<const char*, const char*>> keys)
      : settings(s), values(keys.size()) {
    app->add_option("--config", s->config_file, "Config file (key=value lines or JSON)")
        ->check(CLI::ExistingFile);
    app->add_option("--set", s->sets, "Override one setting, key=value (repeatable)");
    std::size_t i = 0;
    for (const auto& [flag, key] : keys) {
      values[i].first = key;
      opts.emplace_back(key, app->add_option(flag, values[i].second, std::string("Setting ") + key));
      ++i;
    }
  }

  void collect() {
    for (std::size_t i = 0; i < opts.size(); ++i) {
      if (opts[i].second->count() > 0) settings->flags.emplace_back(values[i].first, values[i].second);
    }
  }
};

std::optional<SyntheticSpec> synthetic_spec(std::size_t n, std::uint64_t seed) {
  if (n == 0) return std::nullopt;
  SyntheticSpec spec;
  spec.n = n;
  spec.seed = seed;
  return spec;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Smart-contract vulnerability detection with LLM features and an adaptive mixture of experts"};
  app.require_subcommand(1);

  // ingest
  IngestArgs ingest;
  std::string ingest_vuln;
  auto* c_ingest = app.add_subcommand("ingest", "Extract labeled functions from .sol files");
  c_ingest->add_option("--src", ingest.src, "Directory of .sol files")->required()->check(CLI::ExistingDirectory);
  c_ingest->add_option("--labels", ingest.labels, "Label manifest (JSON lines of {id, label})")->required();
  c_ingest->add_option("--vuln", ingest_vuln, "Vulnerability type")->required();
  c_ingest->add_option("--out", ingest.out, "Corpus output file")->required();

  // detect
  DetectArgs detect;
  Settings detect_settings;
  std::string stub;
  auto* c_detect = app.add_subcommand("detect", "Query the LLM for every function (cached)");
  c_detect->add_option("--corpus", detect.corpus, "Corpus file")->required()->check(CLI::ExistingFile);
  c_detect->add_option("--cache", detect.cache, "Verdict cache directory")->required();
  c_detect->add_option("--out", detect.out, "Verdict output file")->required();
  c_detect->add_option("--stub", stub, "Scripted responses instead of a live endpoint")->check(CLI::ExistingFile);
  SettingFlags detect_flags(c_detect, &detect_settings,
                            {{"--endpoint", "llm_endpoint"}, {"--parallelism", "parallelism"},
                             {"--votes", "n_votes"}, {"--templates", "templates"}});

  // train
  TrainArgs train;
  Settings train_settings;
  auto* c_train = app.add_subcommand("train", "Train the mixture-of-experts model");
  c_train->add_option("--corpus", train.corpus, "Corpus file")->required()->check(CLI::ExistingFile);
  c_train->add_option("--verdicts", train.verdicts, "Verdict file")->required()->check(CLI::ExistingFile);
  c_train->add_option("--out", train.out, "Checkpoint output file")->required();
  SettingFlags train_flags(c_train, &train_settings,
                           {{"--provider", "provider"}, {"--provider-endpoint", "provider_endpoint"},
                            {"--seed", "seed"}, {"--epochs", "epochs"}});

  // eval
  EvalArgs eval;
  std::string eval_mode;
  auto* c_eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  c_eval->add_option("--ckpt", eval.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--corpus", eval.corpus, "Corpus file")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--verdicts", eval.verdicts, "Verdict file")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--out", eval.out, "Report file (.txt for plain text, JSON otherwise)")->required();
  c_eval->add_option("--mode", eval_mode, "Fusion mode: weighted_sum or selection");

  // sweep
  SweepArgs sw;
  Settings sweep_settings;
  std::string alphas, gammas, sweep_corpus, sweep_verdicts, sweep_out;
  std::size_t sweep_synthetic = 0;
  auto* c_sweep = app.add_subcommand("sweep", "Grid over alpha and gamma, CSV of test F1");
  c_sweep->add_option("--alphas", alphas, "Comma-separated alpha values")->required();
  c_sweep->add_option("--gammas", gammas, "Comma-separated gamma values")->required();
  c_sweep->add_option("--corpus", sweep_corpus, "Corpus file");
  c_sweep->add_option("--verdicts", sweep_verdicts, "Verdict file");
  c_sweep->add_option("--synthetic", sweep_synthetic, "Use N synthetic samples instead of a corpus");
  c_sweep->add_option("--out", sweep_out, "CSV output file (stdout when omitted)");
  SettingFlags sweep_flags(c_sweep, &sweep_settings, {{"--provider", "provider"}, {"--seed", "seed"}});

  // ablation
  AblationArgs ab;
  Settings ablation_settings;
  std::string ab_corpus, ab_verdicts, ab_out;
  std::size_t ab_synthetic = 0;
  auto* c_ablation = app.add_subcommand("ablation", "Feature and module ablation table");
  c_ablation->add_option("--corpus", ab_corpus, "Corpus file");
  c_ablation->add_option("--verdicts", ab_verdicts, "Verdict file");
  c_ablation->add_option("--synthetic", ab_synthetic, "Use N synthetic samples instead of a corpus");
  c_ablation->add_option("--out", ab_out, "Table output file (stdout when omitted)");
  SettingFlags ablation_flags(c_ablation, &ablation_settings, {{"--provider", "provider"}, {"--seed", "seed"}});

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*c_ingest) {
      const auto v = parse_vuln_type(ingest_vuln);
      if (!v) {
        std::cerr << "unknown vulnerability type '" << ingest_vuln << "'\n";
        return kUsage;
      }
      ingest.vuln = *v;
      return cmd_ingest(ingest, std::cout);
    }
    if (*c_detect) {
      detect_flags.collect();
      detect.config = detect_settings.resolve();
      if (!stub.empty()) detect.stub = stub;
      return cmd_detect(detect, std::cerr);
    }
    if (*c_train) {
      train_flags.collect();
      train.config = train_settings.resolve();
      return cmd_train(train, std::cout);
    }
    if (*c_eval) {
      if (!eval_mode.empty()) {
        eval.mode = parse_fusion_mode(eval_mode);
        if (!eval.mode) {
          std::cerr << "unknown fusion mode '" << eval_mode << "'\n";
          return kUsage;
        }
      }
      return cmd_eval(eval, std::cout);
    }
    if (*c_sweep) {
      sweep_flags.collect();
      sw.config = sweep_settings.resolve();
      sw.alphas = parse_number_list(alphas);
      sw.gammas = parse_number_list(gammas);
      if (!sweep_corpus.empty()) sw.data.corpus = sweep_corpus;
      if (!sweep_verdicts.empty()) sw.data.verdicts = sweep_verdicts;
      sw.data.synthetic = synthetic_spec(sweep_synthetic, sw.config.moe.seed);
      if (!sweep_out.empty()) sw.out = sweep_out;
      return cmd_sweep(sw, std::cout);
    }
    if (*c_ablation) {
      ablation_flags.collect();
      ab.config = ablation_settings.resolve();
      if (!ab_corpus.empty()) ab.data.corpus = ab_corpus;
      if (!ab_verdicts.empty()) ab.data.verdicts = ab_verdicts;
      ab.data.synthetic = synthetic_spec(ab_synthetic, ab.config.moe.seed);
      if (!ab_out.empty()) ab.out = ab_out;
      return cmd_ablation(ab, std::cout);
    }
  } catch (const sael::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDataFailure;
  }
  return kUsage;
}
