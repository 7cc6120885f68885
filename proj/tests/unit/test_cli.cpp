#include <cstdlib>
#include <sstream>

#include <sys/wait.h>

#include "doctest.h"
#include "sael/checkpoint.hpp"
#include "sael/cli.hpp"
#include "sael/errors.hpp"
#include "support/oracles.hpp"

using namespace sael;
using namespace sael::cli;

namespace {

const std::filesystem::path kFixtures(SAEL_FIXTURES);

const std::string kV = "Ether leaves before the balance is cleared.\nVERDICT: VULNERABLE";
const std::string kS = "State is updated first.\nVERDICT: SECURE";

int run_cli(const std::string& args) {
  const std::string cmd = std::string(SAEL_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::filesystem::path ingest_mini(const oracle::TempDir& dir) {
  std::ostringstream log;
  cmd_ingest(IngestArgs{kFixtures / "mini", kFixtures / "mini" / "labels.jsonl", VulnType::Reentrancy,
                        dir / "corpus.jsonl"},
             log);
  return dir / "corpus.jsonl";
}

RunConfig small_run() {
  RunConfig cfg;
  for (const auto& [k, v] : std::vector<std::pair<std::string, std::string>>{
           {"d", "16"}, {"d_gate", "16"}, {"epochs", "5"}, {"batch_size", "4"}, {"parallelism", "1"}}) {
    apply_setting(cfg, k, v);
  }
  return cfg;
}

}  // namespace

TEST_SUITE("configuration") {
  TEST_CASE("key=value text with comments") {
    RunConfig cfg;
    apply_config_text(cfg,
                      "# desk profile\n"
                      "alpha = 0.4\n"
                      "gamma=1\n"
                      "active = 1,0,1\n"
                      "mode = selection\n"
                      "n_votes = 3\n"
                      "provider = mock\n");
    CHECK(cfg.moe.alpha == 0.4);
    CHECK(cfg.moe.gamma == 1.0);
    CHECK(cfg.moe.active == std::array<bool, 3>{true, false, true});
    CHECK(cfg.mode == FusionMode::Selection);
    CHECK(cfg.inference.n_votes == 3);
    CHECK_NOTHROW(cfg.validate());
  }

  TEST_CASE("JSON object") {
    RunConfig cfg;
    apply_config_text(cfg, R"({"d": 16, "eta": 0.01, "use_mhsa": false, "llm_endpoint": "http://x/v1"})");
    CHECK(cfg.moe.d == 16);
    CHECK(cfg.moe.eta == 0.01);
    CHECK_FALSE(cfg.moe.use_mhsa);
    CHECK(cfg.llm_endpoint == "http://x/v1");
  }

  TEST_CASE("unknown keys and bad values are data errors") {
    RunConfig cfg;
    CHECK_THROWS_AS(apply_setting(cfg, "alhpa", "0.5"), DataError);
    CHECK_THROWS_AS(apply_setting(cfg, "epochs", "ten"), DataError);
    CHECK_THROWS_AS(apply_setting(cfg, "active", "1,1"), DataError);
    CHECK_THROWS_AS(apply_setting(cfg, "mode", "vote"), DataError);
    cfg.provider = "remote";
    CHECK_THROWS_AS(cfg.validate(), DataError);
  }

  TEST_CASE("environment fills only unset values") {
    ::setenv("SAEL_LLM_ENDPOINT", "http://env/v1", 1);
    ::setenv("SAEL_PARALLELISM", "7", 1);
    RunConfig a;
    apply_environment(a);
    CHECK(a.llm_endpoint == "http://env/v1");
    CHECK(a.parallelism == 7u);
    RunConfig b;
    b.llm_endpoint = "http://explicit/v1";
    b.parallelism = 2;
    apply_environment(b);
    CHECK(b.llm_endpoint == "http://explicit/v1");
    CHECK(b.parallelism == 2u);
    ::unsetenv("SAEL_LLM_ENDPOINT");
    ::unsetenv("SAEL_PARALLELISM");
  }

  TEST_CASE("number lists") {
    CHECK(parse_number_list("0,0.5, 1") == std::vector<double>{0.0, 0.5, 1.0});
    CHECK(parse_number_list("1e-2") == std::vector<double>{0.01});
    CHECK_THROWS_AS(parse_number_list("0.1,,x"), DataError);
  }

  TEST_CASE("exit code mapping") {
    CHECK(exit_code_for(ProviderUnavailable("x")) == kTransportFailure);
    CHECK(exit_code_for(EndpointRejected(403, "")) == kTransportFailure);
    CHECK(exit_code_for(MissingLabel("x")) == kDataFailure);
    CHECK(exit_code_for(NonFiniteLoss("")) == kDataFailure);
    CHECK(exit_code_for(std::runtime_error("x")) == kDataFailure);
  }
}

TEST_SUITE("verdict rows") {
  TEST_CASE("round-trip, abstain rows and duplicates") {
    VerdictRow row;
    row.id = "A:A.f";
    row.verdict = aggregate_votes({kV, kV, kS});
    row.abstentions = 0;
    const auto back = parse_verdict_row(serialize_verdict_row(row));
    CHECK(back.id == row.id);
    REQUIRE(back.verdict.has_value());
    CHECK(back.verdict->same_decision(*row.verdict));

    VerdictRow failed{"A:A.g", std::nullopt, 5, "no LLM response could be parsed"};
    const auto line = serialize_verdict_row(failed);
    CHECK(line.find("\"prediction\":\"abstain\"") != std::string::npos);
    const auto fb = parse_verdict_row(line);
    CHECK_FALSE(fb.verdict.has_value());
    CHECK(fb.abstentions == 5);

    oracle::TempDir dir("rows");
    write_text_file(dir / "v.jsonl", serialize_verdict_row(row) + "\n" + line + "\n" + serialize_verdict_row(row) + "\n");
    CHECK_THROWS_AS(load_verdicts(dir / "v.jsonl"), DuplicateId);
    write_text_file(dir / "w.jsonl", serialize_verdict_row(row) + "\n{oops\n");
    CHECK_THROWS_AS(load_verdicts(dir / "w.jsonl"), MalformedRecord);
  }
}

TEST_SUITE("commands") {
  TEST_CASE("ingest of the mini fixture gives three records, byte-stable") {
    oracle::TempDir a("ingest"), b("ingest");
    const auto pa = ingest_mini(a), pb = ingest_mini(b);
    const auto c = read_corpus_file(pa);
    CHECK(c.size() == 3);
    CHECK(c.records[2].id == "Beta:Beta.pay");
    CHECK(read_text_file(pa) == read_text_file(pb));
  }

  TEST_CASE("detect with an all-secure stub, then a warm cache makes no requests") {
    oracle::TempDir dir("detect");
    const auto corpus = ingest_mini(dir);
    std::ostringstream log;
    auto cold = std::make_shared<ScriptedTransport>(std::vector<std::string>{kS});
    DetectArgs args{corpus, dir / "cache", dir / "verdicts.jsonl", std::nullopt, small_run()};
    CHECK(cmd_detect(args, log, cold) == kOk);
    CHECK(cold->calls() == 15);
    const auto rows = load_verdicts(dir / "verdicts.jsonl");
    REQUIRE(rows.size() == 3);
    for (const auto& [id, row] : rows) {
      REQUIRE(row.verdict.has_value());
      CHECK(row.verdict->prediction == Verdict::Secure);
      CHECK(row.verdict->votes == VoteTally{0, 5});
    }
    const auto first = read_text_file(dir / "verdicts.jsonl");

    auto warm = std::make_shared<ScriptedTransport>(std::vector<std::string>{kV});
    CHECK(cmd_detect(args, log, warm) == kOk);
    CHECK(warm->calls() == 0);
    CHECK(read_text_file(dir / "verdicts.jsonl") == first);
  }

  TEST_CASE("detect majority [V, V, S, V, S]") {
    oracle::TempDir dir("detect");
    const auto corpus = ingest_mini(dir);
    std::ostringstream log;
    auto t = std::make_shared<ScriptedTransport>(std::vector<std::string>{kV, kV, kS, kV, kS});
    DetectArgs args{corpus, dir / "cache", dir / "verdicts.jsonl", std::nullopt, small_run()};
    CHECK(cmd_detect(args, log, t) == kOk);
    for (const auto& [id, row] : load_verdicts(dir / "verdicts.jsonl")) {
      REQUIRE(row.verdict.has_value());
      CHECK(row.verdict->prediction == Verdict::Vulnerable);
      CHECK(row.verdict->votes == VoteTally{3, 2});
      CHECK(row.verdict->explanation == "Ether leaves before the balance is cleared.");
    }
  }

  TEST_CASE("all-abstaining stub writes abstain rows and reports a data failure") {
    oracle::TempDir dir("detect");
    const auto corpus = ingest_mini(dir);
    std::ostringstream log;
    auto t = std::make_shared<ScriptedTransport>(std::vector<std::string>{"no idea"});
    DetectArgs args{corpus, dir / "cache", dir / "verdicts.jsonl", std::nullopt, small_run()};
    CHECK(cmd_detect(args, log, t) == kDataFailure);
    for (const auto& [id, row] : load_verdicts(dir / "verdicts.jsonl")) CHECK_FALSE(row.verdict.has_value());
  }

  TEST_CASE("train with zero epochs then eval writes a report of the test split") {
    oracle::TempDir dir("train");
    const auto corpus = ingest_mini(dir);
    std::ostringstream log;
    auto t = std::make_shared<ScriptedTransport>(std::vector<std::string>{kV, kS});
    RunConfig cfg = small_run();
    cmd_detect(DetectArgs{corpus, dir / "cache", dir / "v.jsonl", std::nullopt, cfg}, log, t);

    cfg.moe.epochs = 0;
    CHECK(cmd_train(TrainArgs{corpus, dir / "v.jsonl", dir / "m.json", cfg}, log) == kOk);
    const auto ck = load_checkpoint(dir / "m.json");
    CHECK(ck.model == MoeModel::initialized(cfg.moe));
    CHECK(ck.metadata["best_epoch"] == 0);

    // Three records: round(1/5) = 0 per class, so nothing reaches the test split.
    CHECK_THROWS_AS(cmd_eval(EvalArgs{dir / "m.json", corpus, dir / "v.jsonl", dir / "r.json", std::nullopt}, log),
                    EmptyInput);
  }

  TEST_CASE("train refuses a verdict file that misses a record") {
    oracle::TempDir dir("train");
    const auto corpus = ingest_mini(dir);
    VerdictRow row{"Alpha:Alpha.add", aggregate_votes({kS}), 0, ""};
    write_text_file(dir / "v.jsonl", serialize_verdict_row(row) + "\n");
    std::ostringstream log;
    CHECK_THROWS_AS(cmd_train(TrainArgs{corpus, dir / "v.jsonl", dir / "m.json", small_run()}, log), DataError);
  }

  TEST_CASE("sweep over a 3x3 grid writes nine CSV rows") {
    oracle::TempDir dir("sweep");
    SweepArgs args;
    SyntheticSpec spec;
    spec.n = 150;
    args.data.synthetic = spec;
    args.alphas = {0.0, 0.5, 1.0};
    args.gammas = {0.0, 0.1, 1.0};
    args.out = dir / "grid.csv";
    args.config = small_run();
    args.config.moe.epochs = 2;
    std::ostringstream log;
    CHECK(cmd_sweep(args, log) == kOk);
    const auto csv = read_text_file(dir / "grid.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 10);
    CHECK(csv.find("\n1,1,") != std::string::npos);
  }
}

TEST_SUITE("executable") {
  TEST_CASE("usage errors exit 1") {
    CHECK(run_cli("") == kUsage);
    CHECK(run_cli("bogus") == kUsage);
    CHECK(run_cli("ingest --src /nonexistent --labels x --vuln reentrancy --out y") == kUsage);
    CHECK(run_cli("ingest --src " + (kFixtures / "mini").string() + " --labels x --vuln sideways --out y") == kUsage);
  }

  TEST_CASE("data errors exit 2") {
    oracle::TempDir dir("exe");
    write_text_file(dir / "labels.jsonl", "{\"id\": \"Alpha:Alpha.add\", \"label\": 0}\n");
    CHECK(run_cli("ingest --src " + (kFixtures / "mini").string() + " --labels " + (dir / "labels.jsonl").string() +
                  " --vuln reentrancy --out " + (dir / "c.jsonl").string()) == kDataFailure);
  }

  TEST_CASE("an unreachable endpoint exits 3") {
    oracle::TempDir dir("exe");
    const auto corpus = ingest_mini(dir);
    CHECK(run_cli("detect --corpus " + corpus.string() + " --cache " + (dir / "cache").string() + " --out " +
                  (dir / "v.jsonl").string() +
                  " --endpoint http://127.0.0.1:1/v1 --votes 1 --set max_retries=0") == kTransportFailure);
  }

  TEST_CASE("ingest through the executable succeeds") {
    oracle::TempDir dir("exe");
    CHECK(run_cli("ingest --src " + (kFixtures / "mini").string() + " --labels " +
                  (kFixtures / "mini" / "labels.jsonl").string() + " --vuln reentrancy --out " +
                  (dir / "c.jsonl").string()) == kOk);
    CHECK(read_corpus_file(dir / "c.jsonl").size() == 3);
  }
}
