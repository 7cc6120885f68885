#include <cmath>
#include <limits>
#include <utility>

#include "doctest.h"
#include "sael/checkpoint.hpp"
#include "sael/errors.hpp"
#include "sael/evaluation.hpp"
#include "sael/moe.hpp"
#include "sael/synthetic.hpp"
#include "support/oracles.hpp"

using namespace sael;

namespace {

MoeConfig small_config(std::uint64_t seed = 1) {
  MoeConfig c;
  c.d = 8;
  c.n_heads = 2;
  c.d_gate = 8;
  c.seed = seed;
  return c;
}

FeatureBundle enhanced(const FeatureBundle& b, const MoeModel& m) {
  const auto e = mhsa_enhance(b, m);
  return FeatureBundle{e[0], e[1], e[2]};
}

double l1(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s;
}

// Independent forward for one example: naive MHSA, gate, experts, fusion.
struct OracleForward {
  std::vector<double> gate;
  std::vector<std::vector<double>> experts;
  std::vector<double> final_probs;
};

OracleForward oracle_forward(const FeatureBundle& b, const MoeModel& m) {
  using namespace oracle;
  const auto e = mhsa(b, m);
  std::vector<double> cat;
  for (const auto& t : e) cat.insert(cat.end(), t.begin(), t.end());
  const auto hidden = relu(matvec(to_mat(m.gate_w1.value), cat, to_mat(m.gate_b1.value)));
  OracleForward f;
  f.gate = softmax(matvec(to_mat(m.gate_w2.value), hidden, to_mat(m.gate_b2.value)));
  f.final_probs.assign(2, 0.0);
  for (std::size_t i = 0; i < 3; ++i) {
    f.experts.push_back(expert(e[i], m.experts[i]));
    for (std::size_t c = 0; c < 2; ++c) f.final_probs[c] += f.gate[i] * f.experts[i][c];
  }
  return f;
}

}  // namespace

TEST_SUITE("mhsa") {
  TEST_CASE("zero projections leave the tokens unchanged") {
    const MoeModel m(small_config());
    Rng rng(4);
    const auto b = oracle::random_bundle(rng, 8);
    const auto e = mhsa_enhance(b, m);
    for (std::size_t t = 0; t < 3; ++t) CHECK(e[t] == b[t]);
  }

  TEST_CASE("random d=8 two heads match the naive oracle") {
    for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
      const MoeModel m = MoeModel::initialized(small_config(seed));
      Rng rng(seed * 101);
      const auto b = oracle::random_bundle(rng, 8);
      const auto got = mhsa_enhance(b, m);
      const auto want = oracle::mhsa(b, m);
      for (std::size_t t = 0; t < 3; ++t) CHECK(l1(got[t], want[t]) < 1e-12);
    }
  }

  TEST_CASE("one head with a dominating token stays finite") {
    MoeConfig c = small_config();
    c.n_heads = 1;
    MoeModel m = MoeModel::initialized(c);
    FeatureBundle b;
    b.raw.assign(8, 50.0);
    b.expl.assign(8, 0.0);
    b.pred.assign(8, 0.0);
    for (const auto& e : mhsa_enhance(b, m)) {
      CHECK(e.size() == 8);
      CHECK(nn::all_finite(e));
    }
  }

  TEST_CASE("wrong bundle dimension is rejected") {
    const MoeModel m(small_config());
    Rng rng(4);
    CHECK_THROWS_AS(mhsa_enhance(oracle::random_bundle(rng, 6), m), ShapeMismatch);
  }
}

TEST_SUITE("gate") {
  TEST_CASE("zero gate parameters give uniform weights") {
    const MoeModel m(small_config());
    Rng rng(8);
    const auto g = gate_forward(enhanced(oracle::random_bundle(rng, 8), m), m);
    for (double x : g) CHECK(std::abs(x - 1.0 / 3.0) < 1e-15);
  }

  TEST_CASE("k=1 yields a one-hot gate") {
    MoeConfig c = small_config();
    c.k = 1;
    const MoeModel m = MoeModel::initialized(c);
    Rng rng(9);
    for (int i = 0; i < 50; ++i) {
      const auto g = gate_forward(enhanced(oracle::random_bundle(rng, 8), m), m);
      int ones = 0, zeros = 0;
      for (double x : g) {
        ones += x == 1.0;
        zeros += x == 0.0;
      }
      CHECK(ones == 1);
      CHECK(zeros == 2);
    }
  }

  TEST_CASE("H = [ln 2, 0, 0] gives [0.5, 0.25, 0.25]") {
    MoeModel m(small_config());
    m.gate_b2.value(0, 0) = std::log(2.0);
    Rng rng(10);
    const auto b = oracle::random_bundle(rng, 8);
    const auto h = gate_logits(enhanced(b, m), m);
    CHECK(h[0] == std::log(2.0));
    const auto g = gate_forward(enhanced(b, m), m);
    CHECK(std::abs(g[0] - 0.5) < 1e-15);
    CHECK(std::abs(g[1] - 0.25) < 1e-15);
    CHECK(std::abs(g[2] - 0.25) < 1e-15);
  }

  TEST_CASE("shifting every logit leaves the gate unchanged") {
    MoeModel m = MoeModel::initialized(small_config(6));
    Rng rng(12);
    const auto b = oracle::random_bundle(rng, 8);
    const auto before = gate_forward(enhanced(b, m), m);
    for (std::size_t i = 0; i < 3; ++i) m.gate_b2.value(i, 0) += 7.25;
    const auto after = gate_forward(enhanced(b, m), m);
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(before[i] - after[i]) < 1e-12);
  }

  TEST_CASE("inactive experts get zero weight, disabled gate is uniform over the rest") {
    MoeConfig c = small_config();
    c.active = {true, false, true};
    MoeModel m = MoeModel::initialized(c);
    Rng rng(13);
    const auto b = oracle::random_bundle(rng, 8);
    const auto g = gate_forward(enhanced(b, m), m);
    CHECK(g[1] == 0.0);
    CHECK(std::abs(g[0] + g[2] - 1.0) < 1e-12);
    c.use_gate = false;
    const MoeModel flat = MoeModel::initialized(c);
    const auto u = gate_forward(enhanced(b, flat), flat);
    CHECK(u[0] == 0.5);
    CHECK(u[1] == 0.0);
    CHECK(u[2] == 0.5);
  }
}

TEST_SUITE("experts and fusion") {
  TEST_CASE("zero head gives an even split") {
    const MoeModel m(small_config());
    const std::vector<double> e(8, 1.5);
    const auto o = expert_forward(e, 2, m);
    CHECK(o[0] == 0.5);
    CHECK(o[1] == 0.5);
  }

  TEST_CASE("random head matches the kernel composition oracle") {
    const MoeModel m = MoeModel::initialized(small_config(3));
    Rng rng(21);
    for (int t = 0; t < 20; ++t) {
      std::vector<double> e(8);
      for (double& x : e) x = rng.normal();
      for (std::size_t i = 0; i < 3; ++i) {
        const auto got = expert_forward(e, i, m);
        const auto want = oracle::expert(e, m.experts[i]);
        CHECK(std::abs(got[0] + got[1] - 1.0) < 1e-12);
        CHECK(std::abs(got[0] - want[0]) < 1e-12);
      }
    }
  }

  TEST_CASE("expert index out of range") {
    const MoeModel m(small_config());
    CHECK_THROWS(expert_forward(std::vector<double>(8, 0.0), 3, m));
  }

  TEST_CASE("assemble_matrix keeps rows in order") {
    const auto m = assemble_matrix({0.9, 0.1}, {0.6, 0.4}, {0.2, 0.8});
    CHECK(m.rows() == 3);
    CHECK(m.cols() == 2);
    CHECK(m(0, 0) == 0.9);
    CHECK(m(1, 1) == 0.4);
    CHECK(m(2, 0) == 0.2);
    const auto flat = assemble_matrix({0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5});
    for (double x : flat.data()) CHECK(x == 0.5);
    CHECK_THROWS_AS(assemble_matrix({0.9, 0.2}, {0.5, 0.5}, {0.5, 0.5}), NotASimplex);
  }

  TEST_CASE("fuse reproduces the hand dot products") {
    const auto m = assemble_matrix({0.9, 0.1}, {0.6, 0.4}, {0.2, 0.8});
    const auto o = fuse({0.5, 0.3, 0.2}, m);
    CHECK(std::abs(o[0] - (0.5 * 0.9 + 0.3 * 0.6 + 0.2 * 0.2)) < 1e-12);
    CHECK(std::abs(o[1] - (0.5 * 0.1 + 0.3 * 0.4 + 0.2 * 0.8)) < 1e-12);
    const auto sel = fuse({1.0, 0.0, 0.0}, m);
    CHECK(sel[0] == 0.9);
    CHECK(sel[1] == 0.1);
  }

  TEST_CASE("fused output stays on the simplex for random models") {
    Rng rng(44);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const MoeModel m = MoeModel::initialized(small_config(seed));
      const auto p = predict(oracle::random_bundle(rng, 8, 3.0), m);
      CHECK(std::abs(p.final_probs[0] + p.final_probs[1] - 1.0) < 1e-12);
      CHECK(std::abs(p.gate[0] + p.gate[1] + p.gate[2] - 1.0) < 1e-12);
    }
  }

  TEST_CASE("whole forward matches the oracle pipeline") {
    const MoeModel m = MoeModel::initialized(small_config(8));
    Rng rng(45);
    for (int t = 0; t < 10; ++t) {
      const auto b = oracle::random_bundle(rng, 8);
      const auto p = predict(b, m);
      const auto want = oracle_forward(b, m);
      for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(p.gate[i] - want.gate[i]) < 1e-12);
      CHECK(std::abs(p.final_probs[0] - want.final_probs[0]) < 1e-12);
    }
  }
}

TEST_SUITE("predict") {
  TEST_CASE("ties go to Vulnerable") {
    CHECK(decide({0.5, 0.5}) == 1);
    CHECK(decide({0.67, 0.33}) == 1);
    CHECK(decide({0.3, 0.7}) == 0);
    const MoeModel zero(small_config());
    Rng rng(1);
    CHECK(predict(oracle::random_bundle(rng, 8), zero).label == 1);
  }

  TEST_CASE("degenerate gate agrees in both modes") {
    MoeModel m(small_config());
    m.gate_b2.value(0, 0) = 100.0;  // G ~ [1, 0, 0]
    m.experts[0].b2.value(0, 0) = std::log(9.0);  // O_1 = [0.9, 0.1]
    m.experts[1].b2.value(1, 0) = 5.0;  // O_2 favours Secure
    Rng rng(2);
    const auto b = oracle::random_bundle(rng, 8);
    const auto weighted = predict(b, m, FusionMode::WeightedSum);
    const auto selected = predict(b, m, FusionMode::Selection);
    CHECK(weighted.label == 1);
    CHECK(selected.label == 1);
    CHECK(selected.mode == FusionMode::Selection);
    CHECK(std::abs(weighted.expert_probs[0][0] - 0.9) < 1e-12);
  }

  TEST_CASE("selection mode follows the heaviest expert") {
    MoeModel m(small_config());
    m.gate_b2.value(1, 0) = 1.0;  // expert 1 heaviest, but not dominant
    m.experts[0].b2.value(0, 0) = 6.0;
    m.experts[2].b2.value(0, 0) = 6.0;
    m.experts[1].b2.value(1, 0) = 0.5;  // expert 1 mildly Secure
    Rng rng(3);
    const auto b = oracle::random_bundle(rng, 8);
    CHECK(predict(b, m, FusionMode::WeightedSum).label == 1);
    CHECK(predict(b, m, FusionMode::Selection).label == 0);
  }

  TEST_CASE("fusion mode names round-trip") {
    for (auto mode : {FusionMode::WeightedSum, FusionMode::Selection}) {
      CHECK(parse_fusion_mode(to_string(mode)) == mode);
    }
    CHECK_FALSE(parse_fusion_mode("vote").has_value());
  }
}

TEST_SUITE("loss") {
  TEST_CASE("alpha and gamma limits") {
    Rng rng(5);
    const Batch batch = oracle::random_batch(rng, 6, 8);
    MoeConfig c = small_config(2);
    c.gamma = 0.7;
    MoeModel m = MoeModel::initialized(c);
    m.prev_gate = {0.6, 0.3, 0.1};

    m.config.alpha = 1.0;
    auto l = loss_total(batch, m);
    CHECK(std::abs(l.total - (l.feature + l.reg)) < 1e-12);
    CHECK(l.reg > 0.0);

    m.config.alpha = 0.0;
    l = loss_total(batch, m);
    CHECK(std::abs(l.total - l.pred) < 1e-12);

    m.config.gamma = 0.0;
    CHECK(loss_total(batch, m).reg == 0.0);

    m.config.gamma = 0.7;
    m.prev_gate = loss_total(batch, m).mean_gate;
    CHECK(loss_total(batch, m).reg == 0.0);
  }

  TEST_CASE("components match the oracle forward") {
    Rng rng(6);
    const Batch batch = oracle::random_batch(rng, 5, 8);
    MoeModel m = MoeModel::initialized(small_config(4));
    m.prev_gate = {0.2, 0.2, 0.6};
    double feature = 0.0, pred = 0.0;
    std::vector<double> mean(3, 0.0);
    for (std::size_t n = 0; n < batch.size(); ++n) {
      const auto f = oracle_forward(batch.bundles[n], m);
      const std::size_t y = batch.labels[n] == 1 ? 0 : 1;
      for (std::size_t i = 0; i < 3; ++i) {
        feature += f.gate[i] * -std::log(f.experts[i][y]);
        mean[i] += f.gate[i] / batch.size();
      }
      pred += -std::log(f.final_probs[y]);
    }
    feature /= batch.size();
    pred /= batch.size();
    double reg = 0.0;
    for (std::size_t i = 0; i < 3; ++i) reg += (mean[i] - m.prev_gate[i]) * (mean[i] - m.prev_gate[i]);
    reg *= m.config.gamma;
    const auto l = loss_total(batch, m);
    CHECK(std::abs(l.feature - feature) < 1e-12);
    CHECK(std::abs(l.pred - pred) < 1e-12);
    CHECK(std::abs(l.reg - reg) < 1e-12);
    const double a = m.config.alpha;
    CHECK(std::abs(l.total - (a * (feature + reg) + (1 - a) * pred)) < 1e-12);
  }

  TEST_CASE("empty batch is rejected") {
    const MoeModel m(small_config());
    CHECK_THROWS_AS(loss_total(Batch{}, m), EmptyBatch);
  }
}

TEST_SUITE("gradients") {
  TEST_CASE("full loss passes the gradient check at kink-free points") {
    for (std::uint64_t seed : {1, 2, 3}) {
      MoeModel m = MoeModel::initialized(small_config(seed));
      Rng rng(mix_seed(seed, 0xD47A));
      Batch batch = oracle::random_batch(rng, 4, 8);
      while (oracle::straddles_kink(batch, m, 1e-3)) batch = oracle::random_batch(rng, 4, 8);
      m.prev_gate = {0.5, 0.2, 0.3};
      compute_gradients(batch, m);
      const auto params = m.parameters();
      const auto r = nn::grad_check([&] { return loss_total(batch, m).total; }, params, 1e-3, 1e-4);
      CHECK_MESSAGE(r.passed, "seed ", seed, ": ", r.max_relative_error, " at ", r.worst);
    }
  }

  TEST_CASE("k=2 masking path passes the gradient check") {
    MoeConfig c = small_config(7);
    c.k = 2;
    MoeModel m = MoeModel::initialized(c);
    Rng rng(71);
    Batch batch = oracle::random_batch(rng, 4, 8);
    while (oracle::straddles_kink(batch, m, 1e-3)) batch = oracle::random_batch(rng, 4, 8);
    compute_gradients(batch, m);
    const auto params = m.parameters();
    const auto r = nn::grad_check([&] { return loss_total(batch, m).total; }, params, 1e-3, 1e-4);
    CHECK_MESSAGE(r.passed, r.max_relative_error, " at ", r.worst);
  }

  TEST_CASE("with alpha=0 and gamma=0 the gradient is that of plain cross-entropy on the fused output") {
    MoeConfig c = small_config(9);
    c.alpha = 0.0;
    c.gamma = 0.0;
    MoeModel m = MoeModel::initialized(c);
    Rng rng(91);
    Batch batch = oracle::random_batch(rng, 4, 8);
    while (oracle::straddles_kink(batch, m, 1e-3)) batch = oracle::random_batch(rng, 4, 8);
    compute_gradients(batch, m);
    auto plain_ce = [&] {
      double s = 0.0;
      for (std::size_t n = 0; n < batch.size(); ++n) {
        const auto f = oracle_forward(batch.bundles[n], m);
        s += -std::log(f.final_probs[batch.labels[n] == 1 ? 0 : 1]);
      }
      return s / batch.size();
    };
    const auto params = m.parameters();
    const auto r = nn::grad_check(plain_ce, params, 1e-3, 1e-4);
    CHECK_MESSAGE(r.passed, r.max_relative_error, " at ", r.worst);
  }
}

TEST_SUITE("training") {
  TEST_CASE("eta=0 leaves parameters but refreshes the gate snapshot") {
    MoeConfig c = small_config(3);
    c.eta = 0.0;
    MoeModel m = MoeModel::initialized(c);
    const MoeModel before = m;
    Rng rng(30);
    const Batch batch = oracle::random_batch(rng, 6, 8);
    const auto mean = loss_total(batch, m).mean_gate;
    train_step(batch, m);
    const auto after_params = std::as_const(m).named_parameters();
    const auto before_params = before.named_parameters();
    for (std::size_t i = 0; i < after_params.size(); ++i) {
      CHECK(after_params[i].second->value.data() == before_params[i].second->value.data());
    }
    CHECK(m.prev_gate == mean);
  }

  TEST_CASE("non-finite loss aborts the step and keeps the model") {
    MoeModel m = MoeModel::initialized(small_config(3));
    m.gate_w2.value(0, 0) = std::numeric_limits<double>::quiet_NaN();
    Rng rng(31);
    const Batch batch = oracle::random_batch(rng, 4, 8);
    const auto snapshot = checkpoint_to_json(m).dump();
    CHECK_THROWS_AS(train_step(batch, m), NonFiniteLoss);
    CHECK(checkpoint_to_json(m).dump() == snapshot);
  }

  TEST_CASE("loss does not increase on a repeated batch with a small step") {
    MoeConfig c = small_config(5);
    c.eta = 1e-3;
    MoeModel m = MoeModel::initialized(c);
    Rng rng(32);
    const Batch batch = oracle::random_batch(rng, 16, 8);
    int non_increasing = 0;
    double prev = loss_total(batch, m).total;
    for (int step = 0; step < 50; ++step) {
      train_step(batch, m);
      const double now = loss_total(batch, m).total;
      non_increasing += now <= prev;
      prev = now;
    }
    CHECK(non_increasing >= 45);
  }

  TEST_CASE("fit is deterministic and epochs=0 returns the initial model") {
    SyntheticSpec spec;
    spec.n = 120;
    spec.d = 8;
    spec.seed = 4;
    const Dataset data = make_synthetic_dataset(spec);
    MoeConfig c = small_config(11);
    c.epochs = 3;
    c.batch_size = 16;
    const auto a = train_model(data, c);
    const auto b = train_model(data, c);
    CHECK(a.model == b.model);
    CHECK(a.history.size() == 3);
    c.epochs = 0;
    const auto none = train_model(data, c);
    CHECK(none.model == MoeModel::initialized(c));
    CHECK(none.best_epoch == 0);
  }

  TEST_CASE("linearly separable data reaches high validation F1 within 30 epochs") {
    SyntheticSpec spec;
    spec.n = 400;
    spec.d = 8;
    spec.raw_separation = 4.0;
    spec.expl_separation = 0.0;
    spec.pred_accuracy = 0.5;
    spec.seed = 8;
    const Dataset data = make_synthetic_dataset(spec);

    std::vector<std::vector<double>> tx, vx;
    for (const auto& b : data.train.bundles) tx.push_back(b.raw);
    for (const auto& b : data.valid.bundles) vx.push_back(b.raw);
    const double lr_f1 = oracle::logistic_f1(tx, data.train.labels, vx, data.valid.labels);
    REQUIRE(lr_f1 >= 0.97);

    MoeConfig c = small_config(12);
    c.epochs = 30;
    c.batch_size = 16;
    c.eta = 0.05;
    const auto fr = train_model(data, c);
    double best = 0.0;
    for (const auto& e : fr.history) best = std::max(best, e.valid_f1);
    CHECK(best >= 0.95);
  }

  TEST_CASE("make_batches chunks in order") {
    Rng rng(1);
    const Batch all = oracle::random_batch(rng, 10, 4);
    const auto batches = make_batches(all.bundles, all.labels, 4);
    REQUIRE(batches.size() == 3);
    CHECK(batches[0].size() == 4);
    CHECK(batches[2].size() == 2);
    CHECK(batches[2].bundles[1] == all.bundles[9]);
  }
}

TEST_SUITE("checkpoint") {
  TEST_CASE("save and load round-trip exactly") {
    oracle::TempDir dir("ckpt");
    MoeModel m = MoeModel::initialized(small_config(14));
    m.prev_gate = {0.1, 0.7, 0.2};
    save_checkpoint(dir / "m.json", m, {{"note", "x"}});
    const auto ck = load_checkpoint(dir / "m.json");
    CHECK(ck.model == m);
    CHECK(ck.metadata["note"] == "x");
  }

  TEST_CASE("version and shape mismatches are rejected") {
    const MoeModel m = MoeModel::initialized(small_config(15));
    auto j = checkpoint_to_json(m);
    j["version"] = kCheckpointVersion + 1;
    CHECK_THROWS_AS(checkpoint_from_json(j), DataError);
    j = checkpoint_to_json(m);
    j["params"]["gate.w1"]["rows"] = 3;
    CHECK_THROWS_AS(checkpoint_from_json(j), DataError);
    j = checkpoint_to_json(m);
    j["config"]["d"] = 16;
    CHECK_THROWS_AS(checkpoint_from_json(j), DataError);
  }

  TEST_CASE("config validation") {
    MoeConfig c = small_config();
    c.n_heads = 3;
    CHECK_THROWS(c.validate());
    c = small_config();
    c.k = 4;
    CHECK_THROWS(c.validate());
    c = small_config();
    c.alpha = 1.5;
    CHECK_THROWS(c.validate());
    c = small_config();
    c.active = {false, false, false};
    CHECK_THROWS(c.validate());
  }
}
