#include "sael/moe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sael/errors.hpp"
#include "sael/metrics.hpp"
#include "sael/rng.hpp"

namespace sael {

using nn::Param;
using nn::Tensor2;
using nn::Vector;

std::string_view to_string(FusionMode m) {
  return m == FusionMode::WeightedSum ? "weighted_sum" : "selection";
}

std::optional<FusionMode> parse_fusion_mode(std::string_view s) {
  if (s == "weighted_sum" || s == "weighted") return FusionMode::WeightedSum;
  if (s == "selection" || s == "select") return FusionMode::Selection;
  return std::nullopt;
}

std::size_t MoeConfig::active_count() const {
  return static_cast<std::size_t>(std::count(active.begin(), active.end(), true));
}

void MoeConfig::validate() const {
  if (d == 0) throw ShapeMismatch("d must be positive");
  if (n_heads == 0 || d % n_heads != 0) {
    throw ShapeMismatch("d=" + std::to_string(d) + " not divisible by n_heads=" +
                        std::to_string(n_heads));
  }
  if (d_gate == 0) throw ShapeMismatch("d_gate must be positive");
  if (k == 0 || k > kNumExperts) throw KTooLarge(k, kNumExperts);
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw NumericError("alpha must lie in [0, 1]");
  if (!(gamma >= 0.0)) throw NumericError("gamma must be >= 0");
  if (!(eta >= 0.0) || !std::isfinite(eta)) throw NumericError("eta must be finite and >= 0");
  if (batch_size == 0) throw NumericError("batch_size must be positive");
  if (active_count() == 0) throw NumericError("at least one expert must be active");
}

namespace {

GateVector uniform_over_active(const MoeConfig& cfg) {
  GateVector g{};
  const double w = 1.0 / static_cast<double>(cfg.active_count());
  for (std::size_t i = 0; i < kNumExperts; ++i) g[i] = cfg.active[i] ? w : 0.0;
  return g;
}

void init_uniform(Param& p, std::size_t fan_in, Rng& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : p.value.data()) v = rng.uniform(-s, s);
}

}  // namespace

MoeModel::MoeModel(MoeConfig cfg) : config(cfg) {
  config.validate();
  const std::size_t d = config.d;
  const std::size_t dh = config.head_dim();
  const std::size_t dg = config.d_gate;
  heads.resize(config.n_heads);
  for (auto& h : heads) {
    h.wq = Param(dh, d);
    h.bq = Param(dh, 1);
    h.wk = Param(dh, d);
    h.bk = Param(dh, 1);
    h.wv = Param(dh, d);
    h.bv = Param(dh, 1);
  }
  wo = Param(d, d);
  bo = Param(d, 1);
  gate_w1 = Param(dg, kNumExperts * d);
  gate_b1 = Param(dg, 1);
  gate_w2 = Param(kNumExperts, dg);
  gate_b2 = Param(kNumExperts, 1);
  for (auto& e : experts) {
    e.w1 = Param(dg, d);
    e.b1 = Param(dg, 1);
    e.w2 = Param(kNumClasses, dg);
    e.b2 = Param(kNumClasses, 1);
  }
  prev_gate = uniform_over_active(config);
}

MoeModel MoeModel::initialized(const MoeConfig& cfg) {
  MoeModel m(cfg);
  Rng rng(mix_seed(cfg.seed, 0x1417));
  // Biases share their layer's fan-in.
  auto layer = [&](Param& w, Param& b) {
    init_uniform(w, w.value.cols(), rng);
    init_uniform(b, w.value.cols(), rng);
  };
  for (auto& h : m.heads) {
    layer(h.wq, h.bq);
    layer(h.wk, h.bk);
    layer(h.wv, h.bv);
  }
  layer(m.wo, m.bo);
  layer(m.gate_w1, m.gate_b1);
  layer(m.gate_w2, m.gate_b2);
  for (auto& e : m.experts) {
    layer(e.w1, e.b1);
    layer(e.w2, e.b2);
  }
  return m;
}

std::vector<std::pair<std::string, Param*>> MoeModel::named_parameters() {
  std::vector<std::pair<std::string, Param*>> out;
  for (std::size_t h = 0; h < heads.size(); ++h) {
    const std::string p = "attn.head" + std::to_string(h) + ".";
    out.emplace_back(p + "wq", &heads[h].wq);
    out.emplace_back(p + "bq", &heads[h].bq);
    out.emplace_back(p + "wk", &heads[h].wk);
    out.emplace_back(p + "bk", &heads[h].bk);
    out.emplace_back(p + "wv", &heads[h].wv);
    out.emplace_back(p + "bv", &heads[h].bv);
  }
  out.emplace_back("attn.wo", &wo);
  out.emplace_back("attn.bo", &bo);
  out.emplace_back("gate.w1", &gate_w1);
  out.emplace_back("gate.b1", &gate_b1);
  out.emplace_back("gate.w2", &gate_w2);
  out.emplace_back("gate.b2", &gate_b2);
  for (std::size_t i = 0; i < experts.size(); ++i) {
    const std::string p = "expert" + std::to_string(i) + ".";
    out.emplace_back(p + "w1", &experts[i].w1);
    out.emplace_back(p + "b1", &experts[i].b1);
    out.emplace_back(p + "w2", &experts[i].w2);
    out.emplace_back(p + "b2", &experts[i].b2);
  }
  return out;
}

std::vector<std::pair<std::string, const Param*>> MoeModel::named_parameters() const {
  auto mut = const_cast<MoeModel*>(this)->named_parameters();
  std::vector<std::pair<std::string, const Param*>> out;
  out.reserve(mut.size());
  for (auto& [n, p] : mut) out.emplace_back(std::move(n), p);
  return out;
}

std::vector<Param*> MoeModel::parameters() {
  std::vector<Param*> out;
  for (auto& [n, p] : named_parameters()) out.push_back(p);
  return out;
}

void MoeModel::zero_grad() {
  for (Param* p : parameters()) p->zero_grad();
}

std::size_t MoeModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : named_parameters()) n += p->value.size();
  return n;
}

bool MoeModel::operator==(const MoeModel& o) const {
  if (!(config == o.config) || prev_gate != o.prev_gate) return false;
  const auto a = named_parameters();
  const auto b = o.named_parameters();
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].first != b[i].first || !(a[i].second->value == b[i].second->value)) return false;
  }
  return true;
}

void Batch::validate(std::size_t d) const {
  if (bundles.empty()) throw EmptyBatch();
  if (bundles.size() != labels.size()) throw LengthMismatch(bundles.size(), labels.size());
  for (const auto& b : bundles) {
    if (b.raw.size() != d || b.expl.size() != d || b.pred.size() != d) {
      throw ShapeMismatch("bundle dimension " + std::to_string(b.raw.size()) + " != d=" +
                          std::to_string(d));
    }
  }
  for (int y : labels) {
    if (y != 0 && y != 1) throw DataError("labels must be 0 or 1");
  }
}

std::vector<Batch> make_batches(const std::vector<FeatureBundle>& bundles,
                                const std::vector<int>& labels, std::size_t batch_size) {
  if (bundles.size() != labels.size()) throw LengthMismatch(bundles.size(), labels.size());
  if (batch_size == 0) throw NumericError("batch_size must be positive");
  std::vector<Batch> out;
  for (std::size_t i = 0; i < bundles.size(); i += batch_size) {
    Batch b;
    const std::size_t end = std::min(bundles.size(), i + batch_size);
    b.bundles.assign(bundles.begin() + static_cast<std::ptrdiff_t>(i),
                     bundles.begin() + static_cast<std::ptrdiff_t>(end));
    b.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(i),
                    labels.begin() + static_cast<std::ptrdiff_t>(end));
    out.push_back(std::move(b));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Forward pass with retained intermediates.

namespace {

struct HeadTrace {
  Tensor2 q, k, v;
  nn::AttentionResult attn;
};

struct ExpertTrace {
  Vector pre, hidden, logits;
  Probs2 probs{};
};

struct Trace {
  std::vector<std::size_t> tokens;  // active token indices, in order
  Tensor2 x;                        // t x d input tokens
  std::vector<HeadTrace> heads;
  Tensor2 concat;                   // t x d
  FeatureBundle enhanced;           // zero rows for inactive experts
  Vector gate_in, gate_pre, gate_hidden;
  std::array<double, kNumExperts> gate_raw{};
  GateVector gate{};
  std::array<ExpertTrace, kNumExperts> experts;
  Probs2 final_probs{};
};

void check_bundle(const FeatureBundle& b, std::size_t d) {
  if (b.raw.size() != d || b.expl.size() != d || b.pred.size() != d) {
    throw ShapeMismatch("bundle dimension (" + std::to_string(b.raw.size()) + "," +
                        std::to_string(b.expl.size()) + "," + std::to_string(b.pred.size()) +
                        ") != d=" + std::to_string(d));
  }
}

void run_mhsa(const FeatureBundle& bundle, const MoeModel& model, Trace& tr) {
  const auto& cfg = model.config;
  const std::size_t d = cfg.d;
  const std::size_t dh = cfg.head_dim();
  for (std::size_t i = 0; i < kNumExperts; ++i) {
    if (cfg.active[i]) tr.tokens.push_back(i);
  }
  const std::size_t t = tr.tokens.size();
  tr.x = Tensor2(t, d);
  for (std::size_t r = 0; r < t; ++r) {
    const auto& src = bundle[tr.tokens[r]];
    std::copy(src.begin(), src.end(), tr.x.row(r).begin());
  }
  for (std::size_t i = 0; i < kNumExperts; ++i) tr.enhanced[i].assign(d, 0.0);

  if (!cfg.use_mhsa) {
    for (std::size_t r = 0; r < t; ++r) {
      tr.enhanced[tr.tokens[r]].assign(tr.x.row(r).begin(), tr.x.row(r).end());
    }
    return;
  }

  tr.concat = Tensor2(t, d);
  tr.heads.resize(cfg.n_heads);
  for (std::size_t h = 0; h < cfg.n_heads; ++h) {
    const AttentionHead& p = model.heads[h];
    HeadTrace& ht = tr.heads[h];
    ht.q = Tensor2(t, dh);
    ht.k = Tensor2(t, dh);
    ht.v = Tensor2(t, dh);
    for (std::size_t r = 0; r < t; ++r) {
      const auto xr = tr.x.row(r);
      const Vector q = nn::linear(xr, p.wq, p.bq);
      const Vector k = nn::linear(xr, p.wk, p.bk);
      const Vector v = nn::linear(xr, p.wv, p.bv);
      std::copy(q.begin(), q.end(), ht.q.row(r).begin());
      std::copy(k.begin(), k.end(), ht.k.row(r).begin());
      std::copy(v.begin(), v.end(), ht.v.row(r).begin());
    }
    ht.attn = nn::attention(ht.q, ht.k, ht.v);
    for (std::size_t r = 0; r < t; ++r) {
      for (std::size_t c = 0; c < dh; ++c) tr.concat(r, h * dh + c) = ht.attn.output(r, c);
    }
  }
  for (std::size_t r = 0; r < t; ++r) {
    const Vector y = nn::linear(tr.concat.row(r), model.wo, model.bo);
    auto& out = tr.enhanced[tr.tokens[r]];
    for (std::size_t c = 0; c < d; ++c) out[c] = tr.x(r, c) + y[c];
  }
}

void run_gate(const MoeModel& model, Trace& tr) {
  const auto& cfg = model.config;
  if (!cfg.use_gate) {
    tr.gate = uniform_over_active(cfg);
    return;
  }
  const std::size_t d = cfg.d;
  tr.gate_in.assign(kNumExperts * d, 0.0);
  for (std::size_t i = 0; i < kNumExperts; ++i) {
    if (!cfg.active[i]) continue;
    std::copy(tr.enhanced[i].begin(), tr.enhanced[i].end(),
              tr.gate_in.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  tr.gate_pre = nn::linear(tr.gate_in, model.gate_w1, model.gate_b1);
  tr.gate_hidden = nn::relu(tr.gate_pre);
  const Vector h = nn::linear(tr.gate_hidden, model.gate_w2, model.gate_b2);
  Vector masked(kNumExperts);
  for (std::size_t i = 0; i < kNumExperts; ++i) {
    tr.gate_raw[i] = h[i];
    masked[i] = cfg.active[i] ? h[i] : nn::kMasked;
  }
  const Vector g = nn::softmax(nn::topk_mask(masked, cfg.k));
  std::copy(g.begin(), g.end(), tr.gate.begin());
}

Probs2 run_expert(std::span<const double> e, const ExpertHead& p, ExpertTrace& et) {
  et.pre = nn::linear(e, p.w1, p.b1);
  et.hidden = nn::relu(et.pre);
  et.logits = nn::linear(et.hidden, p.w2, p.b2);
  const Vector pr = nn::softmax(et.logits);
  et.probs = {pr[0], pr[1]};
  return et.probs;
}

Trace forward(const FeatureBundle& bundle, const MoeModel& model) {
  check_bundle(bundle, model.config.d);
  Trace tr;
  run_mhsa(bundle, model, tr);
  run_gate(model, tr);
  tr.final_probs = {0.0, 0.0};
  for (std::size_t i = 0; i < kNumExperts; ++i) {
    if (!model.config.active[i]) continue;
    run_expert(tr.enhanced[i], model.experts[i], tr.experts[i]);
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      tr.final_probs[c] += tr.gate[i] * tr.experts[i].probs[c];
    }
  }
  return tr;
}

}  // namespace

std::array<Embedding, kNumExperts> mhsa_enhance(const FeatureBundle& bundle, const MoeModel& model) {
  check_bundle(bundle, model.config.d);
  Trace tr;
  run_mhsa(bundle, model, tr);
  return {tr.enhanced.raw, tr.enhanced.expl, tr.enhanced.pred};
}

std::array<double, kNumExperts> gate_logits(const FeatureBundle& enhanced, const MoeModel& model) {
  check_bundle(enhanced, model.config.d);
  if (!model.config.use_gate) return {0.0, 0.0, 0.0};
  Trace tr;
  tr.enhanced = enhanced;
  run_gate(model, tr);
  return tr.gate_raw;
}

GateVector gate_forward(const FeatureBundle& enhanced, const MoeModel& model) {
  check_bundle(enhanced, model.config.d);
  Trace tr;
  tr.enhanced = enhanced;
  run_gate(model, tr);
  return tr.gate;
}

Probs2 expert_forward(std::span<const double> embedding, std::size_t expert_index,
                      const MoeModel& model) {
  if (expert_index >= kNumExperts) {
    throw ShapeMismatch("expert index " + std::to_string(expert_index) + " out of range");
  }
  if (embedding.size() != model.config.d) {
    throw ShapeMismatch("expert input " + std::to_string(embedding.size()) + " != d=" +
                        std::to_string(model.config.d));
  }
  ExpertTrace et;
  return run_expert(embedding, model.experts[expert_index], et);
}

Tensor2 assemble_matrix(const Probs2& o1, const Probs2& o2, const Probs2& o3) {
  Tensor2 m(kNumExperts, kNumClasses);
  const std::array<const Probs2*, kNumExperts> rows{&o1, &o2, &o3};
  for (std::size_t i = 0; i < kNumExperts; ++i) {
    double sum = 0.0;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      const double p = (*rows[i])[c];
      if (!(p >= 0.0) || !std::isfinite(p)) {
        throw NotASimplex("expert " + std::to_string(i) + " has an invalid probability");
      }
      m(i, c) = p;
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      throw NotASimplex("expert " + std::to_string(i) + " sums to " + std::to_string(sum));
    }
  }
  return m;
}

Probs2 fuse(const GateVector& gate, const Tensor2& matrix) {
  if (matrix.rows() != kNumExperts || matrix.cols() != kNumClasses) {
    throw ShapeMismatch("fusion matrix must be 3x2");
  }
  Probs2 out{0.0, 0.0};
  for (std::size_t i = 0; i < kNumExperts; ++i) {
    for (std::size_t c = 0; c < kNumClasses; ++c) out[c] += gate[i] * matrix(i, c);
  }
  return out;
}

int decide(const Probs2& probs) { return probs[0] >= probs[1] ? 1 : 0; }

Prediction predict(const FeatureBundle& bundle, const MoeModel& model, FusionMode mode) {
  const Trace tr = forward(bundle, model);
  Prediction p;
  p.mode = mode;
  p.final_probs = tr.final_probs;
  p.gate = tr.gate;
  for (std::size_t i = 0; i < kNumExperts; ++i) p.expert_probs[i] = tr.experts[i].probs;
  if (mode == FusionMode::WeightedSum) {
    p.label = decide(tr.final_probs);
  } else {
    std::size_t best = 0;
    for (std::size_t i = 1; i < kNumExperts; ++i) {
      if (tr.gate[i] > tr.gate[best]) best = i;
    }
    p.label = decide(tr.experts[best].probs);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Loss and backward pass.

namespace {

struct BatchForward {
  std::vector<Trace> traces;
  LossBreakdown loss;
  // Per-example cross-entropies of each expert and of the fused output.
  std::vector<std::array<double, kNumExperts>> expert_ce;
};

BatchForward forward_batch(const Batch& batch, const MoeModel& model) {
  batch.validate(model.config.d);
  const auto& cfg = model.config;
  const double n = static_cast<double>(batch.size());

  BatchForward bf;
  bf.traces.reserve(batch.size());
  bf.expert_ce.resize(batch.size());
  GateVector mean_gate{};
  for (std::size_t e = 0; e < batch.size(); ++e) {
    Trace tr = forward(batch.bundles[e], model);
    const std::size_t target = class_index(batch.labels[e]);
    for (std::size_t i = 0; i < kNumExperts; ++i) {
      if (!cfg.active[i]) continue;
      const double ce = nn::cross_entropy(tr.experts[i].probs, target);
      bf.expert_ce[e][i] = ce;
      bf.loss.feature += tr.gate[i] * ce / n;
    }
    bf.loss.pred += nn::cross_entropy(tr.final_probs, target) / n;
    for (std::size_t i = 0; i < kNumExperts; ++i) mean_gate[i] += tr.gate[i] / n;
    bf.traces.push_back(std::move(tr));
  }
  double reg = 0.0;
  for (std::size_t i = 0; i < kNumExperts; ++i) {
    const double diff = mean_gate[i] - model.prev_gate[i];
    reg += diff * diff;
  }
  bf.loss.reg = cfg.gamma * reg;
  bf.loss.mean_gate = mean_gate;
  bf.loss.total = cfg.alpha * (bf.loss.feature + bf.loss.reg) + (1.0 - cfg.alpha) * bf.loss.pred;
  return bf;
}

void backward_mhsa(const Trace& tr, const std::array<Vector, kNumExperts>& d_enhanced,
                   MoeModel& model) {
  const auto& cfg = model.config;
  const std::size_t t = tr.tokens.size();
  const std::size_t d = cfg.d;
  const std::size_t dh = cfg.head_dim();

  // enhanced = x + concat Wo^T + bo; the residual branch carries no parameters.
  Tensor2 d_concat(t, d);
  for (std::size_t r = 0; r < t; ++r) {
    const Vector dc = nn::linear_backward(tr.concat.row(r), model.wo, model.bo,
                                          d_enhanced[tr.tokens[r]]);
    std::copy(dc.begin(), dc.end(), d_concat.row(r).begin());
  }
  for (std::size_t h = 0; h < cfg.n_heads; ++h) {
    const HeadTrace& ht = tr.heads[h];
    AttentionHead& p = model.heads[h];
    Tensor2 d_out(t, dh);
    for (std::size_t r = 0; r < t; ++r) {
      for (std::size_t c = 0; c < dh; ++c) d_out(r, c) = d_concat(r, h * dh + c);
    }
    const nn::AttentionGrads g = nn::attention_backward(ht.q, ht.k, ht.v, ht.attn.weights, d_out);
    for (std::size_t r = 0; r < t; ++r) {
      const auto xr = tr.x.row(r);
      nn::linear_backward(xr, p.wq, p.bq, g.dQ.row(r));
      nn::linear_backward(xr, p.wk, p.bk, g.dK.row(r));
      nn::linear_backward(xr, p.wv, p.bv, g.dV.row(r));
    }
  }
}

}  // namespace

LossBreakdown loss_total(const Batch& batch, const MoeModel& model) {
  return forward_batch(batch, model).loss;
}

LossBreakdown compute_gradients(const Batch& batch, MoeModel& model) {
  BatchForward bf = forward_batch(batch, model);
  model.zero_grad();

  const auto& cfg = model.config;
  const double n = static_cast<double>(batch.size());
  const double a = cfg.alpha;

  // dL_reg/dG_i for every example: 2 gamma (mean_i - w_i) / n, scaled by alpha.
  GateVector d_reg{};
  for (std::size_t i = 0; i < kNumExperts; ++i) {
    d_reg[i] = a * cfg.gamma * 2.0 * (bf.loss.mean_gate[i] - model.prev_gate[i]) / n;
  }

  for (std::size_t e = 0; e < batch.size(); ++e) {
    const Trace& tr = bf.traces[e];
    const std::size_t target = class_index(batch.labels[e]);
    const Vector d_final = nn::cross_entropy_backward(tr.final_probs, target);

    GateVector d_gate{};
    std::array<Vector, kNumExperts> d_enhanced;
    for (auto& v : d_enhanced) v.assign(cfg.d, 0.0);

    for (std::size_t i = 0; i < kNumExperts; ++i) {
      if (!cfg.active[i]) continue;
      const ExpertTrace& et = tr.experts[i];
      const Vector d_ce = nn::cross_entropy_backward(et.probs, target);

      double fused = 0.0;
      Vector d_probs(kNumClasses);
      for (std::size_t c = 0; c < kNumClasses; ++c) {
        fused += d_final[c] * et.probs[c];
        d_probs[c] = (a / n) * tr.gate[i] * d_ce[c] + ((1.0 - a) / n) * tr.gate[i] * d_final[c];
      }
      d_gate[i] = (a / n) * bf.expert_ce[e][i] + ((1.0 - a) / n) * fused + d_reg[i];

      ExpertHead& p = model.experts[i];
      const Vector d_logits = nn::softmax_backward(et.probs, d_probs);
      const Vector d_hidden = nn::linear_backward(et.hidden, p.w2, p.b2, d_logits);
      const Vector d_pre = nn::relu_backward(et.pre, d_hidden);
      const Vector d_in = nn::linear_backward(tr.enhanced[i], p.w1, p.b1, d_pre);
      for (std::size_t c = 0; c < cfg.d; ++c) d_enhanced[i][c] += d_in[c];
    }

    if (cfg.use_gate) {
      // Masked entries have G_i = 0, so softmax_backward leaves them at zero
      // and top-k passes the kept entries through unchanged.
      const Vector d_h = nn::softmax_backward(tr.gate, d_gate);
      const Vector d_hidden = nn::linear_backward(tr.gate_hidden, model.gate_w2, model.gate_b2, d_h);
      const Vector d_pre = nn::relu_backward(tr.gate_pre, d_hidden);
      const Vector d_x = nn::linear_backward(tr.gate_in, model.gate_w1, model.gate_b1, d_pre);
      for (std::size_t i = 0; i < kNumExperts; ++i) {
        if (!cfg.active[i]) continue;
        for (std::size_t c = 0; c < cfg.d; ++c) d_enhanced[i][c] += d_x[i * cfg.d + c];
      }
    }

    if (cfg.use_mhsa) backward_mhsa(tr, d_enhanced, model);
  }
  return bf.loss;
}

StepResult train_step(const Batch& batch, MoeModel& model) {
  LossBreakdown loss;
  try {
    loss = compute_gradients(batch, model);
  } catch (const NotASimplex& e) {
    // NaN/inf weights surface as broken probability vectors mid-forward.
    model.zero_grad();
    throw NonFiniteLoss(e.what());
  }
  if (!std::isfinite(loss.total) || !std::isfinite(loss.feature) || !std::isfinite(loss.pred) ||
      !std::isfinite(loss.reg)) {
    model.zero_grad();
    throw NonFiniteLoss("");
  }
  for (Param* p : model.parameters()) {
    if (!nn::all_finite(p->grad.data())) {
      model.zero_grad();
      throw NonFiniteLoss("non-finite gradient");
    }
  }
  const double eta = model.config.eta;
  for (Param* p : model.parameters()) {
    auto& v = p->value.data();
    const auto& g = p->grad.data();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= eta * g[i];
  }
  StepResult r;
  r.loss = loss;
  double drift = 0.0;
  for (std::size_t i = 0; i < kNumExperts; ++i) {
    const double diff = loss.mean_gate[i] - model.prev_gate[i];
    drift += diff * diff;
  }
  r.gate_drift = std::sqrt(drift);
  model.prev_gate = loss.mean_gate;
  return r;
}

namespace {

struct ValidStats {
  double loss = 0.0;
  double f1 = 0.0;
};

ValidStats evaluate_batches(const std::vector<Batch>& batches, const MoeModel& model) {
  ValidStats s;
  std::vector<int> preds;
  std::vector<int> labels;
  std::size_t count = 0;
  for (const Batch& b : batches) {
    const LossBreakdown l = loss_total(b, model);
    s.loss += l.total * static_cast<double>(b.size());
    count += b.size();
    for (std::size_t i = 0; i < b.size(); ++i) {
      preds.push_back(predict(b.bundles[i], model).label);
      labels.push_back(b.labels[i]);
    }
  }
  if (count > 0) {
    s.loss /= static_cast<double>(count);
    s.f1 = compute_metrics(preds, labels).f1;
  }
  return s;
}

}  // namespace

FitResult fit(const std::vector<Batch>& train, const std::vector<Batch>& valid,
              const MoeConfig& config) {
  config.validate();
  FitResult result{MoeModel::initialized(config), {}, 0, 0.0};
  if (config.epochs == 0) return result;
  if (train.empty()) throw EmptyBatch();
  for (const Batch& b : train) b.validate(config.d);

  MoeModel model = result.model;
  std::optional<MoeModel> best;
  double best_f1 = -1.0;
  double drift_sum = 0.0;
  std::size_t steps = 0;

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    Rng rng(mix_seed(config.seed, 0xE90C0000ULL + epoch));
    rng.shuffle(order);

    EpochMetrics m;
    m.epoch = epoch;
    double epoch_drift = 0.0;
    std::size_t seen = 0;
    for (std::size_t bi = 0; bi < order.size(); ++bi) {
      const Batch& b = train[order[bi]];
      StepResult step;
      try {
        step = train_step(b, model);
      } catch (const NonFiniteLoss&) {
        throw NonFiniteLoss("epoch " + std::to_string(epoch) + ", batch " + std::to_string(order[bi]));
      }
      m.train_loss += step.loss.total * static_cast<double>(b.size());
      seen += b.size();
      epoch_drift += step.gate_drift;
      drift_sum += step.gate_drift;
      ++steps;
    }
    m.train_loss /= static_cast<double>(seen);
    m.mean_gate_drift = epoch_drift / static_cast<double>(order.size());

    if (!valid.empty()) {
      const ValidStats vs = evaluate_batches(valid, model);
      m.valid_loss = vs.loss;
      m.valid_f1 = vs.f1;
      if (vs.f1 > best_f1) {
        best_f1 = vs.f1;
        best = model;
        result.best_epoch = epoch;
      }
    }
    result.history.push_back(m);
  }
  if (best) {
    result.model = std::move(*best);
  } else {
    result.model = std::move(model);
    result.best_epoch = config.epochs;
  }
  result.mean_gate_drift = steps > 0 ? drift_sum / static_cast<double>(steps) : 0.0;
  return result;
}

}  // namespace sael
