#include "sael/synthetic.hpp"

#include <cmath>

#include "sael/errors.hpp"
#include "sael/rng.hpp"

namespace sael {

namespace {

Embedding unit_direction(std::size_t d, Rng& rng) {
  Embedding u(d);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (double& x : u) {
      x = rng.normal();
      norm += x * x;
    }
  } while (norm == 0.0);
  norm = std::sqrt(norm);
  for (double& x : u) x /= norm;
  return u;
}

Embedding gaussian_view(double sign, double separation, const Embedding& dir, Rng& rng) {
  Embedding v(dir.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = sign * separation * dir[i] + rng.normal();
  return v;
}

}  // namespace

LabeledBundles make_synthetic(const SyntheticSpec& spec) {
  if (spec.d < 2) throw DataError("synthetic data needs d >= 2");
  Rng dir_rng(mix_seed(spec.seed, 0xD1));
  const Embedding u_raw = unit_direction(spec.d, dir_rng);
  const Embedding u_expl = unit_direction(spec.d, dir_rng);

  Rng rng(mix_seed(spec.seed, 0xDA7A));
  LabeledBundles out;
  out.bundles.reserve(spec.n);
  out.labels.reserve(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    const int y = rng.bernoulli(spec.positive_rate) ? 1 : 0;
    const double s = y == 1 ? 1.0 : -1.0;
    FeatureBundle b;
    b.raw = gaussian_view(s, spec.raw_separation, u_raw, rng);
    b.expl = gaussian_view(s, spec.expl_separation, u_expl, rng);
    const bool correct = rng.bernoulli(spec.pred_accuracy);
    b.pred = embed_pred(verdict_of(correct ? y : 1 - y), spec.d);
    out.bundles.push_back(std::move(b));
    out.labels.push_back(y);
  }
  return out;
}

Dataset split_dataset(const LabeledBundles& all) {
  const std::size_t n = all.size();
  const std::size_t n_train = n * 3 / 5;
  const std::size_t n_valid = n / 5;
  Dataset ds;
  auto slice = [&](std::size_t from, std::size_t to, LabeledBundles& dst) {
    for (std::size_t i = from; i < to; ++i) {
      dst.bundles.push_back(all.bundles[i]);
      dst.labels.push_back(all.labels[i]);
    }
  };
  slice(0, n_train, ds.train);
  slice(n_train, n_train + n_valid, ds.valid);
  slice(n_train + n_valid, n, ds.test);
  return ds;
}

Dataset make_synthetic_dataset(const SyntheticSpec& spec) { return split_dataset(make_synthetic(spec)); }

}  // namespace sael
