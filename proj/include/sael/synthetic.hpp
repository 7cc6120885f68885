#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "sael/features.hpp"

namespace sael {

struct LabeledBundles {
  std::vector<FeatureBundle> bundles;
  std::vector<int> labels;

  std::size_t size() const noexcept { return bundles.size(); }
};

struct Dataset {
  LabeledBundles train, valid, test;
};

// Gaussian views of a binary label. For class sign s in {+1, -1}:
//   raw  = s * raw_separation  * u_raw  + N(0, I)
//   expl = s * expl_separation * u_expl + N(0, I)
//   pred = one-hot of the label, flipped with probability 1 - pred_accuracy
// u_raw and u_expl are seeded random unit directions. The views are
// conditionally independent given the label, so the Bayes accuracy of a single
// Gaussian view is Phi(separation) and combining views strictly helps.
struct SyntheticSpec {
  std::size_t n = 500;
  std::size_t d = 16;
  double raw_separation = 1.0;
  double expl_separation = 1.0;
  double pred_accuracy = 0.75;
  double positive_rate = 0.5;
  std::uint64_t seed = 0;
};

LabeledBundles make_synthetic(const SyntheticSpec& spec);

// First 60% train, next 20% valid, last 20% test (samples are i.i.d.).
Dataset split_dataset(const LabeledBundles& all);
Dataset make_synthetic_dataset(const SyntheticSpec& spec);

}  // namespace sael
