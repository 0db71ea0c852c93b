#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "msacl/dataset.hpp"
#include "msacl/types.hpp"

namespace msacl {

// Scale defaults sit near 1/100 of the production corpus the engine was
// designed around, small enough that a full train/evaluate cycle stays in
// the seconds range.
struct SynthConfig {
  int users = 800;
  int shows = 300;
  int episodes_per_show_min = 2;
  int episodes_per_show_max = 5;
  int topics = 12;
  int cf_dim = 8;
  int podcast_dim = 8;
  int content_dim = 16;
  int kg_dim = 16;
  // Mean positives per user; every user gets at least one.
  double interactions_per_user = 5.0;
  // Concentration of a user's topic preference; higher means users stick
  // to one topic.
  double affinity_sharpness = 5.0;
  // 1 plants clean latent-topic geometry in the respective embedding
  // space, 0 replaces it with pure noise.
  double kg_signal_strength = 0.9;
  double content_signal_strength = 0.5;
  // Episode-level perturbation of the inherited show mixture.
  double noise_level = 0.1;
  std::uint64_t seed = 1;
  std::array<double, 3> split_ratios = {0.8, 0.1, 0.1};

  void validate() const;
};

// Planted structure of a generated bundle, exposed for oracle checks.
struct SynthTruth {
  std::vector<int> show_topic;     // dominant latent topic per show
  std::vector<int> episode_topic;  // argmax of the episode's mixture
  std::vector<int> user_topic;     // the preferred topic drawn per user
  std::vector<Vec> episode_mixture;
  std::vector<Vec> user_mixture;
};

// Deterministic per seed; emits a bundle that satisfies every datamodel
// invariant, with all positives being discovery interactions (one show
// is never hit twice by the same user).
DatasetBundle generate(const SynthConfig& config, SynthTruth* truth = nullptr);

}  // namespace msacl
