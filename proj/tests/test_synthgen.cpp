#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <map>
#include <set>
#include <string>
#include <vector>

#include "msacl/neighbors.hpp"
#include "msacl/synthgen.hpp"

using namespace msacl;

namespace {

SynthConfig small_config(std::uint64_t seed) {
  SynthConfig cfg;
  cfg.users = 300;
  cfg.shows = 150;
  cfg.episodes_per_show_min = 2;
  cfg.episodes_per_show_max = 4;
  cfg.seed = seed;
  return cfg;
}

// Fraction of top-10 kg neighbors sharing the query's planted topic.
double kg_topic_agreement(const DatasetBundle& bundle,
                          const SynthTruth& truth) {
  EpisodeNeighborIndex index = build_index(bundle, SpaceTag::kg);
  long same = 0, total = 0;
  for (int e = 0; e < static_cast<int>(bundle.episodes.size()); ++e) {
    for (int n : index.query_topk_rows(e, 10)) {
      same += truth.episode_topic[n] == truth.episode_topic[e];
      ++total;
    }
  }
  return static_cast<double>(same) / static_cast<double>(total);
}

}  // namespace

TEST_CASE("generation is deterministic per seed") {
  const SynthConfig cfg = small_config(3);
  const DatasetBundle a = generate(cfg);
  const DatasetBundle b = generate(cfg);
  CHECK(a == b);

  const DatasetBundle c = generate(small_config(4));
  CHECK(!(a == c));
}

TEST_CASE("generated bundles satisfy the datamodel invariants") {
  SynthTruth truth;
  const SynthConfig cfg = small_config(5);
  DatasetBundle b = generate(cfg, &truth);

  CHECK(static_cast<int>(b.users.size()) == cfg.users);
  const int n_episodes = static_cast<int>(b.episodes.size());
  CHECK(n_episodes >= cfg.shows * cfg.episodes_per_show_min);
  CHECK(n_episodes <= cfg.shows * cfg.episodes_per_show_max);

  // finalize() re-checks everything; a generated bundle must pass as-is.
  CHECK_NOTHROW(b.finalize());

  // Truth tables line up with the catalog.
  CHECK(truth.show_topic.size() == static_cast<std::size_t>(cfg.shows));
  CHECK(truth.episode_topic.size() == static_cast<std::size_t>(n_episodes));
  CHECK(truth.user_topic.size() == static_cast<std::size_t>(cfg.users));
  REQUIRE(truth.episode_mixture.size() == static_cast<std::size_t>(n_episodes));
  REQUIRE(truth.user_mixture.size() == static_cast<std::size_t>(cfg.users));
  for (int e = 0; e < n_episodes; ++e) {
    REQUIRE(truth.episode_mixture[e].size() == cfg.topics);
    Index argmax = 0;
    truth.episode_mixture[e].maxCoeff(&argmax);
    CHECK(static_cast<int>(argmax) == truth.episode_topic[e]);
  }

  // Split ratios hold to within one user.
  std::map<SplitId, int> split_counts;
  for (const auto& [id, sp] : b.interactions.split) ++split_counts[sp];
  CHECK(split_counts[SplitId::train] == 240);
  CHECK(split_counts[SplitId::valid] == 30);
  CHECK(split_counts[SplitId::test] == 30);
}

TEST_CASE("every positive is a discovery interaction") {
  const DatasetBundle b = generate(small_config(6));
  std::set<std::pair<std::string, std::string>> seen;  // (user, show)
  for (const auto& [uid, eid] : b.interactions.positives) {
    const auto& show = b.episodes[b.episode_at(eid)].show_id;
    const bool inserted = seen.insert({uid, show}).second;
    CHECK(inserted);  // one show is never hit twice by the same user
  }
}

TEST_CASE("interaction density tracks the configured mean") {
  SynthConfig cfg;
  cfg.seed = 7;
  const DatasetBundle b = generate(cfg);
  const double per_user = static_cast<double>(b.interactions.positives.size()) /
                          static_cast<double>(cfg.users);
  CHECK(per_user > cfg.interactions_per_user * 0.95);
  CHECK(per_user < cfg.interactions_per_user * 1.05);

  // Every user keeps at least one positive.
  std::set<std::string> with_positive;
  for (const auto& [uid, eid] : b.interactions.positives) {
    with_positive.insert(uid);
  }
  CHECK(with_positive.size() == static_cast<std::size_t>(cfg.users));
}

TEST_CASE("kg signal strength controls planted topic geometry") {
  SynthTruth truth;
  SynthConfig clean = small_config(8);
  clean.kg_signal_strength = 1.0;
  clean.noise_level = 0.0;
  const DatasetBundle pure = generate(clean, &truth);
  CHECK(kg_topic_agreement(pure, truth) >= 0.95);

  SynthTruth noise_truth;
  SynthConfig washed = small_config(8);
  washed.kg_signal_strength = 0.0;
  const DatasetBundle noise = generate(washed, &noise_truth);
  // With no signal the agreement collapses toward chance (1/topics).
  CHECK(kg_topic_agreement(noise, noise_truth) < 0.2);
}

TEST_CASE("config validation rejects malformed settings") {
  SynthConfig cfg;
  cfg.users = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = SynthConfig{};
  cfg.episodes_per_show_min = 5;
  cfg.episodes_per_show_max = 2;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = SynthConfig{};
  cfg.kg_signal_strength = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = SynthConfig{};
  cfg.split_ratios = {0.5, 0.5, 0.5};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = SynthConfig{};
  cfg.interactions_per_user = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("generator scales stay within catalog bounds across seeds") {
  for (std::uint64_t seed : {11, 12, 13}) {
    SynthConfig cfg = small_config(seed);
    const DatasetBundle b = generate(cfg);
    for (const auto& [show, eps] : b.show_episodes) {
      CHECK(static_cast<int>(eps.size()) >= cfg.episodes_per_show_min);
      CHECK(static_cast<int>(eps.size()) <= cfg.episodes_per_show_max);
    }
  }
}
