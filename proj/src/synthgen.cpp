#include "msacl/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <Eigen/QR>
#include <nlohmann/json.hpp>

#include "msacl/rng.hpp"

namespace msacl {

namespace {

constexpr int kGenders = 3;
constexpr int kAgeBuckets = 6;
constexpr int kCountries = 6;
constexpr int kLanguages = 4;

// Concentration of a show's mixture on its dominant topic.
constexpr Scalar kShowConcentration = 3.0;
// Background mass spread over the other topics.
constexpr Scalar kMixtureFloor = 0.3;
// Power-law exponent of the episode popularity weights.
constexpr Scalar kPopExponent = 0.85;
// Fraction of interaction draws that come from chart browsing rather
// than taste: the user takes a popular show regardless of topic.
constexpr Scalar kChartDrawRate = 0.25;
// Power applied to the user-show mixture affinity when drawing shows;
// keeps topic preference dominant over raw popularity.
constexpr Scalar kAffinityExponent = 4.0;
// How strongly countries follow topics.
constexpr Scalar kCountryTopicBias = 0.6;
// Signal fraction of the user-side pretrained embeddings.
constexpr Scalar kUserCfSignal = 0.85;
constexpr Scalar kUserPodcastSignal = 0.7;
// Collaborative episode embeddings degrade towards the popularity tail,
// the way real CF vectors do for rarely played items; the KG and content
// spaces stay popularity-independent.
constexpr Scalar kEpisodeCfSignalHead = 0.9;
constexpr Scalar kEpisodeCfSignalTail = 0.15;
// Popular items develop larger collaborative vectors, the familiar
// matrix-factorization norm-popularity correlation.
constexpr Scalar kCfNormPopGain = 0.6;

Scalar exponential(Rng& rng) { return -std::log(1.0 - rng.uniform()); }

int poisson(Rng& rng, Scalar mean) {
  if (mean <= 0.0) return 0;
  const Scalar limit = std::exp(-mean);
  int k = 0;
  Scalar p = 1.0;
  do {
    ++k;
    p *= rng.uniform();
  } while (p > limit);
  return k - 1;
}

std::string padded_id(const char* prefix, int value, int width) {
  std::string digits = std::to_string(value);
  std::string out(prefix);
  out.append(static_cast<std::size_t>(width) - std::min<std::size_t>(
                                                   digits.size(), width),
             '0');
  out += digits;
  return out;
}

// Near-isometric embedding of topic space: orthonormal columns whenever
// dim >= topics, plain normalized Gaussian columns otherwise.
Mat topic_projection(int dim, int topics, std::uint64_t seed) {
  Rng rng(seed);
  Mat a(dim, topics);
  for (int c = 0; c < topics; ++c) {
    for (int r = 0; r < dim; ++r) a(r, c) = rng.normal();
  }
  if (dim >= topics) {
    Eigen::HouseholderQR<Mat> qr(a);
    return qr.householderQ() * Mat::Identity(dim, topics);
  }
  for (int c = 0; c < topics; ++c) a.col(c).normalize();
  return a;
}

Vec unit_noise(int dim, Rng& rng) {
  Vec v(dim);
  for (int i = 0; i < dim; ++i) v[i] = rng.normal();
  const Scalar norm = v.norm();
  return norm > 0 ? Vec(v / norm) : v;
}

// signal_strength * (projected unit mixture) + (1 - strength) * noise.
Vec embed_mixture(const Mat& projection, const Vec& mixture, Scalar strength,
                  Rng& rng) {
  const Vec unit = mixture / mixture.norm();
  return strength * (projection * unit) +
         (1.0 - strength) * unit_noise(static_cast<int>(projection.rows()),
                                       rng);
}

// Pretrained spaces (DistMult-style KG, text semantics) encode topical
// proximity in their metric without being axis-aligned readouts of it.
// A fixed odd bi-Lipschitz bend between two rotations reproduces that:
// neighborhoods survive, per-coordinate linear decoding does not.
struct SpaceWarp {
  Mat rotation_a;
  Mat rotation_b;
};

Mat space_rotation(int dim, std::uint64_t seed) {
  Rng rng(seed);
  Mat a(dim, dim);
  for (int c = 0; c < dim; ++c) {
    for (int r = 0; r < dim; ++r) a(r, c) = rng.normal();
  }
  Eigen::HouseholderQR<Mat> qr(a);
  return qr.householderQ() * Mat::Identity(dim, dim);
}

SpaceWarp make_warp(int dim, std::uint64_t seed) {
  return {space_rotation(dim, derive_seed(seed, "a")),
          space_rotation(dim, derive_seed(seed, "b"))};
}

Vec bend(const Vec& v) {
  Vec out(v.size());
  for (Index i = 0; i < v.size(); ++i) {
    out[i] = v[i] + 8.0 * v[i] * v[i] * v[i];
  }
  return out;
}

Vec warp_space(const SpaceWarp& warp, const Vec& v) {
  return warp.rotation_b * bend(Vec(warp.rotation_a * bend(v)));
}

std::vector<int> argsort_desc(const Vec& v) {
  std::vector<int> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (v[a] != v[b]) return v[a] > v[b];
    return a < b;
  });
  return order;
}

int biased_category(Rng& rng, int topic, int cardinality) {
  if (rng.uniform() < kCountryTopicBias) return topic % cardinality;
  return static_cast<int>(rng.uniform_u64(cardinality));
}

std::string config_json(const SynthConfig& c) {
  nlohmann::json j;
  j["users"] = c.users;
  j["shows"] = c.shows;
  j["episodes_per_show_min"] = c.episodes_per_show_min;
  j["episodes_per_show_max"] = c.episodes_per_show_max;
  j["topics"] = c.topics;
  j["cf_dim"] = c.cf_dim;
  j["podcast_dim"] = c.podcast_dim;
  j["content_dim"] = c.content_dim;
  j["kg_dim"] = c.kg_dim;
  j["interactions_per_user"] = c.interactions_per_user;
  j["affinity_sharpness"] = c.affinity_sharpness;
  j["kg_signal_strength"] = c.kg_signal_strength;
  j["content_signal_strength"] = c.content_signal_strength;
  j["noise_level"] = c.noise_level;
  j["seed"] = c.seed;
  j["split_ratios"] = {c.split_ratios[0], c.split_ratios[1], c.split_ratios[2]};
  return j.dump();
}

}  // namespace

void SynthConfig::validate() const {
  if (users <= 0 || shows <= 0 || topics <= 0) {
    throw ConfigError("synthgen: users, shows and topics must be positive");
  }
  if (episodes_per_show_min <= 0 ||
      episodes_per_show_max < episodes_per_show_min) {
    throw ConfigError("synthgen: bad episodes-per-show range");
  }
  if (cf_dim <= 0 || podcast_dim <= 0 || content_dim <= 0 || kg_dim <= 0) {
    throw ConfigError("synthgen: embedding dims must be positive");
  }
  if (kg_signal_strength < 0.0 || kg_signal_strength > 1.0 ||
      content_signal_strength < 0.0 || content_signal_strength > 1.0) {
    throw ConfigError("synthgen: signal strengths must lie in [0,1]");
  }
  if (noise_level < 0.0) {
    throw ConfigError("synthgen: noise level must be nonnegative");
  }
  if (affinity_sharpness <= 0.0) {
    throw ConfigError("synthgen: affinity sharpness must be positive");
  }
  if (interactions_per_user < 1.0) {
    throw ConfigError("synthgen: interactions per user must be at least 1");
  }
  if (interactions_per_user > static_cast<double>(shows)) {
    throw ConfigError(
        "synthgen: more positives requested per user than shows exist; "
        "discovery interactions cannot repeat a show");
  }
}

DatasetBundle generate(const SynthConfig& config, SynthTruth* truth) {
  config.validate();

  Rng show_rng(derive_seed(config.seed, "shows"));
  Rng episode_rng(derive_seed(config.seed, "episodes"));
  Rng user_rng(derive_seed(config.seed, "users"));
  Rng pop_rng(derive_seed(config.seed, "popularity"));
  Rng inter_rng(derive_seed(config.seed, "interactions"));

  const Mat q_kg = topic_projection(config.kg_dim, config.topics,
                                    derive_seed(config.seed, "proj-kg"));
  const Mat q_content =
      topic_projection(config.content_dim, config.topics,
                       derive_seed(config.seed, "proj-content"));
  const Mat q_episode_cf = topic_projection(
      config.cf_dim, config.topics, derive_seed(config.seed, "proj-ecf"));
  const Mat q_user_cf = topic_projection(config.cf_dim, config.topics,
                                         derive_seed(config.seed, "proj-ucf"));
  const Mat q_user_podcast =
      topic_projection(config.podcast_dim, config.topics,
                       derive_seed(config.seed, "proj-upodcast"));
  const SpaceWarp r_kg = make_warp(config.kg_dim,
                                   derive_seed(config.seed, "rot-kg"));
  const SpaceWarp r_content =
      make_warp(config.content_dim, derive_seed(config.seed, "rot-content"));

  // Shows: a dominant topic (round-robin, so every topic is covered), a
  // concentrated mixture and a country leaning towards the topic.
  std::vector<int> show_topic(config.shows);
  std::vector<int> show_country(config.shows);
  Mat show_mixture(config.shows, config.topics);
  for (int s = 0; s < config.shows; ++s) {
    show_topic[s] = s % config.topics;
    Vec raw(config.topics);
    for (int t = 0; t < config.topics; ++t) {
      raw[t] = kMixtureFloor * exponential(show_rng);
    }
    raw[show_topic[s]] += kShowConcentration;
    show_mixture.row(s) = raw.transpose() / raw.sum();
    show_country[s] = biased_category(show_rng, show_topic[s], kCountries);
  }

  DatasetBundle bundle;
  bundle.vocab = {{"gender", kGenders},
                  {"age_bucket", kAgeBuckets},
                  {"country", kCountries},
                  {"language", kLanguages},
                  {"topic", config.topics}};
  bundle.header.format_version = 1;
  bundle.header.embedding_dims = {{"user_cf", config.cf_dim},
                                  {"user_podcast", config.podcast_dim},
                                  {"user_avg_stream_time", 1},
                                  {"episode_cf", config.cf_dim},
                                  {"episode_content", config.content_dim},
                                  {"episode_kg", config.kg_dim}};
  bundle.header.generator_config = config_json(config);

  // Episodes inherit their show's mixture plus noise.
  std::vector<int> episode_show;
  std::vector<Vec> episode_mixture;
  std::vector<int> episode_topic;
  for (int s = 0; s < config.shows; ++s) {
    const int span = config.episodes_per_show_max - config.episodes_per_show_min;
    const int count =
        config.episodes_per_show_min +
        (span > 0 ? static_cast<int>(episode_rng.uniform_u64(span + 1)) : 0);
    for (int e = 0; e < count; ++e) {
      Vec mix = show_mixture.row(s).transpose();
      if (config.noise_level > 0.0) {
        for (int t = 0; t < config.topics; ++t) {
          mix[t] += config.noise_level * exponential(episode_rng) /
                    static_cast<Scalar>(config.topics);
        }
        mix /= mix.sum();
      }
      episode_show.push_back(s);
      episode_mixture.push_back(mix);
      int best = 0;
      for (int t = 1; t < config.topics; ++t) {
        if (mix[t] > mix[best]) best = t;
      }
      episode_topic.push_back(best);
    }
  }
  const int n_episodes = static_cast<int>(episode_show.size());

  // Popularity: a power law over a seeded rank permutation. The rank also
  // drives how faithful the collaborative embedding is.
  std::vector<int> pop_order(n_episodes);
  std::iota(pop_order.begin(), pop_order.end(), 0);
  pop_rng.shuffle(pop_order);
  std::vector<int> pop_rank(n_episodes);
  for (int r = 0; r < n_episodes; ++r) pop_rank[pop_order[r]] = r;
  std::vector<Scalar> pop_weight(n_episodes);
  for (int i = 0; i < n_episodes; ++i) {
    pop_weight[i] = std::pow(static_cast<Scalar>(pop_rank[i] + 1),
                             -kPopExponent);
  }

  const int episode_width = n_episodes >= 10000 ? 6 : 5;
  bundle.episodes.resize(n_episodes);
  for (int i = 0; i < n_episodes; ++i) {
    EpisodeRecord& rec = bundle.episodes[i];
    rec.episode_id = padded_id("ep", i, episode_width);
    rec.show_id = padded_id("s", episode_show[i], 4);
    rec.country = show_country[episode_show[i]];

    const Vec& mix = episode_mixture[i];
    const auto order = argsort_desc(mix);
    std::vector<int> topics;
    if (episode_rng.uniform() < 0.75) topics.push_back(order[0]);
    if (config.topics > 1 && episode_rng.uniform() < 0.4) {
      topics.push_back(order[1]);
    }
    if (config.topics > 2 && episode_rng.uniform() < 0.2) {
      topics.push_back(order[2]);
    }
    if (topics.empty()) {
      topics.push_back(
          static_cast<int>(episode_rng.uniform_u64(config.topics)));
    }
    std::sort(topics.begin(), topics.end());
    topics.erase(std::unique(topics.begin(), topics.end()), topics.end());
    rec.topics = std::move(topics);

    const Scalar head = static_cast<Scalar>(n_episodes - 1 - pop_rank[i]) /
                        static_cast<Scalar>(std::max(1, n_episodes - 1));
    const Scalar cf_signal =
        kEpisodeCfSignalTail +
        (kEpisodeCfSignalHead - kEpisodeCfSignalTail) * head * head;
    rec.cf_embedding = (1.0 + kCfNormPopGain * head * head) *
                       embed_mixture(q_episode_cf, mix, cf_signal,
                                     episode_rng);
    rec.content_embedding = warp_space(
        r_content, embed_mixture(q_content, mix,
                                 config.content_signal_strength, episode_rng));
    rec.kg_embedding = warp_space(
        r_kg,
        embed_mixture(q_kg, mix, config.kg_signal_strength, episode_rng));
  }

  // Users: a preferred topic with a sharpness-controlled mixture.
  std::vector<Vec> user_mixture(config.users);
  std::vector<int> user_topic(config.users);
  bundle.users.resize(config.users);
  for (int u = 0; u < config.users; ++u) {
    UserRecord& rec = bundle.users[u];
    rec.user_id = padded_id("u", u, 5);
    user_topic[u] = static_cast<int>(user_rng.uniform_u64(config.topics));
    Vec raw(config.topics);
    for (int t = 0; t < config.topics; ++t) {
      raw[t] = kMixtureFloor * exponential(user_rng);
    }
    raw[user_topic[u]] += config.affinity_sharpness;
    user_mixture[u] = raw / raw.sum();

    rec.gender = static_cast<int>(user_rng.uniform_u64(kGenders));
    rec.age_bucket = static_cast<int>(user_rng.uniform_u64(kAgeBuckets));
    rec.country = biased_category(user_rng, user_topic[u], kCountries);
    rec.language = static_cast<int>(user_rng.uniform_u64(kLanguages));

    const auto order = argsort_desc(user_mixture[u]);
    rec.liked_topics = {order[0]};
    if (config.topics > 1) rec.liked_topics.push_back(order[1]);
    std::sort(rec.liked_topics.begin(), rec.liked_topics.end());

    rec.cf_embedding =
        embed_mixture(q_user_cf, user_mixture[u], kUserCfSignal, user_rng);
    rec.podcast_embedding = embed_mixture(q_user_podcast, user_mixture[u],
                                          kUserPodcastSignal, user_rng);
    rec.avg_stream_time =
        std::clamp(0.5 + 0.2 * user_rng.normal(), 0.0, 1.0);
  }

  // Positives: repeatedly pick a show by affinity x popularity among the
  // shows the user has not touched, then an episode inside it by
  // popularity. Never revisiting a show makes every positive a discovery
  // interaction by construction.
  std::vector<std::vector<int>> show_members(config.shows);
  for (int i = 0; i < n_episodes; ++i) {
    show_members[episode_show[i]].push_back(i);
  }
  std::vector<Scalar> show_pop(config.shows, 0.0);
  for (int s = 0; s < config.shows; ++s) {
    for (int i : show_members[s]) show_pop[s] += pop_weight[i];
  }

  for (int u = 0; u < config.users; ++u) {
    const int wanted =
        std::min(config.shows,
                 1 + poisson(inter_rng, config.interactions_per_user - 1.0));
    const Vec unit_user = user_mixture[u] / user_mixture[u].norm();
    std::vector<char> used(config.shows, 0);
    for (int k = 0; k < wanted; ++k) {
      const bool chart_draw = inter_rng.uniform() < kChartDrawRate;
      Scalar total = 0.0;
      std::vector<Scalar> weight(config.shows, 0.0);
      for (int s = 0; s < config.shows; ++s) {
        if (used[s]) continue;
        if (chart_draw) {
          weight[s] = show_pop[s];
        } else {
          const Vec unit_show =
              show_mixture.row(s).transpose() / show_mixture.row(s).norm();
          const Scalar affinity =
              std::max<Scalar>(0.0, unit_user.dot(unit_show));
          weight[s] = std::pow(affinity, kAffinityExponent) * show_pop[s];
        }
        total += weight[s];
      }
      if (total <= 0.0) break;
      Scalar draw = inter_rng.uniform() * total;
      int chosen = -1;
      for (int s = 0; s < config.shows; ++s) {
        if (used[s]) continue;
        draw -= weight[s];
        if (draw <= 0.0) {
          chosen = s;
          break;
        }
      }
      if (chosen < 0) {
        for (int s = config.shows - 1; s >= 0; --s) {
          if (!used[s]) {
            chosen = s;
            break;
          }
        }
      }
      used[chosen] = 1;
      Scalar member_total = 0.0;
      for (int i : show_members[chosen]) member_total += pop_weight[i];
      Scalar pick = inter_rng.uniform() * member_total;
      int episode = show_members[chosen].back();
      for (int i : show_members[chosen]) {
        pick -= pop_weight[i];
        if (pick <= 0.0) {
          episode = i;
          break;
        }
      }
      bundle.interactions.positives.emplace_back(
          bundle.users[u].user_id, bundle.episodes[episode].episode_id);
    }
  }

  bundle.interactions =
      split_users(bundle, config.split_ratios, derive_seed(config.seed,
                                                           "split"));
  bundle.finalize();

  if (truth) {
    truth->show_topic = std::move(show_topic);
    truth->episode_topic = std::move(episode_topic);
    truth->user_topic = std::move(user_topic);
    truth->episode_mixture = std::move(episode_mixture);
    truth->user_mixture = std::move(user_mixture);
  }
  return bundle;
}

}  // namespace msacl
