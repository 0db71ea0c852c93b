#pragma once

// Hand-built miniature bundles shared by the unit tests.

#include <initializer_list>
#include <string>

#include "msacl/dataset.hpp"
#include "msacl/types.hpp"

namespace msacl::testing {

inline Vec make_vec(std::initializer_list<Scalar> xs) {
  Vec v(static_cast<Index>(xs.size()));
  Index i = 0;
  for (Scalar x : xs) v[i++] = x;
  return v;
}

inline UserRecord make_user(const std::string& id, int gender, int age,
                            int country, int language) {
  UserRecord u;
  u.user_id = id;
  u.gender = gender;
  u.age_bucket = age;
  u.country = country;
  u.language = language;
  u.liked_topics = {0, 2};
  u.cf_embedding = make_vec({0.1, 0.2});
  u.podcast_embedding = make_vec({0.3, -0.1});
  u.avg_stream_time = 12.5;
  return u;
}

inline EpisodeRecord make_episode(const std::string& id,
                                  const std::string& show, int country) {
  EpisodeRecord e;
  e.episode_id = id;
  e.show_id = show;
  e.topics = {1};
  e.country = country;
  e.cf_embedding = make_vec({0.5, 0.5});
  e.content_embedding = make_vec({1.0, 0.0, -1.0});
  e.kg_embedding = make_vec({0.0, 1.0, 1.0});
  return e;
}

/// Two shows, five episodes, four users. u0/u1 train, u2 valid, u3 test.
inline DatasetBundle tiny_bundle() {
  DatasetBundle b;
  b.vocab = {{"gender", 3}, {"age_bucket", 6}, {"country", 4},
             {"language", 2}, {"topic", 4}};
  b.header.embedding_dims = {{"user_cf", 2},      {"user_podcast", 2},
                             {"user_avg_stream_time", 1},
                             {"episode_cf", 2},   {"episode_content", 3},
                             {"episode_kg", 3}};
  b.users = {make_user("u0", 0, 1, 0, 0), make_user("u1", 1, 2, 1, 1),
             make_user("u2", 2, 3, 2, 0), make_user("u3", 0, 4, 3, 1)};
  b.episodes = {make_episode("e0", "sA", 0), make_episode("e1", "sA", 1),
                make_episode("e2", "sB", 2), make_episode("e3", "sB", 3),
                make_episode("e4", "sB", 0)};
  b.interactions.positives = {{"u0", "e0"}, {"u0", "e2"}, {"u1", "e3"},
                              {"u2", "e1"}, {"u3", "e4"}};
  b.interactions.split = {{"u0", SplitId::train},
                          {"u1", SplitId::train},
                          {"u2", SplitId::valid},
                          {"u3", SplitId::test}};
  b.finalize();
  return b;
}

}  // namespace msacl::testing
