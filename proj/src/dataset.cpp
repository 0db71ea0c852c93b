#include "msacl/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "msacl/rng.hpp"

namespace msacl {

using nlohmann::json;

const char* to_string(SplitId s) {
  switch (s) {
    case SplitId::train:
      return "train";
    case SplitId::valid:
      return "valid";
    case SplitId::test:
      return "test";
  }
  return "?";
}

SplitId split_from_string(const std::string& s) {
  if (s == "train") return SplitId::train;
  if (s == "valid") return SplitId::valid;
  if (s == "test") return SplitId::test;
  throw ArgumentError("unknown split name \"" + s + "\"");
}

namespace {

bool vec_equal(const Vec& a, const Vec& b) {
  return a.size() == b.size() && (a.array() == b.array()).all();
}

Vec vec_from_json(const json& j) {
  if (!j.is_array()) throw ParseError("dense vector must be a JSON array");
  Vec v(static_cast<Index>(j.size()));
  Index i = 0;
  for (const auto& x : j) {
    if (!x.is_number()) throw ParseError("dense vector entries must be numbers");
    v[i++] = x.get<double>();
  }
  return v;
}

json vec_to_json(const Vec& v) {
  json j = json::array();
  for (Index i = 0; i < v.size(); ++i) j.push_back(v[i]);
  return j;
}

std::vector<int> int_set_from_json(const json& j, const char* name) {
  if (!j.is_array()) throw ParseError(std::string(name) + " must be a JSON array");
  std::vector<int> out;
  out.reserve(j.size());
  for (const auto& x : j) out.push_back(x.get<int>());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

const json& field(const json& j, const char* name) {
  auto it = j.find(name);
  if (it == j.end()) throw ParseError(std::string("missing field \"") + name + "\"");
  return *it;
}

/// Applies `fn` to every line of a .jsonl file, rethrowing failures as
/// ParseError tagged with file and line number.
template <class Fn>
void for_each_jsonl(const std::filesystem::path& file, Fn&& fn) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open " + file.string());
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      fn(json::parse(line));
    } catch (const ParseError& e) {
      throw ParseError(file.filename().string() + ":" + std::to_string(lineno) +
                       ": " + e.what());
    } catch (const std::exception& e) {
      throw ParseError(file.filename().string() + ":" + std::to_string(lineno) +
                       ": " + e.what());
    }
  }
}

void check_finite(const Vec& v, const std::string& what) {
  if (!v.allFinite()) throw SchemaError("non-finite value in " + what);
}

void check_categorical(const Vocab& vocab, const std::string& key, int value,
                       const std::string& owner) {
  auto it = vocab.find(key);
  if (it == vocab.end()) return;  // undeclared field: not validated, not encoded
  if (value < 0 || value >= it->second) {
    throw IntegrityError("categorical value " + std::to_string(value) +
                         " for field \"" + key + "\" of " + owner +
                         " does not resolve in a vocabulary of size " +
                         std::to_string(it->second));
  }
}

void check_dense_dim(const std::map<std::string, int>& dims,
                     const std::string& key, const Vec& v,
                     const std::string& owner) {
  auto it = dims.find(key);
  const int declared = it == dims.end() ? 0 : it->second;
  if (static_cast<int>(v.size()) != declared) {
    throw SchemaError("dimension mismatch for \"" + key + "\" of " + owner +
                      ": declared " + std::to_string(declared) + ", found " +
                      std::to_string(v.size()));
  }
}

}  // namespace

bool EpisodeRecord::operator==(const EpisodeRecord& o) const {
  return episode_id == o.episode_id && show_id == o.show_id &&
         topics == o.topics && country == o.country &&
         vec_equal(cf_embedding, o.cf_embedding) &&
         vec_equal(content_embedding, o.content_embedding) &&
         vec_equal(kg_embedding, o.kg_embedding);
}

bool UserRecord::operator==(const UserRecord& o) const {
  return user_id == o.user_id && gender == o.gender &&
         age_bucket == o.age_bucket && country == o.country &&
         language == o.language && liked_topics == o.liked_topics &&
         vec_equal(cf_embedding, o.cf_embedding) &&
         vec_equal(podcast_embedding, o.podcast_embedding) &&
         avg_stream_time == o.avg_stream_time;
}

bool InteractionSet::operator==(const InteractionSet& o) const {
  return positives == o.positives && split == o.split;
}

bool DatasetBundle::operator==(const DatasetBundle& o) const {
  return users == o.users && episodes == o.episodes &&
         interactions == o.interactions && vocab == o.vocab &&
         header == o.header;
}

void DatasetBundle::finalize() {
  user_index.clear();
  episode_index.clear();
  show_episodes.clear();
  positives_of_user.clear();

  user_index.reserve(users.size());
  for (std::size_t i = 0; i < users.size(); ++i) {
    if (!user_index.emplace(users[i].user_id, static_cast<int>(i)).second) {
      throw IntegrityError("duplicate user id \"" + users[i].user_id + "\"");
    }
  }
  episode_index.reserve(episodes.size());
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    if (!episode_index.emplace(episodes[i].episode_id, static_cast<int>(i))
             .second) {
      throw IntegrityError("duplicate episode id \"" + episodes[i].episode_id +
                           "\"");
    }
    show_episodes[episodes[i].show_id].push_back(static_cast<int>(i));
  }

  for (const auto& u : users) {
    const std::string owner = "user \"" + u.user_id + "\"";
    check_categorical(vocab, "gender", u.gender, owner);
    check_categorical(vocab, "age_bucket", u.age_bucket, owner);
    check_categorical(vocab, "country", u.country, owner);
    check_categorical(vocab, "language", u.language, owner);
    for (int t : u.liked_topics) check_categorical(vocab, "topic", t, owner);
    check_dense_dim(header.embedding_dims, "user_cf", u.cf_embedding, owner);
    check_dense_dim(header.embedding_dims, "user_podcast", u.podcast_embedding,
                    owner);
    check_finite(u.cf_embedding, owner);
    check_finite(u.podcast_embedding, owner);
    if (!std::isfinite(u.avg_stream_time) || u.avg_stream_time < 0) {
      throw SchemaError("avg_stream_time of " + owner + " must be a nonnegative real");
    }
  }
  for (const auto& e : episodes) {
    const std::string owner = "episode \"" + e.episode_id + "\"";
    check_categorical(vocab, "country", e.country, owner);
    for (int t : e.topics) check_categorical(vocab, "topic", t, owner);
    check_dense_dim(header.embedding_dims, "episode_cf", e.cf_embedding, owner);
    check_dense_dim(header.embedding_dims, "episode_content",
                    e.content_embedding, owner);
    check_dense_dim(header.embedding_dims, "episode_kg", e.kg_embedding, owner);
    check_finite(e.cf_embedding, owner);
    check_finite(e.content_embedding, owner);
    check_finite(e.kg_embedding, owner);
  }

  // Split must be a partition of the user set.
  for (const auto& [uid, s] : interactions.split) {
    (void)s;
    if (!user_index.count(uid)) {
      throw IntegrityError("split assignment references unknown user id \"" +
                           uid + "\"");
    }
  }
  for (const auto& u : users) {
    if (!interactions.split.count(u.user_id)) {
      throw IntegrityError("user \"" + u.user_id + "\" has no split assignment");
    }
  }

  positives_of_user.assign(users.size(), {});
  std::unordered_map<std::string, char> seen_pairs;
  seen_pairs.reserve(interactions.positives.size());
  for (const auto& [uid, eid] : interactions.positives) {
    auto uit = user_index.find(uid);
    if (uit == user_index.end()) {
      throw IntegrityError("interaction references unknown user id \"" + uid +
                           "\"");
    }
    auto eit = episode_index.find(eid);
    if (eit == episode_index.end()) {
      throw IntegrityError("interaction references unknown episode id \"" +
                           eid + "\"");
    }
    if (!seen_pairs.emplace(uid + "\x1f" + eid, 1).second) {
      throw IntegrityError("duplicate interaction (" + uid + ", " + eid + ")");
    }
    positives_of_user[uit->second].push_back(eit->second);
  }
}

int DatasetBundle::user_at(const std::string& user_id) const {
  auto it = user_index.find(user_id);
  if (it == user_index.end()) {
    throw LookupError("unknown user id \"" + user_id + "\"");
  }
  return it->second;
}

int DatasetBundle::episode_at(const std::string& episode_id) const {
  auto it = episode_index.find(episode_id);
  if (it == episode_index.end()) {
    throw LookupError("unknown episode id \"" + episode_id + "\"");
  }
  return it->second;
}

SplitId DatasetBundle::split_of(int user_idx) const {
  return interactions.split.at(users.at(user_idx).user_id);
}

std::vector<std::pair<int, int>> DatasetBundle::train_pairs() const {
  std::vector<std::pair<int, int>> out;
  for (const auto& [uid, eid] : interactions.positives) {
    if (interactions.split.at(uid) == SplitId::train) {
      out.emplace_back(user_index.at(uid), episode_index.at(eid));
    }
  }
  return out;
}

std::vector<long> DatasetBundle::train_counts() const {
  std::vector<long> counts(episodes.size(), 0);
  for (const auto& [u, e] : train_pairs()) {
    (void)u;
    ++counts[e];
  }
  return counts;
}

DatasetBundle load_dataset(const std::filesystem::path& path) {
  DatasetBundle bundle;

  {
    std::ifstream in(path / "header.json");
    if (!in) throw IoError("cannot open " + (path / "header.json").string());
    json h;
    try {
      in >> h;
    } catch (const std::exception& e) {
      throw ParseError("header.json: " + std::string(e.what()));
    }
    bundle.header.format_version = field(h, "format_version").get<int>();
    if (bundle.header.format_version != 1) {
      throw ParseError("unsupported format_version " +
                       std::to_string(bundle.header.format_version));
    }
    for (const auto& [k, v] : field(h, "vocab_sizes").items()) {
      bundle.vocab[k] = v.get<int>();
    }
    for (const auto& [k, v] : field(h, "embedding_dims").items()) {
      bundle.header.embedding_dims[k] = v.get<int>();
    }
    if (h.contains("generator")) {
      bundle.header.generator_config = h["generator"].dump();
    }
  }

  for_each_jsonl(path / "users.jsonl", [&](const json& j) {
    UserRecord u;
    u.user_id = field(j, "user_id").get<std::string>();
    u.gender = field(j, "gender").get<int>();
    u.age_bucket = field(j, "age_bucket").get<int>();
    u.country = field(j, "country").get<int>();
    u.language = field(j, "language").get<int>();
    u.liked_topics = int_set_from_json(field(j, "liked_topics"), "liked_topics");
    u.cf_embedding = vec_from_json(field(j, "cf_embedding"));
    u.podcast_embedding = vec_from_json(field(j, "podcast_embedding"));
    u.avg_stream_time = field(j, "avg_stream_time").get<double>();
    bundle.interactions.split[u.user_id] =
        split_from_string(field(j, "split").get<std::string>());
    bundle.users.push_back(std::move(u));
  });

  for_each_jsonl(path / "episodes.jsonl", [&](const json& j) {
    EpisodeRecord e;
    e.episode_id = field(j, "episode_id").get<std::string>();
    e.show_id = field(j, "show_id").get<std::string>();
    e.topics = int_set_from_json(field(j, "topics"), "topics");
    e.country = field(j, "country").get<int>();
    e.cf_embedding = vec_from_json(field(j, "cf_embedding"));
    e.content_embedding = vec_from_json(field(j, "content_embedding"));
    e.kg_embedding = vec_from_json(field(j, "kg_embedding"));
    bundle.episodes.push_back(std::move(e));
  });

  for_each_jsonl(path / "interactions.jsonl", [&](const json& j) {
    bundle.interactions.positives.emplace_back(
        field(j, "user_id").get<std::string>(),
        field(j, "episode_id").get<std::string>());
  });

  bundle.finalize();
  return bundle;
}

void save_dataset(const DatasetBundle& bundle, const std::filesystem::path& path) {
  std::filesystem::create_directories(path);

  {
    json h;
    h["format_version"] = bundle.header.format_version;
    h["vocab_sizes"] = json(bundle.vocab);
    h["embedding_dims"] = json(bundle.header.embedding_dims);
    if (!bundle.header.generator_config.empty()) {
      h["generator"] = json::parse(bundle.header.generator_config);
    }
    std::ofstream out(path / "header.json");
    if (!out) throw IoError("cannot write " + (path / "header.json").string());
    out << h.dump(2) << "\n";
  }

  {
    std::ofstream out(path / "users.jsonl");
    if (!out) throw IoError("cannot write " + (path / "users.jsonl").string());
    for (const auto& u : bundle.users) {
      json j;
      j["user_id"] = u.user_id;
      j["gender"] = u.gender;
      j["age_bucket"] = u.age_bucket;
      j["country"] = u.country;
      j["language"] = u.language;
      j["liked_topics"] = u.liked_topics;
      j["cf_embedding"] = vec_to_json(u.cf_embedding);
      j["podcast_embedding"] = vec_to_json(u.podcast_embedding);
      j["avg_stream_time"] = u.avg_stream_time;
      j["split"] = to_string(bundle.interactions.split.at(u.user_id));
      out << j.dump() << "\n";
    }
  }

  {
    std::ofstream out(path / "episodes.jsonl");
    if (!out) throw IoError("cannot write " + (path / "episodes.jsonl").string());
    for (const auto& e : bundle.episodes) {
      json j;
      j["episode_id"] = e.episode_id;
      j["show_id"] = e.show_id;
      j["topics"] = e.topics;
      j["country"] = e.country;
      j["cf_embedding"] = vec_to_json(e.cf_embedding);
      j["content_embedding"] = vec_to_json(e.content_embedding);
      j["kg_embedding"] = vec_to_json(e.kg_embedding);
      out << j.dump() << "\n";
    }
  }

  {
    std::ofstream out(path / "interactions.jsonl");
    if (!out) {
      throw IoError("cannot write " + (path / "interactions.jsonl").string());
    }
    for (const auto& [uid, eid] : bundle.interactions.positives) {
      json j;
      j["user_id"] = uid;
      j["episode_id"] = eid;
      out << j.dump() << "\n";
    }
  }
}

InteractionSet split_users(const DatasetBundle& bundle,
                           const std::array<double, 3>& ratios,
                           std::uint64_t seed) {
  double sum = 0;
  for (double r : ratios) {
    if (r <= 0) throw ArgumentError("split ratios must be positive");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ArgumentError("split ratios must sum to 1");
  }

  const std::size_t n = bundle.users.size();
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> fractional{};
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = ratios[i] * static_cast<double>(n);
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    fractional[i] = exact - std::floor(exact);
    assigned += counts[i];
  }
  // Largest-remainder rounding; ties go to the earlier split.
  while (assigned < n) {
    int best = 0;
    for (int i = 1; i < 3; ++i) {
      if (fractional[i] > fractional[best]) best = i;
    }
    ++counts[best];
    fractional[best] = -1;
    ++assigned;
  }

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);

  InteractionSet out = bundle.interactions;
  out.split.clear();
  std::size_t pos = 0;
  for (int s = 0; s < 3; ++s) {
    for (std::size_t k = 0; k < counts[s]; ++k, ++pos) {
      out.split[bundle.users[order[pos]].user_id] = static_cast<SplitId>(s);
    }
  }
  return out;
}

std::vector<int> discovery_candidate_indices(const DatasetBundle& bundle,
                                             int user_idx) {
  if (user_idx < 0 || user_idx >= static_cast<int>(bundle.users.size())) {
    throw LookupError("user index out of range");
  }
  std::unordered_map<std::string, char> familiar;
  if (bundle.split_of(user_idx) == SplitId::train) {
    for (int e : bundle.positives_of_user[user_idx]) {
      familiar.emplace(bundle.episodes[e].show_id, 1);
    }
  }
  std::vector<int> out;
  out.reserve(bundle.episodes.size());
  for (std::size_t i = 0; i < bundle.episodes.size(); ++i) {
    if (!familiar.count(bundle.episodes[i].show_id)) {
      out.push_back(static_cast<int>(i));
    }
  }
  return out;
}

std::vector<std::string> discovery_candidates(const DatasetBundle& bundle,
                                              const std::string& user_id) {
  const int u = bundle.user_at(user_id);
  std::vector<std::string> ids;
  for (int e : discovery_candidate_indices(bundle, u)) {
    ids.push_back(bundle.episodes[e].episode_id);
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace msacl
