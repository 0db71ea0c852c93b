#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "msacl/types.hpp"

namespace msacl {

enum class SplitId { train, valid, test };

const char* to_string(SplitId s);
SplitId split_from_string(const std::string& s);

/// One catalog episode. An episode belongs to exactly one show; the three
/// embedding blocks are fixed inputs produced upstream of this engine.
struct EpisodeRecord {
  std::string episode_id;
  std::string show_id;
  std::vector<int> topics;  // sorted, unique
  int country = 0;
  Vec cf_embedding;
  Vec content_embedding;
  Vec kg_embedding;

  bool operator==(const EpisodeRecord&) const;
};

struct UserRecord {
  std::string user_id;
  int gender = 0;
  int age_bucket = 0;
  int country = 0;
  int language = 0;
  std::vector<int> liked_topics;  // sorted, unique
  Vec cf_embedding;
  Vec podcast_embedding;
  Scalar avg_stream_time = 0;

  bool operator==(const UserRecord&) const;
};

/// Binary positive interactions plus the per-user split assignment.
struct InteractionSet {
  std::vector<std::pair<std::string, std::string>> positives;  // (user, episode)
  std::unordered_map<std::string, SplitId> split;

  bool operator==(const InteractionSet&) const;
};

struct DatasetHeader {
  int format_version = 1;
  std::map<std::string, int> embedding_dims;  // user_cf, user_podcast, ...
  std::string generator_config;               // JSON echo, may be empty

  bool operator==(const DatasetHeader&) const = default;
};

/// Per-field categorical cardinalities; ids are dense 0..V-1 indices.
using Vocab = std::map<std::string, int>;

/// Users, episodes, interactions and the vocabulary/dimension declarations,
/// with derived lookup tables. Immutable after load/finalize; concurrent
/// reads are safe.
struct DatasetBundle {
  std::vector<UserRecord> users;
  std::vector<EpisodeRecord> episodes;
  InteractionSet interactions;
  Vocab vocab;
  DatasetHeader header;

  // Derived indexes, built by finalize().
  std::unordered_map<std::string, int> user_index;
  std::unordered_map<std::string, int> episode_index;
  std::unordered_map<std::string, std::vector<int>> show_episodes;
  std::vector<std::vector<int>> positives_of_user;  // episode indices, by user index

  /// Rebuilds the derived indexes and checks every invariant
  /// (referential integrity, dimension agreement, split partition).
  void finalize();

  int user_at(const std::string& user_id) const;
  int episode_at(const std::string& episode_id) const;
  SplitId split_of(int user_idx) const;

  /// Train-split positives as (user index, episode index) pairs, in file order.
  std::vector<std::pair<int, int>> train_pairs() const;

  /// Train interaction count per episode (popularity).
  std::vector<long> train_counts() const;

  bool operator==(const DatasetBundle& other) const;
};

/// Reads header.json / users.jsonl / episodes.jsonl / interactions.jsonl
/// from `path` and returns a fully validated bundle.
DatasetBundle load_dataset(const std::filesystem::path& path);

/// Writes the on-disk layout read by load_dataset. Deterministic byte
/// output for a given bundle.
void save_dataset(const DatasetBundle& bundle, const std::filesystem::path& path);

/// Assigns every user to train/valid/test. Counts follow the ratios to
/// within one user (largest-remainder rounding); same seed, same partition.
InteractionSet split_users(const DatasetBundle& bundle,
                           const std::array<double, 3>& ratios,
                           std::uint64_t seed);

/// Episode ids whose show contains no episode the user positively
/// interacted with while in the train split. Sorted by episode id.
std::vector<std::string> discovery_candidates(const DatasetBundle& bundle,
                                              const std::string& user_id);

/// Index-based variant used on hot paths; returns episode indices in
/// catalog order.
std::vector<int> discovery_candidate_indices(const DatasetBundle& bundle,
                                             int user_idx);

}  // namespace msacl
