#pragma once

#include <cstdint>
#include <string>
#include <unordered_set>
#include <vector>

#include "msacl/dataset.hpp"
#include "msacl/featurize.hpp"
#include "msacl/tower.hpp"
#include "msacl/types.hpp"

namespace msacl {

// Ranking metrics. `ranked` is a descending-preference list of episode
// indices; `relevant` must be nonempty (callers skip users without
// positives before getting here).
Scalar recall_at_n(const std::vector<int>& ranked,
                   const std::unordered_set<int>& relevant, int n);

// Binary gains with a 1/log2(rank+1) discount (rank is 1-based),
// normalised by the ideal DCG for |relevant| items.
Scalar ndcg_at_n(const std::vector<int>& ranked,
                 const std::unordered_set<int>& relevant, int n);

// Reciprocal rank of the first relevant item over the FULL list; 0 when
// nothing relevant is retrievable.
Scalar mrr(const std::vector<int>& ranked,
           const std::unordered_set<int>& relevant);

struct EvalOptions {
  // Rank only discovery candidates (familiar-show episodes removed). Off
  // ranks the whole catalog.
  bool mask_familiar_shows = true;
  int threads = 1;
  // Upper-inclusive train-count edges; one open bucket is appended, so the
  // default yields {0-1, 2-3, 4-10, 11-50, >50}.
  std::vector<long> bucket_edges = {1, 3, 10, 50};
};

// Scoring interface shared by trained towers and the popularity baselines.
class EpisodeScorer {
 public:
  virtual ~EpisodeScorer() = default;

  virtual const std::string& name() const = 0;

  // One score per candidate, higher means ranked earlier.
  virtual Vec score_candidates(int user_idx,
                               const std::vector<int>& candidates) const = 0;
};

// Dot product of the two tower outputs. Episode embeddings are computed
// once up front; the referenced bundle/encoding/params must outlive the
// scorer.
class TowerScorer final : public EpisodeScorer {
 public:
  TowerScorer(const DatasetBundle& bundle, const EncodedDataset& enc,
              const TowerParams& params, std::string name);

  const std::string& name() const override { return name_; }
  Vec score_candidates(int user_idx,
                       const std::vector<int>& candidates) const override;

 private:
  const EncodedDataset& enc_;
  const TowerParams& params_;
  Mat episode_embeddings_;
  std::string name_;
};

enum class PopKind { global, country, age_country };

// Train-interaction popularity, optionally conditioned on the user's
// country or (age bucket, country) cohort. A cohort with no train
// interactions at all falls back to the global counts.
class PopScorer final : public EpisodeScorer {
 public:
  PopScorer(const DatasetBundle& bundle, PopKind kind);

  const std::string& name() const override { return name_; }
  Vec score_candidates(int user_idx,
                       const std::vector<int>& candidates) const override;

 private:
  const std::vector<long>& cohort_counts(int user_idx) const;

  const DatasetBundle& bundle_;
  PopKind kind_;
  std::string name_;
  std::vector<long> global_;
  std::unordered_map<std::string, std::vector<long>> per_cohort_;
};

// Candidate episodes of `user_idx` ordered by descending score, ties by
// ascending episode id. Returns an empty list when no candidate survives
// masking (the skip-user signal).
std::vector<int> rank_for_user(const EpisodeScorer& scorer,
                               const DatasetBundle& bundle, int user_idx,
                               const EvalOptions& opts = {});

// Whole-catalog popularity orders (no masking); used by fixtures and for
// inspecting the baselines directly.
std::vector<int> pop_rank(const DatasetBundle& bundle);
std::vector<int> pop_country_rank(const DatasetBundle& bundle, int user_idx);
std::vector<int> pop_age_country_rank(const DatasetBundle& bundle,
                                      int user_idx);

struct BucketRow {
  std::string label;
  long interactions = 0;
  Scalar ndcg20 = 0.0;
};

struct RankingReport {
  std::string model;
  std::string split;
  int users_evaluated = 0;
  int users_skipped = 0;
  Scalar recall10 = 0.0;
  Scalar ndcg10 = 0.0;
  Scalar recall20 = 0.0;
  Scalar ndcg20 = 0.0;
  Scalar mrr = 0.0;
  // Popularity breakdown: per-interaction NDCG@20 where only that
  // interaction's episode counts as relevant, grouped by the episode's
  // train-interaction count. Empty buckets are omitted.
  std::vector<BucketRow> buckets;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
};

// Mean metrics over the split's users with at least one positive and a
// nonempty candidate list. Throws ReportError when nobody is evaluable.
RankingReport evaluate_model(const EpisodeScorer& scorer,
                             const DatasetBundle& bundle, SplitId split,
                             const EvalOptions& opts = {});

// Lightweight per-epoch validation hook.
Scalar mean_ndcg_at_n(const EpisodeScorer& scorer, const DatasetBundle& bundle,
                      SplitId split, int n, const EvalOptions& opts = {});

// Human-readable label for the bucket holding `count`.
std::string bucket_label(const std::vector<long>& edges, long count);

// Serialisers. The JSON document lists models in input order; the text
// table mirrors the report columns (Recall@10, NDCG@10, Recall@20,
// NDCG@20, MRR). `timestamp` is the only non-deterministic field and can
// be suppressed.
std::string report_json(const std::vector<RankingReport>& reports,
                        bool include_timestamp = true);
std::string report_table(const std::vector<RankingReport>& reports);

// `model,bucket,interactions,ndcg20` rows, one per non-empty bucket per
// model, in report order.
std::string bucket_csv(const std::vector<RankingReport>& reports);

// Inverse of report_json; throws ParseError on malformed documents.
std::vector<RankingReport> parse_report_json(const std::string& text);

}  // namespace msacl
