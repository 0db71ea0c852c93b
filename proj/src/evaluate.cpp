#include "msacl/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "msacl/util.hpp"

namespace msacl {

namespace {

void check_metric_args(const std::unordered_set<int>& relevant, int n) {
  if (relevant.empty()) {
    throw ArgumentError("ranking metric: relevant set is empty");
  }
  if (n <= 0) {
    throw ArgumentError("ranking metric: cutoff must be positive");
  }
}

Scalar log2_discount(int rank_1based) {
  return 1.0 / std::log2(static_cast<Scalar>(rank_1based) + 1.0);
}

}  // namespace

Scalar recall_at_n(const std::vector<int>& ranked,
                   const std::unordered_set<int>& relevant, int n) {
  check_metric_args(relevant, n);
  const int cutoff = std::min<int>(n, static_cast<int>(ranked.size()));
  int hits = 0;
  for (int r = 0; r < cutoff; ++r) {
    if (relevant.count(ranked[r])) ++hits;
  }
  return static_cast<Scalar>(hits) / static_cast<Scalar>(relevant.size());
}

Scalar ndcg_at_n(const std::vector<int>& ranked,
                 const std::unordered_set<int>& relevant, int n) {
  check_metric_args(relevant, n);
  const int cutoff = std::min<int>(n, static_cast<int>(ranked.size()));
  Scalar dcg = 0.0;
  for (int r = 0; r < cutoff; ++r) {
    if (relevant.count(ranked[r])) dcg += log2_discount(r + 1);
  }
  const int ideal_hits = std::min<int>(static_cast<int>(relevant.size()), n);
  Scalar idcg = 0.0;
  for (int r = 1; r <= ideal_hits; ++r) idcg += log2_discount(r);
  return dcg / idcg;
}

Scalar mrr(const std::vector<int>& ranked,
           const std::unordered_set<int>& relevant) {
  if (relevant.empty()) {
    throw ArgumentError("ranking metric: relevant set is empty");
  }
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    if (relevant.count(ranked[r])) {
      return 1.0 / static_cast<Scalar>(r + 1);
    }
  }
  return 0.0;
}

namespace {

// Positions of the episodes under ascending episode_id, the tie order of
// every ranking surface.
std::vector<int> id_ranks(const DatasetBundle& bundle) {
  std::vector<int> order(bundle.episodes.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return bundle.episodes[a].episode_id < bundle.episodes[b].episode_id;
  });
  std::vector<int> rank(order.size());
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    rank[order[pos]] = static_cast<int>(pos);
  }
  return rank;
}

std::vector<int> order_by_score(std::vector<int> candidates, const Vec& scores,
                                const std::vector<int>& id_rank) {
  std::vector<int> slots(candidates.size());
  std::iota(slots.begin(), slots.end(), 0);
  std::sort(slots.begin(), slots.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return id_rank[candidates[a]] < id_rank[candidates[b]];
  });
  std::vector<int> out(candidates.size());
  for (std::size_t i = 0; i < slots.size(); ++i) {
    out[i] = candidates[slots[i]];
  }
  return out;
}

std::vector<int> ranked_for_user_impl(const EpisodeScorer& scorer,
                                      const DatasetBundle& bundle, int user_idx,
                                      const EvalOptions& opts,
                                      const std::vector<int>& id_rank) {
  std::vector<int> candidates;
  if (opts.mask_familiar_shows) {
    candidates = discovery_candidate_indices(bundle, user_idx);
  } else {
    candidates.resize(bundle.episodes.size());
    std::iota(candidates.begin(), candidates.end(), 0);
  }
  if (candidates.empty()) return {};
  const Vec scores = scorer.score_candidates(user_idx, candidates);
  if (static_cast<std::size_t>(scores.size()) != candidates.size()) {
    throw ShapeError("scorer returned " + std::to_string(scores.size()) +
                     " scores for " + std::to_string(candidates.size()) +
                     " candidates");
  }
  return order_by_score(std::move(candidates), scores, id_rank);
}

}  // namespace

std::vector<int> rank_for_user(const EpisodeScorer& scorer,
                               const DatasetBundle& bundle, int user_idx,
                               const EvalOptions& opts) {
  if (user_idx < 0 || user_idx >= static_cast<int>(bundle.users.size())) {
    throw LookupError("rank_for_user: bad user index " +
                      std::to_string(user_idx));
  }
  return ranked_for_user_impl(scorer, bundle, user_idx, opts,
                              id_ranks(bundle));
}

TowerScorer::TowerScorer(const DatasetBundle& bundle, const EncodedDataset& enc,
                         const TowerParams& params, std::string name)
    : enc_(enc), params_(params), name_(std::move(name)) {
  if (enc.episodes.rows() != static_cast<Index>(bundle.episodes.size())) {
    throw ShapeError("TowerScorer: encoding does not match the bundle");
  }
  episode_embeddings_ = tower_forward(params_.episode, enc_.episodes);
}

Vec TowerScorer::score_candidates(int user_idx,
                                  const std::vector<int>& candidates) const {
  const Vec user_in = enc_.users.row(user_idx).transpose();
  const Vec user_emb = tower_forward(params_.user, user_in);
  Vec scores(static_cast<Index>(candidates.size()));
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    scores[static_cast<Index>(i)] =
        episode_embeddings_.row(candidates[i]).dot(user_emb);
  }
  return scores;
}

namespace {

std::string cohort_key(const DatasetBundle& bundle, PopKind kind,
                       int user_idx) {
  const UserRecord& user = bundle.users[user_idx];
  if (kind == PopKind::country) {
    return std::to_string(user.country);
  }
  return std::to_string(user.age_bucket) + ":" + std::to_string(user.country);
}

}  // namespace

PopScorer::PopScorer(const DatasetBundle& bundle, PopKind kind)
    : bundle_(bundle), kind_(kind) {
  switch (kind) {
    case PopKind::global:
      name_ = "pop";
      break;
    case PopKind::country:
      name_ = "pop-country";
      break;
    case PopKind::age_country:
      name_ = "pop-age-country";
      break;
  }
  global_ = bundle.train_counts();
  if (kind_ != PopKind::global) {
    for (const auto& [u, e] : bundle.train_pairs()) {
      auto& counts = per_cohort_[cohort_key(bundle, kind_, u)];
      if (counts.empty()) counts.assign(bundle.episodes.size(), 0);
      ++counts[e];
    }
  }
}

const std::vector<long>& PopScorer::cohort_counts(int user_idx) const {
  if (kind_ == PopKind::global) return global_;
  const auto it = per_cohort_.find(cohort_key(bundle_, kind_, user_idx));
  if (it == per_cohort_.end()) return global_;  // empty cohort: fall back
  return it->second;
}

Vec PopScorer::score_candidates(int user_idx,
                                const std::vector<int>& candidates) const {
  const auto& counts = cohort_counts(user_idx);
  Vec scores(static_cast<Index>(candidates.size()));
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    scores[static_cast<Index>(i)] = static_cast<Scalar>(counts[candidates[i]]);
  }
  return scores;
}

namespace {

std::vector<int> full_catalog_order(const DatasetBundle& bundle,
                                    const std::vector<long>& counts) {
  const auto id_rank = id_ranks(bundle);
  std::vector<int> order(bundle.episodes.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (counts[a] != counts[b]) return counts[a] > counts[b];
    return id_rank[a] < id_rank[b];
  });
  return order;
}

}  // namespace

std::vector<int> pop_rank(const DatasetBundle& bundle) {
  return full_catalog_order(bundle, bundle.train_counts());
}

std::vector<int> pop_country_rank(const DatasetBundle& bundle, int user_idx) {
  PopScorer scorer(bundle, PopKind::country);
  std::vector<int> all(bundle.episodes.size());
  std::iota(all.begin(), all.end(), 0);
  const Vec scores = scorer.score_candidates(user_idx, all);
  std::vector<long> counts(all.size());
  for (std::size_t i = 0; i < all.size(); ++i) {
    counts[i] = static_cast<long>(scores[static_cast<Index>(i)]);
  }
  return full_catalog_order(bundle, counts);
}

std::vector<int> pop_age_country_rank(const DatasetBundle& bundle,
                                      int user_idx) {
  PopScorer scorer(bundle, PopKind::age_country);
  std::vector<int> all(bundle.episodes.size());
  std::iota(all.begin(), all.end(), 0);
  const Vec scores = scorer.score_candidates(user_idx, all);
  std::vector<long> counts(all.size());
  for (std::size_t i = 0; i < all.size(); ++i) {
    counts[i] = static_cast<long>(scores[static_cast<Index>(i)]);
  }
  return full_catalog_order(bundle, counts);
}

std::string bucket_label(const std::vector<long>& edges, long count) {
  for (std::size_t i = 0; i < edges.size(); ++i) {
    if (count <= edges[i]) {
      const long lo = i == 0 ? 0 : edges[i - 1] + 1;
      return std::to_string(lo) + "-" + std::to_string(edges[i]);
    }
  }
  return ">" + std::to_string(edges.back());
}

namespace {

void check_edges(const std::vector<long>& edges) {
  if (edges.empty()) {
    throw ArgumentError("bucket edges must not be empty");
  }
  for (std::size_t i = 0; i < edges.size(); ++i) {
    if (edges[i] < 0 || (i > 0 && edges[i] <= edges[i - 1])) {
      throw ArgumentError("bucket edges must be nonnegative and increasing");
    }
  }
}

std::size_t bucket_of(const std::vector<long>& edges, long count) {
  for (std::size_t i = 0; i < edges.size(); ++i) {
    if (count <= edges[i]) return i;
  }
  return edges.size();
}

struct UserEval {
  bool evaluated = false;
  Scalar recall10 = 0, ndcg10 = 0, recall20 = 0, ndcg20 = 0, mrr_value = 0;
  // (bucket index, per-interaction NDCG@20) rows for the breakdown.
  std::vector<std::pair<std::size_t, Scalar>> interaction_rows;
};

std::vector<UserEval> evaluate_users(const EpisodeScorer& scorer,
                                     const DatasetBundle& bundle,
                                     const EvalOptions& opts,
                                     const std::vector<int>& split_users) {
  check_edges(opts.bucket_edges);
  const auto id_rank = id_ranks(bundle);
  const auto counts = bundle.train_counts();
  std::vector<UserEval> evals(split_users.size());
  parallel_for(split_users.size(), opts.threads, [&](std::size_t slot) {
    const int u = split_users[slot];
    const auto& positives = bundle.positives_of_user[u];
    if (positives.empty()) return;
    const auto ranked = ranked_for_user_impl(scorer, bundle, u, opts, id_rank);
    if (ranked.empty()) return;
    const std::unordered_set<int> relevant(positives.begin(), positives.end());
    UserEval& ev = evals[slot];
    ev.evaluated = true;
    ev.recall10 = recall_at_n(ranked, relevant, 10);
    ev.ndcg10 = ndcg_at_n(ranked, relevant, 10);
    ev.recall20 = recall_at_n(ranked, relevant, 20);
    ev.ndcg20 = ndcg_at_n(ranked, relevant, 20);
    ev.mrr_value = mrr(ranked, relevant);
    for (int episode : positives) {
      Scalar gain = 0.0;
      for (int r = 0; r < std::min<int>(20, static_cast<int>(ranked.size()));
           ++r) {
        if (ranked[r] == episode) {
          gain = log2_discount(r + 1);
          break;
        }
      }
      ev.interaction_rows.emplace_back(bucket_of(opts.bucket_edges,
                                                 counts[episode]),
                                       gain);
    }
  });
  return evals;
}

}  // namespace

RankingReport evaluate_model(const EpisodeScorer& scorer,
                             const DatasetBundle& bundle, SplitId split,
                             const EvalOptions& opts) {
  std::vector<int> split_users;
  for (int u = 0; u < static_cast<int>(bundle.users.size()); ++u) {
    if (bundle.split_of(u) == split) split_users.push_back(u);
  }
  const auto evals = evaluate_users(scorer, bundle, opts, split_users);

  RankingReport report;
  report.model = scorer.name();
  report.split = to_string(split);

  std::vector<std::pair<Scalar, long>> bucket_acc(opts.bucket_edges.size() + 1,
                                                  {0.0, 0});
  for (const auto& ev : evals) {
    if (!ev.evaluated) {
      ++report.users_skipped;
      continue;
    }
    ++report.users_evaluated;
    report.recall10 += ev.recall10;
    report.ndcg10 += ev.ndcg10;
    report.recall20 += ev.recall20;
    report.ndcg20 += ev.ndcg20;
    report.mrr += ev.mrr_value;
    for (const auto& [bucket, gain] : ev.interaction_rows) {
      bucket_acc[bucket].first += gain;
      ++bucket_acc[bucket].second;
    }
  }
  if (report.users_evaluated == 0) {
    throw ReportError("evaluate_model: no evaluable user in split " +
                      std::string(to_string(split)));
  }
  const Scalar inv = 1.0 / static_cast<Scalar>(report.users_evaluated);
  report.recall10 *= inv;
  report.ndcg10 *= inv;
  report.recall20 *= inv;
  report.ndcg20 *= inv;
  report.mrr *= inv;
  for (std::size_t b = 0; b < bucket_acc.size(); ++b) {
    const auto& [sum, n] = bucket_acc[b];
    if (n == 0) continue;  // absent, not zero
    BucketRow row;
    const long probe = b == 0 ? 0 : opts.bucket_edges[b - 1] + 1;
    row.label = bucket_label(opts.bucket_edges, probe);
    row.interactions = n;
    row.ndcg20 = sum / static_cast<Scalar>(n);
    report.buckets.push_back(std::move(row));
  }
  return report;
}

Scalar mean_ndcg_at_n(const EpisodeScorer& scorer, const DatasetBundle& bundle,
                      SplitId split, int n, const EvalOptions& opts) {
  std::vector<int> split_users;
  for (int u = 0; u < static_cast<int>(bundle.users.size()); ++u) {
    if (bundle.split_of(u) == split) split_users.push_back(u);
  }
  const auto id_rank = id_ranks(bundle);
  std::vector<Scalar> values(split_users.size(), -1.0);
  parallel_for(split_users.size(), opts.threads, [&](std::size_t slot) {
    const int u = split_users[slot];
    const auto& positives = bundle.positives_of_user[u];
    if (positives.empty()) return;
    const auto ranked = ranked_for_user_impl(scorer, bundle, u, opts, id_rank);
    if (ranked.empty()) return;
    const std::unordered_set<int> relevant(positives.begin(), positives.end());
    values[slot] = ndcg_at_n(ranked, relevant, n);
  });
  Scalar sum = 0.0;
  long evaluated = 0;
  for (Scalar v : values) {
    if (v >= 0.0) {
      sum += v;
      ++evaluated;
    }
  }
  return evaluated == 0 ? 0.0 : sum / static_cast<Scalar>(evaluated);
}

namespace {

nlohmann::json report_to_json(const RankingReport& report) {
  nlohmann::json buckets = nlohmann::json::array();
  for (const auto& row : report.buckets) {
    buckets.push_back({{"label", row.label},
                       {"interactions", row.interactions},
                       {"ndcg20", row.ndcg20}});
  }
  return {{"model", report.model},
          {"split", report.split},
          {"users_evaluated", report.users_evaluated},
          {"users_skipped", report.users_skipped},
          {"recall10", report.recall10},
          {"ndcg10", report.ndcg10},
          {"recall20", report.recall20},
          {"ndcg20", report.ndcg20},
          {"mrr", report.mrr},
          {"buckets", buckets},
          {"config_hash", to_hex(report.config_hash)},
          {"seed", report.seed}};
}

std::string utc_now() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

std::string report_json(const std::vector<RankingReport>& reports,
                        bool include_timestamp) {
  nlohmann::json doc;
  doc["models"] = nlohmann::json::array();
  for (const auto& report : reports) {
    doc["models"].push_back(report_to_json(report));
  }
  if (include_timestamp) {
    doc["timestamp"] = utc_now();
  }
  return doc.dump(2) + "\n";
}

std::string report_table(const std::vector<RankingReport>& reports) {
  std::ostringstream os;
  os << std::left << std::setw(22) << "model";
  for (const char* col :
       {"Recall@10", "NDCG@10", "Recall@20", "NDCG@20", "MRR"}) {
    os << std::right << std::setw(11) << col;
  }
  os << "\n";
  os << std::string(22 + 5 * 11, '-') << "\n";
  os << std::fixed << std::setprecision(5);
  for (const auto& r : reports) {
    os << std::left << std::setw(22) << r.model;
    os << std::right << std::setw(11) << r.recall10 << std::setw(11) << r.ndcg10
       << std::setw(11) << r.recall20 << std::setw(11) << r.ndcg20
       << std::setw(11) << r.mrr;
    os << "\n";
  }
  return os.str();
}

std::vector<RankingReport> parse_report_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("report document: ") + e.what());
  }
  std::vector<RankingReport> reports;
  try {
    for (const auto& m : doc.at("models")) {
      RankingReport r;
      r.model = m.at("model").get<std::string>();
      r.split = m.at("split").get<std::string>();
      r.users_evaluated = m.at("users_evaluated").get<int>();
      r.users_skipped = m.at("users_skipped").get<int>();
      r.recall10 = m.at("recall10").get<Scalar>();
      r.ndcg10 = m.at("ndcg10").get<Scalar>();
      r.recall20 = m.at("recall20").get<Scalar>();
      r.ndcg20 = m.at("ndcg20").get<Scalar>();
      r.mrr = m.at("mrr").get<Scalar>();
      r.config_hash =
          std::stoull(m.at("config_hash").get<std::string>(), nullptr, 16);
      r.seed = m.at("seed").get<std::uint64_t>();
      for (const auto& b : m.at("buckets")) {
        BucketRow row;
        row.label = b.at("label").get<std::string>();
        row.interactions = b.at("interactions").get<long>();
        row.ndcg20 = b.at("ndcg20").get<Scalar>();
        r.buckets.push_back(std::move(row));
      }
      reports.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("report document: ") + e.what());
  } catch (const std::exception& e) {
    throw ParseError(std::string("report document: ") + e.what());
  }
  return reports;
}

std::string bucket_csv(const std::vector<RankingReport>& reports) {
  std::ostringstream os;
  os << "model,bucket,interactions,ndcg20\n";
  os << std::setprecision(17);
  for (const auto& r : reports) {
    for (const auto& row : r.buckets) {
      os << r.model << "," << row.label << "," << row.interactions << ","
         << row.ndcg20 << "\n";
    }
  }
  return os.str();
}

}  // namespace msacl
