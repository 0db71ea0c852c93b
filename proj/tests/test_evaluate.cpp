#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include "fixtures.hpp"
#include "msacl/evaluate.hpp"
#include "msacl/rng.hpp"

using namespace msacl;
using namespace msacl::testing;

namespace {

// From-definition re-implementations used as oracles. Plain loops, no
// shared helpers with the library.
double oracle_recall(const std::vector<int>& ranked, const std::set<int>& rel,
                     int n) {
  int hits = 0;
  for (int i = 0; i < n && i < static_cast<int>(ranked.size()); ++i) {
    hits += rel.count(ranked[i]) ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(rel.size());
}

double oracle_ndcg(const std::vector<int>& ranked, const std::set<int>& rel,
                   int n) {
  double dcg = 0.0;
  for (int i = 0; i < n && i < static_cast<int>(ranked.size()); ++i) {
    if (rel.count(ranked[i])) dcg += 1.0 / std::log2(i + 2.0);
  }
  double idcg = 0.0;
  const int ideal = std::min<int>(static_cast<int>(rel.size()), n);
  for (int i = 0; i < ideal; ++i) idcg += 1.0 / std::log2(i + 2.0);
  return dcg / idcg;
}

double oracle_mrr(const std::vector<int>& ranked, const std::set<int>& rel) {
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    if (rel.count(ranked[i])) return 1.0 / static_cast<double>(i + 1);
  }
  return 0.0;
}

/// Ten single-episode shows, four train users with known counts, plus one
/// test user per interesting cohort. Train interaction counts:
///   e1: 2, e0/e2/e3/e4: 1, e5..e9: 0.
DatasetBundle pop_fixture() {
  DatasetBundle b;
  b.vocab = {{"gender", 2}, {"age_bucket", 2}, {"country", 3},
             {"language", 1}, {"topic", 2}};
  b.header.embedding_dims = {{"user_cf", 2},      {"user_podcast", 2},
                             {"user_avg_stream_time", 1},
                             {"episode_cf", 2},   {"episode_content", 3},
                             {"episode_kg", 3}};
  auto user = [&](const std::string& id, int age, int country) {
    UserRecord u = make_user(id, 0, age, country, 0);
    u.liked_topics = {0};
    return u;
  };
  // Train: t0 (age 0, country 0), t1 (age 1, country 0), t2 (age 0, country 1).
  b.users = {user("t0", 0, 0), user("t1", 1, 0), user("t2", 0, 1),
             user("x0", 0, 0), user("y1", 1, 1), user("z2", 1, 2)};
  for (int e = 0; e < 10; ++e) {
    EpisodeRecord ep =
        make_episode("e" + std::to_string(e), "s" + std::to_string(e), 0);
    ep.topics = {e % 2};
    b.episodes.push_back(ep);
  }
  b.interactions.positives = {{"t0", "e0"}, {"t0", "e1"}, {"t0", "e2"},
                              {"t1", "e1"}, {"t1", "e3"}, {"t2", "e4"},
                              {"x0", "e5"}, {"y1", "e1"}, {"z2", "e0"}};
  b.interactions.split = {{"t0", SplitId::train}, {"t1", SplitId::train},
                          {"t2", SplitId::train}, {"x0", SplitId::test},
                          {"y1", SplitId::test},  {"z2", SplitId::test}};
  b.finalize();
  return b;
}

std::vector<std::string> ids_of(const DatasetBundle& b,
                                const std::vector<int>& rows) {
  std::vector<std::string> out;
  for (int r : rows) out.push_back(b.episodes[r].episode_id);
  return out;
}

// Deterministic scorer with hand-set scores per episode index.
class FixedScorer final : public EpisodeScorer {
 public:
  FixedScorer(std::string name, Vec scores)
      : name_(std::move(name)), scores_(std::move(scores)) {}
  const std::string& name() const override { return name_; }
  Vec score_candidates(int, const std::vector<int>& candidates) const override {
    Vec out(static_cast<Index>(candidates.size()));
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      out[static_cast<Index>(i)] = scores_[candidates[i]];
    }
    return out;
  }

 private:
  std::string name_;
  Vec scores_;
};

}  // namespace

TEST_CASE("metrics agree with from-definition oracles on random instances") {
  Rng rng(81);
  for (int instance = 0; instance < 10000; ++instance) {
    const int catalog = 5 + static_cast<int>(rng.uniform_u64(60));
    std::vector<int> ranked(catalog);
    for (int i = 0; i < catalog; ++i) ranked[i] = i;
    rng.shuffle(ranked);
    // Random nonempty relevant set; may include unranked ids.
    std::set<int> rel;
    const int n_rel = 1 + static_cast<int>(rng.uniform_u64(6));
    for (int j = 0; j < n_rel; ++j) {
      rel.insert(static_cast<int>(rng.uniform_u64(catalog + 10)));
    }
    const std::unordered_set<int> rel_u(rel.begin(), rel.end());
    const int n = 1 + static_cast<int>(rng.uniform_u64(25));

    CHECK(recall_at_n(ranked, rel_u, n) == oracle_recall(ranked, rel, n));
    CHECK(ndcg_at_n(ranked, rel_u, n) ==
          doctest::Approx(oracle_ndcg(ranked, rel, n)).epsilon(1e-13));
    CHECK(mrr(ranked, rel_u) == oracle_mrr(ranked, rel));
  }
}

TEST_CASE("worked metric values") {
  // Single relevant item placed second: NDCG@N = 1/log2(3).
  const std::vector<int> ranked = {7, 3, 5, 9};
  const std::unordered_set<int> rel = {3};
  CHECK(ndcg_at_n(ranked, rel, 10) ==
        doctest::Approx(1.0 / std::log2(3.0)).epsilon(1e-12));
  CHECK(ndcg_at_n(ranked, rel, 10) == doctest::Approx(0.63093).epsilon(1e-4));

  // First hit at rank 4: MRR = 0.25.
  const std::unordered_set<int> rel2 = {9};
  CHECK(mrr(ranked, rel2) == 0.25);

  CHECK(recall_at_n(ranked, rel, 1) == 0.0);
  CHECK(recall_at_n(ranked, rel, 2) == 1.0);
  const std::unordered_set<int> missing = {42};
  CHECK(mrr(ranked, missing) == 0.0);

  const std::unordered_set<int> empty;
  CHECK_THROWS_AS(recall_at_n(ranked, empty, 5), ArgumentError);
  CHECK_THROWS_AS(ndcg_at_n(ranked, rel, 0), ArgumentError);
}

TEST_CASE("bucket labels follow the train-count edges") {
  const std::vector<long> edges = {1, 3, 10, 50};
  CHECK(bucket_label(edges, 0) == "0-1");
  CHECK(bucket_label(edges, 1) == "0-1");
  CHECK(bucket_label(edges, 2) == "2-3");
  CHECK(bucket_label(edges, 3) == "2-3");
  CHECK(bucket_label(edges, 4) == "4-10");
  CHECK(bucket_label(edges, 10) == "4-10");
  CHECK(bucket_label(edges, 11) == "11-50");
  CHECK(bucket_label(edges, 50) == "11-50");
  CHECK(bucket_label(edges, 51) == ">50");
  CHECK(bucket_label(edges, 100000) == ">50");
}

TEST_CASE("popularity baselines reproduce hand-computed orders") {
  DatasetBundle b = pop_fixture();

  // Global: e1 twice, e0/e2/e3/e4 once, zeros ascending by id.
  CHECK(ids_of(b, pop_rank(b)) ==
        std::vector<std::string>{"e1", "e0", "e2", "e3", "e4", "e5", "e6",
                                 "e7", "e8", "e9"});

  // Country 1 saw only e4 (from t2).
  const int y1 = b.user_at("y1");
  CHECK(ids_of(b, pop_country_rank(b, y1)) ==
        std::vector<std::string>{"e4", "e0", "e1", "e2", "e3", "e5", "e6",
                                 "e7", "e8", "e9"});

  // Cohort (age 0, country 0) is t0 alone: e0/e1/e2 once each.
  const int x0 = b.user_at("x0");
  CHECK(ids_of(b, pop_age_country_rank(b, x0)) ==
        std::vector<std::string>{"e0", "e1", "e2", "e3", "e4", "e5", "e6",
                                 "e7", "e8", "e9"});

  // Cohort (age 1, country 2) has no train interactions: global fallback.
  const int z2 = b.user_at("z2");
  CHECK(ids_of(b, pop_age_country_rank(b, z2)) == ids_of(b, pop_rank(b)));

  // Country 2 is likewise empty: country fallback equals global too.
  CHECK(ids_of(b, pop_country_rank(b, z2)) == ids_of(b, pop_rank(b)));

  // Scorer wrappers agree with the direct orders (no masking).
  EvalOptions opts;
  opts.mask_familiar_shows = false;
  PopScorer global(b, PopKind::global);
  CHECK(global.name() == "pop");
  CHECK(rank_for_user(global, b, x0, opts) == pop_rank(b));
  PopScorer country(b, PopKind::country);
  CHECK(country.name() == "pop-country");
  CHECK(rank_for_user(country, b, y1, opts) == pop_country_rank(b, y1));
  PopScorer cohort(b, PopKind::age_country);
  CHECK(cohort.name() == "pop-age-country");
  CHECK(rank_for_user(cohort, b, z2, opts) == pop_rank(b));
}

TEST_CASE("rank_for_user breaks score ties by ascending episode id") {
  DatasetBundle b = pop_fixture();
  Vec scores = Vec::Zero(10);
  scores[3] = 2.0;
  scores[7] = 2.0;
  scores[5] = 1.0;
  FixedScorer scorer("fixed", scores);
  EvalOptions opts;
  opts.mask_familiar_shows = false;
  const auto ranked = rank_for_user(scorer, b, b.user_at("x0"), opts);
  REQUIRE(ranked.size() == 10);
  CHECK(ids_of(b, {ranked[0], ranked[1], ranked[2]}) ==
        std::vector<std::string>{"e3", "e7", "e5"});
  // The zero-score tail is id ordered.
  CHECK(ids_of(b, {ranked[3], ranked[4]}) ==
        std::vector<std::string>{"e0", "e1"});
}

TEST_CASE("masking removes familiar shows from the candidate list") {
  DatasetBundle b = pop_fixture();
  PopScorer global(b, PopKind::global);
  // t0 trained on e0/e1/e2 (single-episode shows): they disappear.
  const auto ranked = rank_for_user(global, b, b.user_at("t0"));
  std::set<std::string> ids;
  for (int r : ranked) ids.insert(b.episodes[r].episode_id);
  CHECK(ranked.size() == 7);
  CHECK(ids.count("e0") == 0);
  CHECK(ids.count("e1") == 0);
  CHECK(ids.count("e2") == 0);
  // Test users keep the full catalog.
  CHECK(rank_for_user(global, b, b.user_at("x0")).size() == 10);
}

TEST_CASE("evaluate_model aggregates means, skips and buckets") {
  DatasetBundle b = pop_fixture();
  PopScorer global(b, PopKind::global);
  EvalOptions opts;
  opts.mask_familiar_shows = false;

  const RankingReport rep = evaluate_model(global, b, SplitId::test, opts);
  CHECK(rep.model == "pop");
  CHECK(rep.split == "test");
  CHECK(rep.users_evaluated == 3);
  CHECK(rep.users_skipped == 0);

  // Hand-computed: global order [e1,e0,e2,e3,e4,e5,...].
  // x0 holds e5 (rank 6), y1 holds e1 (rank 1), z2 holds e0 (rank 2).
  const double x0_ndcg = 1.0 / std::log2(7.0);
  const double y1_ndcg = 1.0;
  const double z2_ndcg = 1.0 / std::log2(3.0);
  CHECK(rep.ndcg20 ==
        doctest::Approx((x0_ndcg + y1_ndcg + z2_ndcg) / 3).epsilon(1e-12));
  CHECK(rep.mrr ==
        doctest::Approx((1.0 / 6 + 1.0 + 0.5) / 3).epsilon(1e-12));
  CHECK(rep.recall10 == doctest::Approx(1.0).epsilon(1e-12));

  // Bucket rows: e5 has train count 0 ("0-1"), e0 count 1 ("0-1"),
  // e1 count 2 ("2-3"). Gains are the log2 discounts of their ranks.
  REQUIRE(rep.buckets.size() == 2);
  CHECK(rep.buckets[0].label == "0-1");
  CHECK(rep.buckets[0].interactions == 2);
  CHECK(rep.buckets[0].ndcg20 ==
        doctest::Approx((x0_ndcg + z2_ndcg) / 2).epsilon(1e-12));
  CHECK(rep.buckets[1].label == "2-3");
  CHECK(rep.buckets[1].interactions == 1);
  CHECK(rep.buckets[1].ndcg20 == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("evaluate_model throws when no user is evaluable") {
  DatasetBundle b = pop_fixture();
  // Remove the test users' positives.
  b.interactions.positives = {{"t0", "e0"}, {"t0", "e1"}, {"t0", "e2"},
                              {"t1", "e1"}, {"t1", "e3"}, {"t2", "e4"}};
  b.finalize();
  PopScorer global(b, PopKind::global);
  CHECK_THROWS_AS(evaluate_model(global, b, SplitId::test), ReportError);
}

TEST_CASE("threaded evaluation equals the serial result") {
  DatasetBundle b = pop_fixture();
  PopScorer global(b, PopKind::global);
  EvalOptions serial, threaded;
  serial.mask_familiar_shows = threaded.mask_familiar_shows = false;
  threaded.threads = 4;
  const RankingReport a = evaluate_model(global, b, SplitId::test, serial);
  const RankingReport c = evaluate_model(global, b, SplitId::test, threaded);
  CHECK(a.ndcg20 == c.ndcg20);
  CHECK(a.mrr == c.mrr);
  REQUIRE(a.buckets.size() == c.buckets.size());
  for (std::size_t i = 0; i < a.buckets.size(); ++i) {
    CHECK(a.buckets[i].ndcg20 == c.buckets[i].ndcg20);
    CHECK(a.buckets[i].interactions == c.buckets[i].interactions);
  }
}

TEST_CASE("report json round-trips") {
  DatasetBundle b = pop_fixture();
  PopScorer global(b, PopKind::global);
  PopScorer country(b, PopKind::country);
  EvalOptions opts;
  opts.mask_familiar_shows = false;
  RankingReport r1 = evaluate_model(global, b, SplitId::test, opts);
  RankingReport r2 = evaluate_model(country, b, SplitId::test, opts);
  r1.config_hash = 0xdeadbeef;
  r1.seed = 7;

  const std::string doc = report_json({r1, r2}, false);
  const auto back = parse_report_json(doc);
  REQUIRE(back.size() == 2);
  CHECK(back[0].model == r1.model);
  CHECK(back[0].users_evaluated == r1.users_evaluated);
  CHECK(back[0].ndcg20 == doctest::Approx(r1.ndcg20).epsilon(1e-12));
  CHECK(back[0].config_hash == 0xdeadbeef);
  CHECK(back[0].seed == 7);
  REQUIRE(back[0].buckets.size() == r1.buckets.size());
  CHECK(back[0].buckets[0].label == r1.buckets[0].label);
  CHECK(back[0].buckets[0].interactions == r1.buckets[0].interactions);
  CHECK(back[1].model == "pop-country");

  // Determinism without the timestamp; with it the document still parses.
  CHECK(report_json({r1, r2}, false) == doc);
  CHECK(parse_report_json(report_json({r1, r2}, true)).size() == 2);

  CHECK_THROWS_AS(parse_report_json("{oops"), ParseError);
  CHECK_THROWS_AS(parse_report_json("{\"nope\": 1}"), ParseError);
}

TEST_CASE("bucket csv has one row per model and non-empty bucket") {
  DatasetBundle b = pop_fixture();
  PopScorer global(b, PopKind::global);
  EvalOptions opts;
  opts.mask_familiar_shows = false;
  RankingReport r = evaluate_model(global, b, SplitId::test, opts);

  const std::string csv = bucket_csv({r, r});
  int lines = 0;
  for (char c : csv) lines += c == '\n';
  CHECK(lines == 1 + 2 * static_cast<int>(r.buckets.size()));
  CHECK(csv.rfind("model,bucket,interactions,ndcg20\n", 0) == 0);

  const std::string table = report_table({r});
  CHECK(table.find("pop") != std::string::npos);
  CHECK(table.find("NDCG@20") != std::string::npos);
}

TEST_CASE("mean_ndcg_at_n matches the report aggregate") {
  DatasetBundle b = pop_fixture();
  PopScorer global(b, PopKind::global);
  EvalOptions opts;
  opts.mask_familiar_shows = false;
  const RankingReport rep = evaluate_model(global, b, SplitId::test, opts);
  CHECK(mean_ndcg_at_n(global, b, SplitId::test, 20, opts) ==
        doctest::Approx(rep.ndcg20).epsilon(1e-14));
}
