#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <vector>

#include "fixtures.hpp"
#include "msacl/neighbors.hpp"
#include "msacl/rng.hpp"

using namespace msacl;
using namespace msacl::testing;
namespace fs = std::filesystem;

namespace {

Mat random_points(int n, int d, std::uint64_t seed) {
  Rng rng(seed);
  Mat pts(n, d);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) pts(i, j) = rng.normal();
  }
  return pts;
}

// From-definition top-k: full pairwise scan, sort by (distance, row).
std::vector<NeighborHit> brute_topk(const Mat& pts, const Vec& q, int k,
                                    int exclude) {
  std::vector<NeighborHit> all;
  for (int i = 0; i < pts.rows(); ++i) {
    if (i == exclude) continue;
    double sq = 0.0;
    for (int j = 0; j < pts.cols(); ++j) {
      const double d = pts(i, j) - q[j];
      sq += d * d;
    }
    all.push_back({i, std::sqrt(sq)});
  }
  std::stable_sort(all.begin(), all.end(),
                   [](const NeighborHit& a, const NeighborHit& b) {
                     if (a.distance != b.distance) return a.distance < b.distance;
                     return a.id < b.id;
                   });
  if (static_cast<int>(all.size()) > k) all.resize(k);
  return all;
}

}  // namespace

TEST_CASE("exact index equals the brute-force oracle") {
  const Mat pts = random_points(300, 12, 51);
  ExactIndex index(pts);
  CHECK(index.size() == 300);
  CHECK(index.dim() == 12);

  Rng rng(52);
  for (int trial = 0; trial < 40; ++trial) {
    Vec q(12);
    for (int j = 0; j < 12; ++j) q[j] = rng.normal();
    const int k = 1 + static_cast<int>(rng.uniform_u64(20));
    const int exclude = trial % 3 == 0 ? static_cast<int>(rng.uniform_u64(300)) : -1;

    const auto got = index.query_topk(q, k, exclude);
    const auto want = brute_topk(pts, q, k, exclude);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].id == want[i].id);
      CHECK(got[i].distance == doctest::Approx(want[i].distance).epsilon(1e-12));
    }
  }
}

TEST_CASE("self-queries exclude the query row when asked") {
  const Mat pts = random_points(50, 4, 53);
  ExactIndex index(pts);
  for (int i = 0; i < 50; ++i) {
    const auto hits = index.query_topk(Vec(pts.row(i).transpose()), 5, i);
    for (const auto& h : hits) CHECK(h.id != i);
    // Without exclusion the row itself comes first at distance zero.
    const auto self = index.query_topk(Vec(pts.row(i).transpose()), 1, -1);
    REQUIRE(self.size() == 1);
    CHECK(self[0].id == i);
    CHECK(self[0].distance == 0.0);
  }
}

TEST_CASE("distance ties resolve by ascending tie rank") {
  // Rows 1, 2 and 4 are identical; row order breaks the tie by default.
  Mat pts(5, 2);
  pts << 0.0, 0.0,
         1.0, 1.0,
         1.0, 1.0,
         3.0, 3.0,
         1.0, 1.0;
  ExactIndex index(pts);

  Vec q(2);
  q << 1.0, 1.0;
  auto hits = index.query_topk(q, 3, -1);
  REQUIRE(hits.size() == 3);
  CHECK(hits[0].id == 1);
  CHECK(hits[1].id == 2);
  CHECK(hits[2].id == 4);

  // Custom ranks invert the preference.
  index.set_tie_ranks({0, 4, 3, 1, 2});
  hits = index.query_topk(q, 3, -1);
  CHECK(hits[0].id == 4);
  CHECK(hits[1].id == 2);
  CHECK(hits[2].id == 1);
}

TEST_CASE("fewer than k points returns them all") {
  const Mat pts = random_points(6, 3, 54);
  ExactIndex index(pts);
  Vec q = Vec::Zero(3);
  CHECK(index.query_topk(q, 20, -1).size() == 6);
  CHECK(index.query_topk(q, 20, 2).size() == 5);
}

TEST_CASE("rp-forest recall against exact on gaussian points") {
  const Mat pts = random_points(1000, 16, 55);
  ExactIndex exact(pts);
  RpForestConfig cfg;
  cfg.n_trees = 10;
  cfg.leaf_size = 24;
  cfg.search_budget = 320;
  cfg.seed = 7;
  RpForestIndex forest(pts, cfg);
  CHECK(forest.size() == 1000);

  Rng rng(56);
  double overlap_sum = 0.0;
  const int queries = 60;
  for (int t = 0; t < queries; ++t) {
    Vec q(16);
    for (int j = 0; j < 16; ++j) q[j] = rng.normal();
    const auto got = forest.query_topk(q, 10, -1);
    const auto want = exact.query_topk(q, 10, -1);
    std::set<int> want_ids;
    for (const auto& h : want) want_ids.insert(h.id);
    int common = 0;
    for (const auto& h : got) common += want_ids.count(h.id);
    overlap_sum += static_cast<double>(common) / want.size();
  }
  CHECK(overlap_sum / queries >= 0.9);
}

TEST_CASE("episode index orders ties by episode id, not row order") {
  DatasetBundle b = tiny_bundle();
  // All five fixture episodes share one kg embedding; rename them so the
  // id order disagrees with catalog order.
  b.episodes[0].episode_id = "z9";
  b.episodes[1].episode_id = "m5";
  b.episodes[2].episode_id = "a1";
  b.episodes[3].episode_id = "a0";
  b.episodes[4].episode_id = "m4";
  b.interactions.positives = {};
  b.finalize();

  EpisodeNeighborIndex index = build_index(b, SpaceTag::kg);
  const auto top = index.query_topk("z9", 4);
  CHECK(top == std::vector<std::string>{"a0", "a1", "m4", "m5"});

  // Row variant agrees after translation.
  const auto rows = index.query_topk_rows(0, 4);
  std::vector<std::string> ids;
  for (int r : rows) ids.push_back(b.episodes[r].episode_id);
  CHECK(ids == top);
}

TEST_CASE("episode index separates the two embedding spaces") {
  DatasetBundle b = tiny_bundle();
  // kg places the episodes on a line 0..4; content scrambles them so the
  // two spaces disagree about who is close to e0.
  const Scalar content_pos[] = {0.0, 10.0, 1.0, 11.0, 2.0};
  for (int e = 0; e < 5; ++e) {
    b.episodes[e].kg_embedding = make_vec({static_cast<Scalar>(e), 0.0, 0.0});
    b.episodes[e].content_embedding = make_vec({content_pos[e], 0.0, 0.0});
  }
  b.finalize();

  EpisodeNeighborIndex kg = build_index(b, SpaceTag::kg);
  CHECK(kg.space() == SpaceTag::kg);
  CHECK(kg.query_topk("e0", 2) == std::vector<std::string>{"e1", "e2"});
  CHECK(kg.query_topk("e4", 2) == std::vector<std::string>{"e3", "e2"});

  EpisodeNeighborIndex content = build_index(b, SpaceTag::content);
  CHECK(content.query_topk("e0", 2) == std::vector<std::string>{"e2", "e4"});
  CHECK_THROWS_AS(kg.query_topk("nope", 2), LookupError);
}

TEST_CASE("build_index rejects missing embedding blocks") {
  DatasetBundle b = tiny_bundle();
  b.header.embedding_dims.erase("episode_kg");
  for (auto& e : b.episodes) e.kg_embedding = Vec();
  b.finalize();
  CHECK_THROWS_AS(build_index(b, SpaceTag::kg), SchemaError);
  CHECK_NOTHROW(build_index(b, SpaceTag::content));
}

TEST_CASE("neighbor table round-trips through its text cache") {
  DatasetBundle b = tiny_bundle();
  for (int e = 0; e < 5; ++e) {
    b.episodes[e].kg_embedding =
        make_vec({static_cast<Scalar>(e * e), 1.0, -0.5});
  }
  b.finalize();

  EpisodeNeighborIndex index = build_index(b, SpaceTag::kg);
  NeighborTable table = build_neighbor_table(index, 3);
  REQUIRE(table.lists.size() == 5);
  CHECK(table.k == 3);
  for (int e = 0; e < 5; ++e) {
    CHECK(table.neighbors_of(e) == index.query_topk_rows(e, 3));
  }

  const fs::path path = fs::temp_directory_path() / "msacl_test_neighbors.txt";
  save_neighbor_table(table, b, path.string());
  NeighborTable back = load_neighbor_table(path.string(), b);
  CHECK(back.k == table.k);
  REQUIRE(back.lists.size() == table.lists.size());
  for (std::size_t i = 0; i < table.lists.size(); ++i) {
    CHECK(back.lists[i] == table.lists[i]);
  }
  fs::remove(path);

  // Parallel build agrees with the serial one.
  NeighborTable threaded = build_neighbor_table(index, 3, 4);
  for (std::size_t i = 0; i < table.lists.size(); ++i) {
    CHECK(threaded.lists[i] == table.lists[i]);
  }
}
