#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "msacl/dataset.hpp"
#include "msacl/types.hpp"

namespace msacl {

// A single nearest-neighbour hit. Distances are Euclidean (L2).
struct NeighborHit {
  int id = -1;
  Scalar distance = 0.0;
};

inline bool operator==(const NeighborHit& a, const NeighborHit& b) {
  return a.id == b.id && a.distance == b.distance;
}

// Row-level engine. Ties on distance resolve by ascending tie_rank (the
// caller's notion of "ascending id"; defaults to row order).
class NeighborIndex {
 public:
  virtual ~NeighborIndex() = default;

  // Returns up to k hits sorted by (distance, tie_rank). `exclude` is
  // removed from the result set (pass -1 to keep everything).
  virtual std::vector<NeighborHit> query_topk(const Vec& point, int k,
                                              int exclude = -1) const = 0;

  virtual int size() const = 0;
  virtual int dim() const = 0;

  // Must have one entry per row; smaller rank wins ties.
  void set_tie_ranks(std::vector<int> ranks);

 protected:
  int tie_rank(int row) const {
    return tie_ranks_.empty() ? row : tie_ranks_[row];
  }
  bool hit_less(const NeighborHit& a, const NeighborHit& b) const {
    if (a.distance != b.distance) return a.distance < b.distance;
    return tie_rank(a.id) < tie_rank(b.id);
  }
  std::vector<NeighborHit> rerank(const Mat& points, const Vec& point,
                                  const std::vector<int>& candidates, int k,
                                  int exclude) const;

 private:
  std::vector<int> tie_ranks_;
};

// Exhaustive scan. Exact by construction; the default everywhere accuracy
// matters more than speed.
class ExactIndex final : public NeighborIndex {
 public:
  explicit ExactIndex(Mat points);

  std::vector<NeighborHit> query_topk(const Vec& point, int k,
                                      int exclude = -1) const override;

  int size() const override { return static_cast<int>(points_.rows()); }
  int dim() const override { return static_cast<int>(points_.cols()); }

 private:
  Mat points_;
};

struct RpForestConfig {
  int n_trees = 8;
  int leaf_size = 32;
  // Candidate points collected per query (across all trees) before the
  // exact re-rank. Larger values trade speed for recall.
  int search_budget = 256;
  std::uint64_t seed = 0;
};

// Random-projection partition forest. Each internal node splits points by
// the median of their projections onto a random unit direction; queries
// walk the trees with a best-first queue ordered by margin to the
// splitting hyperplane, then the collected candidates are re-ranked
// exactly.
class RpForestIndex final : public NeighborIndex {
 public:
  RpForestIndex(Mat points, const RpForestConfig& config);

  std::vector<NeighborHit> query_topk(const Vec& point, int k,
                                      int exclude = -1) const override;

  int size() const override { return static_cast<int>(points_.rows()); }
  int dim() const override { return static_cast<int>(points_.cols()); }

 private:
  struct Node {
    // Leaf when left < 0; then [begin, end) indexes into items_.
    int left = -1;
    int right = -1;
    int begin = 0;
    int end = 0;
    int direction = -1;
    Scalar threshold = 0.0;
  };

  struct Tree {
    std::vector<Node> nodes;
    std::vector<int> items;
  };

  Mat points_;
  Mat directions_;
  std::vector<Tree> trees_;
  RpForestConfig config_;
};

enum class SpaceTag { content, kg };
enum class IndexMode { exact, approximate };

const char* to_string(SpaceTag tag);

struct IndexBuildParams {
  int n_trees = 8;
  int leaf_size = 32;
  int search_budget = 256;
};

// Episode-id level lookup over one pre-trained embedding space. Results
// are insensitive to catalog insertion order: distance ties resolve by
// ascending episode id.
class EpisodeNeighborIndex {
 public:
  EpisodeNeighborIndex(const DatasetBundle& bundle, SpaceTag space,
                       IndexMode mode, const IndexBuildParams& params,
                       std::uint64_t seed);

  // The K nearest episodes by L2 distance, query excluded, ascending by
  // (distance, episode id). Fewer than K candidates returns them all.
  std::vector<std::string> query_topk(const std::string& episode_id,
                                      int k) const;

  // Row-index variant for hot paths.
  std::vector<int> query_topk_rows(int row, int k) const;

  SpaceTag space() const { return space_; }
  IndexMode mode() const { return mode_; }
  int size() const { return core_->size(); }

 private:
  const DatasetBundle& bundle_;
  SpaceTag space_;
  IndexMode mode_;
  std::unique_ptr<NeighborIndex> core_;
  Mat points_;
};

// Throws SchemaError if any episode misses the requested embedding block.
EpisodeNeighborIndex build_index(const DatasetBundle& bundle, SpaceTag space,
                                 IndexMode mode = IndexMode::exact,
                                 const IndexBuildParams& params = {},
                                 std::uint64_t seed = 0);

// Cached top-K neighbour lists, one per episode, holding row indices into
// the bundle's catalog.
struct NeighborTable {
  int k = 0;
  std::vector<std::vector<int>> lists;

  const std::vector<int>& neighbors_of(int id) const;
};

NeighborTable build_neighbor_table(const EpisodeNeighborIndex& index, int k,
                                   int threads = 1);

// Text cache, one line per episode: `<episode_id>: <id1>,<id2>,...`.
// Episodes with no neighbours serialise as `<episode_id>:`.
void save_neighbor_table(const NeighborTable& table,
                         const DatasetBundle& bundle, const std::string& path);
NeighborTable load_neighbor_table(const std::string& path,
                                  const DatasetBundle& bundle);

}  // namespace msacl
