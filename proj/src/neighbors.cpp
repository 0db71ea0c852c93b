#include "msacl/neighbors.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <numeric>
#include <queue>
#include <sstream>
#include <tuple>

#include "msacl/rng.hpp"
#include "msacl/util.hpp"

namespace msacl {

namespace {

void check_query(const NeighborIndex& index, const Vec& point, int k) {
  if (k <= 0) {
    throw ArgumentError("query_topk: k must be positive, got " +
                        std::to_string(k));
  }
  if (static_cast<int>(point.size()) != index.dim()) {
    throw ShapeError("query_topk: point has dimension " +
                     std::to_string(point.size()) + ", index expects " +
                     std::to_string(index.dim()));
  }
}

}  // namespace

void NeighborIndex::set_tie_ranks(std::vector<int> ranks) {
  if (static_cast<int>(ranks.size()) != size()) {
    throw ShapeError("set_tie_ranks: expected " + std::to_string(size()) +
                     " ranks, got " + std::to_string(ranks.size()));
  }
  tie_ranks_ = std::move(ranks);
}

std::vector<NeighborHit> NeighborIndex::rerank(
    const Mat& points, const Vec& point, const std::vector<int>& candidates,
    int k, int exclude) const {
  std::vector<NeighborHit> hits;
  hits.reserve(candidates.size());
  for (int id : candidates) {
    if (id == exclude) continue;
    hits.push_back({id, (points.row(id).transpose() - point).norm()});
  }
  const std::size_t keep =
      std::min(hits.size(), static_cast<std::size_t>(k));
  std::partial_sort(
      hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(keep),
      hits.end(),
      [this](const NeighborHit& a, const NeighborHit& b) {
        return hit_less(a, b);
      });
  hits.resize(keep);
  return hits;
}

ExactIndex::ExactIndex(Mat points) : points_(std::move(points)) {}

std::vector<NeighborHit> ExactIndex::query_topk(const Vec& point, int k,
                                                int exclude) const {
  check_query(*this, point, k);
  std::vector<int> all(points_.rows());
  std::iota(all.begin(), all.end(), 0);
  return rerank(points_, point, all, k, exclude);
}

RpForestIndex::RpForestIndex(Mat points, const RpForestConfig& config)
    : points_(std::move(points)), config_(config) {
  if (config_.n_trees <= 0) {
    throw ArgumentError("RpForestIndex: n_trees must be positive");
  }
  if (config_.leaf_size <= 1) {
    throw ArgumentError("RpForestIndex: leaf_size must be at least 2");
  }
  const int n = static_cast<int>(points_.rows());
  std::vector<Vec> dirs;
  trees_.resize(config_.n_trees);
  for (int t = 0; t < config_.n_trees; ++t) {
    Rng rng(derive_seed(config_.seed, "rp-tree-" + std::to_string(t)));
    std::vector<int> ids(n);
    std::iota(ids.begin(), ids.end(), 0);
    Tree& tree = trees_[t];
    tree.items.reserve(n);
    // Explicit stack instead of recursion so deep trees cannot overflow.
    struct Pending {
      int node;
      int begin;
      int end;
    };
    if (n == 0) continue;
    tree.nodes.push_back({});
    std::vector<Pending> stack{{0, 0, n}};
    while (!stack.empty()) {
      const Pending p = stack.back();
      stack.pop_back();
      const int count = p.end - p.begin;
      Node node;
      bool split_found = false;
      if (count > config_.leaf_size) {
        for (int attempt = 0; attempt < 4 && !split_found; ++attempt) {
          Vec dir(points_.cols());
          for (Index d = 0; d < dir.size(); ++d) dir[d] = rng.normal();
          const Scalar norm = dir.norm();
          if (norm == 0.0) continue;
          dir /= norm;
          std::vector<Scalar> proj(count);
          for (int i = 0; i < count; ++i) {
            proj[i] = points_.row(ids[p.begin + i]).dot(dir);
          }
          std::vector<Scalar> vals = proj;
          const int mid = count / 2;
          std::nth_element(vals.begin(), vals.begin() + mid, vals.end());
          const Scalar threshold = vals[mid];
          std::vector<int> lo, hi;
          lo.reserve(count);
          hi.reserve(count);
          for (int i = 0; i < count; ++i) {
            (proj[i] < threshold ? lo : hi).push_back(ids[p.begin + i]);
          }
          if (lo.empty() || hi.empty()) continue;
          std::copy(lo.begin(), lo.end(), ids.begin() + p.begin);
          std::copy(hi.begin(), hi.end(),
                    ids.begin() + p.begin + static_cast<int>(lo.size()));
          node.direction = static_cast<int>(dirs.size());
          dirs.push_back(dir);
          node.threshold = threshold;
          const int left_idx = static_cast<int>(tree.nodes.size());
          tree.nodes.push_back({});
          const int right_idx = static_cast<int>(tree.nodes.size());
          tree.nodes.push_back({});
          node.left = left_idx;
          node.right = right_idx;
          const int split_at = p.begin + static_cast<int>(lo.size());
          stack.push_back({left_idx, p.begin, split_at});
          stack.push_back({right_idx, split_at, p.end});
          split_found = true;
        }
      }
      if (!split_found) {
        node.left = -1;
        node.begin = static_cast<int>(tree.items.size());
        for (int i = p.begin; i < p.end; ++i) tree.items.push_back(ids[i]);
        node.end = static_cast<int>(tree.items.size());
      }
      tree.nodes[p.node] = node;
    }
  }
  directions_.resize(static_cast<Index>(dirs.size()), points_.cols());
  for (std::size_t i = 0; i < dirs.size(); ++i) {
    directions_.row(static_cast<Index>(i)) = dirs[i].transpose();
  }
}

std::vector<NeighborHit> RpForestIndex::query_topk(const Vec& point, int k,
                                                   int exclude) const {
  check_query(*this, point, k);
  const int n = static_cast<int>(points_.rows());
  if (n == 0) return {};

  // Best-first over all trees: priority is the smallest margin to any
  // hyperplane crossed so far, so untouched branches drain first.
  using Entry = std::tuple<Scalar, int, int>;  // (priority, tree, node)
  std::priority_queue<Entry> queue;
  const Scalar inf = std::numeric_limits<Scalar>::infinity();
  for (int t = 0; t < static_cast<int>(trees_.size()); ++t) {
    if (!trees_[t].nodes.empty()) queue.emplace(inf, t, 0);
  }

  std::vector<char> seen(n, 0);
  std::vector<int> candidates;
  candidates.reserve(config_.search_budget);
  while (!queue.empty() &&
         static_cast<int>(candidates.size()) < config_.search_budget) {
    const auto [priority, t, node_idx] = queue.top();
    queue.pop();
    const Tree& tree = trees_[t];
    const Node& node = tree.nodes[node_idx];
    if (node.left < 0) {
      for (int i = node.begin; i < node.end; ++i) {
        const int id = tree.items[i];
        if (!seen[id]) {
          seen[id] = 1;
          candidates.push_back(id);
        }
      }
      continue;
    }
    const Scalar margin =
        directions_.row(node.direction).dot(point) - node.threshold;
    queue.emplace(std::min(priority, -margin), t, node.left);
    queue.emplace(std::min(priority, margin), t, node.right);
  }
  return rerank(points_, point, candidates, k, exclude);
}

const char* to_string(SpaceTag tag) {
  return tag == SpaceTag::content ? "content" : "kg";
}

namespace {

Mat space_matrix(const DatasetBundle& bundle, SpaceTag space) {
  if (bundle.episodes.empty()) {
    return Mat(0, 0);
  }
  const auto block = [&](const EpisodeRecord& rec) -> const Vec& {
    return space == SpaceTag::content ? rec.content_embedding
                                      : rec.kg_embedding;
  };
  const Index dim = block(bundle.episodes.front()).size();
  if (dim == 0) {
    throw SchemaError(std::string("build_index: episodes carry no ") +
                      to_string(space) + " embedding block");
  }
  Mat points(static_cast<Index>(bundle.episodes.size()), dim);
  for (std::size_t i = 0; i < bundle.episodes.size(); ++i) {
    const Vec& v = block(bundle.episodes[i]);
    if (v.size() != dim) {
      throw SchemaError("build_index: episode \"" +
                        bundle.episodes[i].episode_id + "\" has a " +
                        std::to_string(v.size()) + "-dim " + to_string(space) +
                        " embedding, expected " + std::to_string(dim));
    }
    points.row(static_cast<Index>(i)) = v.transpose();
  }
  return points;
}

std::vector<int> episode_id_ranks(const DatasetBundle& bundle) {
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

}  // namespace

EpisodeNeighborIndex::EpisodeNeighborIndex(const DatasetBundle& bundle,
                                           SpaceTag space, IndexMode mode,
                                           const IndexBuildParams& params,
                                           std::uint64_t seed)
    : bundle_(bundle), space_(space), mode_(mode) {
  points_ = space_matrix(bundle, space);
  if (mode == IndexMode::exact) {
    core_ = std::make_unique<ExactIndex>(points_);
  } else {
    RpForestConfig config;
    config.n_trees = params.n_trees;
    config.leaf_size = params.leaf_size;
    config.search_budget = params.search_budget;
    config.seed = derive_seed(seed, std::string("ann-") + to_string(space));
    core_ = std::make_unique<RpForestIndex>(points_, config);
  }
  core_->set_tie_ranks(episode_id_ranks(bundle));
}

std::vector<int> EpisodeNeighborIndex::query_topk_rows(int row, int k) const {
  if (row < 0 || row >= core_->size()) {
    throw LookupError("query_topk: episode row " + std::to_string(row) +
                      " outside the catalog");
  }
  const Vec point = points_.row(row).transpose();
  const auto hits = core_->query_topk(point, k, row);
  std::vector<int> out;
  out.reserve(hits.size());
  for (const auto& hit : hits) out.push_back(hit.id);
  return out;
}

std::vector<std::string> EpisodeNeighborIndex::query_topk(
    const std::string& episode_id, int k) const {
  const int row = bundle_.episode_at(episode_id);
  std::vector<std::string> out;
  for (int id : query_topk_rows(row, k)) {
    out.push_back(bundle_.episodes[id].episode_id);
  }
  return out;
}

EpisodeNeighborIndex build_index(const DatasetBundle& bundle, SpaceTag space,
                                 IndexMode mode, const IndexBuildParams& params,
                                 std::uint64_t seed) {
  return EpisodeNeighborIndex(bundle, space, mode, params, seed);
}

const std::vector<int>& NeighborTable::neighbors_of(int id) const {
  if (id < 0 || id >= static_cast<int>(lists.size())) {
    throw LookupError("neighbor table has no entry for id " +
                      std::to_string(id));
  }
  return lists[id];
}

NeighborTable build_neighbor_table(const EpisodeNeighborIndex& index, int k,
                                   int threads) {
  if (k <= 0) {
    throw ArgumentError("build_neighbor_table: k must be positive");
  }
  NeighborTable table;
  table.k = k;
  table.lists.resize(index.size());
  parallel_for(table.lists.size(), threads, [&](std::size_t row) {
    table.lists[row] = index.query_topk_rows(static_cast<int>(row), k);
  });
  return table;
}

void save_neighbor_table(const NeighborTable& table,
                         const DatasetBundle& bundle, const std::string& path) {
  if (table.lists.size() != bundle.episodes.size()) {
    throw ShapeError("save_neighbor_table: table and catalog sizes differ");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot open " + path + " for writing");
  }
  for (std::size_t i = 0; i < table.lists.size(); ++i) {
    out << bundle.episodes[i].episode_id << ':';
    const auto& list = table.lists[i];
    for (std::size_t j = 0; j < list.size(); ++j) {
      out << (j == 0 ? " " : ",") << bundle.episodes[list[j]].episode_id;
    }
    out << '\n';
  }
  if (!out) {
    throw IoError("failed while writing " + path);
  }
}

NeighborTable load_neighbor_table(const std::string& path,
                                  const DatasetBundle& bundle) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path + " for reading");
  }
  NeighborTable table;
  table.lists.resize(bundle.episodes.size());
  std::vector<char> filled(bundle.episodes.size(), 0);
  std::string line;
  int line_no = 0;
  auto trim = [](std::string s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return std::string();
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto where = path + ":" + std::to_string(line_no) + ": ";
    const auto colon = line.find(':');
    if (colon == std::string::npos) {
      throw ParseError(where + "expected `episode_id: id1,id2,...`");
    }
    const std::string key = trim(line.substr(0, colon));
    int row = -1;
    try {
      row = bundle.episode_at(key);
    } catch (const LookupError&) {
      throw ParseError(where + "unknown episode id \"" + key + "\"");
    }
    if (filled[row]) {
      throw IntegrityError(where + "duplicate entry for \"" + key + "\"");
    }
    filled[row] = 1;
    std::stringstream ss(line.substr(colon + 1));
    std::string tok;
    std::vector<int> list;
    while (std::getline(ss, tok, ',')) {
      tok = trim(tok);
      if (tok.empty()) continue;
      try {
        list.push_back(bundle.episode_at(tok));
      } catch (const LookupError&) {
        throw ParseError(where + "unknown neighbor id \"" + tok + "\"");
      }
    }
    table.k = std::max(table.k, static_cast<int>(list.size()));
    table.lists[row] = std::move(list);
  }
  for (std::size_t i = 0; i < filled.size(); ++i) {
    if (!filled[i]) {
      throw IntegrityError(path + ": missing entry for episode \"" +
                           bundle.episodes[i].episode_id + "\"");
    }
  }
  return table;
}

}  // namespace msacl
