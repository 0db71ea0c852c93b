#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msacl/dataset.hpp"
#include "msacl/featurize.hpp"
#include "msacl/neighbors.hpp"
#include "msacl/rng.hpp"
#include "msacl/tower.hpp"
#include "msacl/types.hpp"

namespace msacl {

enum class AugmentationKind {
  feature_dropout,
  content_neighbors,
  kg_neighbors,
  composite,
};

enum class CompositeRule { uniform_choice, chain };

// How the positive view of an interacted episode is produced. Composites
// either pick one part uniformly per pair or apply the parts in order
// (neighbor hops first, then dropout), which is how KG-FD composes.
struct AugmentationSource {
  AugmentationKind kind = AugmentationKind::feature_dropout;
  Scalar dropout_p = 0.0;  // dropout sources, and the empty-list fallback
  int k = 10;              // neighbor sources
  CompositeRule rule = CompositeRule::uniform_choice;
  std::vector<AugmentationSource> parts;

  static AugmentationSource make_dropout(Scalar p);
  static AugmentationSource content_neighbors(int k, Scalar fallback_p = 0.0);
  static AugmentationSource kg_neighbors(int k, Scalar fallback_p = 0.0);
  static AugmentationSource composite(std::vector<AugmentationSource> parts,
                                      CompositeRule rule);

  // Throws ConfigError on empty composites, out-of-range probabilities,
  // non-positive K, or a chain that hops to a neighbor after a dropout.
  void validate() const;

  bool uses_content() const;
  bool uses_kg() const;
};

struct ContrastiveBatch {
  Mat anchors;  // N x width, encodings of the interacted positives
  Mat views;    // N x width, the augmented counterparts
  Mat users;    // N x user width
  std::vector<std::string> provenance;  // per pair, e.g. "kg-neighbor"

  int size() const { return static_cast<int>(anchors.rows()); }
};

struct TrainConfig {
  Scalar lambda = 1.0;
  int k_negatives = 8;
  int batch_size = 64;
  Scalar temperature = 1.0;
  int epochs = 40;
  Scalar learning_rate = 3e-3;
  AugmentationSource source;
  Scalar dropout_p = 0.3;
  int neighbor_k = 10;
  std::uint64_t seed = 1;
  std::vector<int> hidden_dims = {64, 32};
  bool linear_head = false;
  // Averages the anchor->view direction with view->anchor. Off reproduces
  // the single-direction loss.
  bool symmetric = false;
  // Replaces uniformly sampled negatives with the other positives of the
  // minibatch.
  bool in_batch_negatives = false;
  int threads = 1;

  void validate() const;
};

// Stable hash of every field that affects the numerical result; recorded
// in checkpoints, logs and reports.
std::uint64_t config_hash(const TrainConfig& config);

struct NeighborCaches {
  const NeighborTable* content = nullptr;
  const NeighborTable* kg = nullptr;
};

// Produces the augmented view i_b for the episode at `episode_idx`. An
// empty (or missing) neighbor list falls back to feature dropout and
// increments *fallbacks; augmentation never fails a training step.
Vec make_pair(const EncodedDataset& enc, const NeighborCaches& caches,
              const AugmentationSource& source, int episode_idx, Rng& rng,
              long* fallbacks = nullptr, std::string* provenance = nullptr);

// NT-Xent on the 2N reindexed rows [a1, b1, a2, b2, ...]: each anchor is
// pulled toward its view against the other 2N-1 batch entries (the view
// included in the denominator). Mean over the N anchors; `symmetric`
// additionally runs the reversed direction and averages over 2N.
// Gradients are w.r.t. the embedding rows.
Scalar ntxent_core(const Mat& embeddings, Scalar temperature, bool symmetric,
                   Mat* grad = nullptr);

struct NtxentResult {
  Scalar loss = 0.0;
  Mat d_embeddings;  // 2N x output width, reindexed like the forward input
};

// Convenience wrapper: runs the episode tower on anchors and views and
// evaluates the loss on its outputs.
NtxentResult ntxent_loss(const ContrastiveBatch& batch,
                         const TowerParams& params, Scalar temperature,
                         bool symmetric = false);

// -[log s(r_pos) + sum_j log(1 - s(r_neg_j))] with s the logistic
// sigmoid, evaluated through softplus so saturated scores stay finite.
// Outputs the partials w.r.t. the raw scores.
Scalar interaction_core(Scalar r_pos, const Vec& r_neg, Scalar* d_pos = nullptr,
                        Vec* d_neg = nullptr);

struct InteractionResult {
  Scalar loss = 0.0;
  ParamGrads grads;
};

// Single-interaction wrapper used by the gradient gate: full forward and
// backward through both towers for one user, one positive and k negatives
// (rows of `negatives`).
InteractionResult interaction_loss(const TowerParams& params, const Vec& user,
                                   const Vec& positive, const Mat& negatives);

Scalar total_loss(const TrainConfig& config, Scalar interaction,
                  Scalar contrastive);

// One assembled minibatch. Negative rows for pair k live at
// negatives.row(i) for i in [neg_spans[k].first,
// neg_spans[k].first + neg_spans[k].second); spans may be ragged or empty.
// views holds one augmented row per pair, or zero rows to drop the
// contrastive term.
struct BatchInputs {
  Mat users;
  Mat positives;
  Mat negatives;
  std::vector<std::pair<int, int>> neg_spans;
  Mat views;
};

struct StepResult {
  Scalar loss = 0.0;
  Scalar interaction = 0.0;
  Scalar contrastive = 0.0;
  ParamGrads grads;
};

// Combined objective on one batch: mean interaction loss over the pairs
// plus lambda times the NT-Xent term, with gradients for every tower
// parameter. The training loop and the finite-difference harness share
// this path.
StepResult combined_step(const TowerParams& params, const BatchInputs& inputs,
                         Scalar lambda, Scalar temperature,
                         bool symmetric = false);

// Uniform without replacement over the catalog minus the user's train
// positives. Throws ArgumentError when k exceeds the pool.
std::vector<int> sample_negatives(const DatasetBundle& bundle, int user_idx,
                                  int k, Rng& rng);

struct TrainLogEntry {
  int epoch = 0;
  Scalar train_loss = 0.0;
  Scalar val_ndcg20 = 0.0;
  double wall_time_sec = 0.0;
  std::uint64_t config_hash = 0;

  // One JSON object per line; wall time is the only varying field and can
  // be suppressed for comparisons.
  std::string to_json(bool include_wall_time = true) const;
};

struct TrainResult {
  TowerParams params;  // best validation NDCG@20 checkpoint
  int best_epoch = 0;
  Scalar best_val_ndcg20 = 0.0;
  std::vector<TrainLogEntry> log;
  long augmentation_fallbacks = 0;
  std::uint64_t config_hash = 0;
};

// Full training loop: seeded shuffling, minibatching, augmentation,
// combined loss, Adam. lambda == 0 skips the contrastive path entirely,
// so such runs reduce bit-for-bit to the plain two-tower baseline.
TrainResult train(const DatasetBundle& bundle, const EncodedDataset& enc,
                  const NeighborCaches& caches, const TrainConfig& config);

// Convenience overload: encodes the bundle and builds whatever neighbor
// tables the augmentation source needs (exact index).
TrainResult train(const DatasetBundle& bundle, const TrainConfig& config);

}  // namespace msacl
