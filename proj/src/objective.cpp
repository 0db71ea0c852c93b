#include "msacl/objective.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "msacl/evaluate.hpp"
#include "msacl/util.hpp"

namespace msacl {

AugmentationSource AugmentationSource::make_dropout(Scalar p) {
  AugmentationSource s;
  s.kind = AugmentationKind::feature_dropout;
  s.dropout_p = p;
  return s;
}

AugmentationSource AugmentationSource::content_neighbors(int k,
                                                         Scalar fallback_p) {
  AugmentationSource s;
  s.kind = AugmentationKind::content_neighbors;
  s.k = k;
  s.dropout_p = fallback_p;
  return s;
}

AugmentationSource AugmentationSource::kg_neighbors(int k, Scalar fallback_p) {
  AugmentationSource s;
  s.kind = AugmentationKind::kg_neighbors;
  s.k = k;
  s.dropout_p = fallback_p;
  return s;
}

AugmentationSource AugmentationSource::composite(
    std::vector<AugmentationSource> parts, CompositeRule rule) {
  AugmentationSource s;
  s.kind = AugmentationKind::composite;
  s.rule = rule;
  s.parts = std::move(parts);
  return s;
}

void AugmentationSource::validate() const {
  if (dropout_p < 0.0 || dropout_p > 1.0) {
    throw ConfigError("augmentation: dropout probability must lie in [0,1]");
  }
  switch (kind) {
    case AugmentationKind::feature_dropout:
      break;
    case AugmentationKind::content_neighbors:
    case AugmentationKind::kg_neighbors:
      if (k <= 0) {
        throw ConfigError("augmentation: neighbor K must be positive");
      }
      break;
    case AugmentationKind::composite: {
      if (parts.empty()) {
        throw ConfigError("augmentation: composite needs at least one part");
      }
      for (const auto& part : parts) part.validate();
      if (rule == CompositeRule::chain) {
        bool masked = false;
        for (const auto& part : parts) {
          if (part.kind == AugmentationKind::composite) {
            throw ConfigError("augmentation: chains cannot nest composites");
          }
          if (part.kind == AugmentationKind::feature_dropout) {
            masked = true;
          } else if (masked) {
            throw ConfigError(
                "augmentation: chain cannot hop to a neighbor after dropout");
          }
        }
      }
      break;
    }
  }
}

bool AugmentationSource::uses_content() const {
  if (kind == AugmentationKind::content_neighbors) return true;
  for (const auto& part : parts) {
    if (part.uses_content()) return true;
  }
  return false;
}

bool AugmentationSource::uses_kg() const {
  if (kind == AugmentationKind::kg_neighbors) return true;
  for (const auto& part : parts) {
    if (part.uses_kg()) return true;
  }
  return false;
}

void TrainConfig::validate() const {
  if (lambda < 0.0) throw ConfigError("train: lambda must be nonnegative");
  if (k_negatives <= 0) {
    throw ConfigError("train: k_negatives must be positive");
  }
  if (batch_size <= 0) throw ConfigError("train: batch_size must be positive");
  if (temperature <= 0.0) {
    throw ConfigError("train: temperature must be positive");
  }
  if (epochs <= 0) throw ConfigError("train: epochs must be positive");
  if (learning_rate <= 0.0) {
    throw ConfigError("train: learning_rate must be positive");
  }
  if (dropout_p < 0.0 || dropout_p > 1.0) {
    throw ConfigError("train: dropout_p must lie in [0,1]");
  }
  if (neighbor_k <= 0) throw ConfigError("train: neighbor_k must be positive");
  if (hidden_dims.empty()) {
    throw ConfigError("train: hidden_dims must name at least one layer");
  }
  for (int d : hidden_dims) {
    if (d <= 0) throw ConfigError("train: hidden layer widths must be positive");
  }
  source.validate();
}

namespace {

void dump_source(std::ostream& os, const AugmentationSource& s) {
  switch (s.kind) {
    case AugmentationKind::feature_dropout:
      os << "fd(" << s.dropout_p << ")";
      return;
    case AugmentationKind::content_neighbors:
      os << "content(" << s.k << ";" << s.dropout_p << ")";
      return;
    case AugmentationKind::kg_neighbors:
      os << "kg(" << s.k << ";" << s.dropout_p << ")";
      return;
    case AugmentationKind::composite:
      os << (s.rule == CompositeRule::chain ? "chain[" : "choice[");
      for (std::size_t i = 0; i < s.parts.size(); ++i) {
        if (i) os << "|";
        dump_source(os, s.parts[i]);
      }
      os << "]";
      return;
  }
}

}  // namespace

std::uint64_t config_hash(const TrainConfig& config) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "lambda=" << config.lambda << ";k_neg=" << config.k_negatives
     << ";batch=" << config.batch_size << ";tau=" << config.temperature
     << ";epochs=" << config.epochs << ";lr=" << config.learning_rate
     << ";p=" << config.dropout_p << ";K=" << config.neighbor_k
     << ";seed=" << config.seed << ";hidden=";
  for (std::size_t i = 0; i < config.hidden_dims.size(); ++i) {
    if (i) os << ",";
    os << config.hidden_dims[i];
  }
  os << ";linear_head=" << (config.linear_head ? 1 : 0)
     << ";symmetric=" << (config.symmetric ? 1 : 0)
     << ";in_batch=" << (config.in_batch_negatives ? 1 : 0) << ";source=";
  dump_source(os, config.source);
  return fnv1a64(os.str());
}

namespace {

struct ViewState {
  int episode = -1;
  bool encoded = false;
  Vec values;
};

void ensure_encoded(const EncodedDataset& enc, ViewState& st) {
  if (!st.encoded) {
    st.values = enc.episodes.row(st.episode).transpose();
    st.encoded = true;
  }
}

void append_tag(std::string& prov, const std::string& tag) {
  if (!prov.empty()) prov += "+";
  prov += tag;
}

void apply_source(const EncodedDataset& enc, const NeighborCaches& caches,
                  const AugmentationSource& source, ViewState& st, Rng& rng,
                  long* fallbacks, std::string& prov) {
  switch (source.kind) {
    case AugmentationKind::feature_dropout: {
      ensure_encoded(enc, st);
      feature_dropout_inplace(st.values, enc.episode_schema, source.dropout_p,
                              rng);
      append_tag(prov, "feature-dropout");
      return;
    }
    case AugmentationKind::content_neighbors:
    case AugmentationKind::kg_neighbors: {
      const bool is_content = source.kind == AugmentationKind::content_neighbors;
      const NeighborTable* table = is_content ? caches.content : caches.kg;
      const std::vector<int>* list = nullptr;
      if (table && st.episode >= 0 &&
          st.episode < static_cast<int>(table->lists.size())) {
        list = &table->lists[st.episode];
      }
      if (list == nullptr || list->empty()) {
        if (fallbacks) ++*fallbacks;
        ensure_encoded(enc, st);
        feature_dropout_inplace(st.values, enc.episode_schema, source.dropout_p,
                                rng);
        append_tag(prov, "fallback-dropout");
        return;
      }
      const std::size_t pick = rng.uniform_u64(list->size());
      st.episode = (*list)[pick];
      st.encoded = false;
      st.values.resize(0);
      append_tag(prov, is_content ? "content-neighbor" : "kg-neighbor");
      return;
    }
    case AugmentationKind::composite: {
      if (source.rule == CompositeRule::uniform_choice) {
        const std::size_t pick = rng.uniform_u64(source.parts.size());
        apply_source(enc, caches, source.parts[pick], st, rng, fallbacks, prov);
      } else {
        for (const auto& part : source.parts) {
          apply_source(enc, caches, part, st, rng, fallbacks, prov);
        }
      }
      return;
    }
  }
}

}  // namespace

Vec make_pair(const EncodedDataset& enc, const NeighborCaches& caches,
              const AugmentationSource& source, int episode_idx, Rng& rng,
              long* fallbacks, std::string* provenance) {
  source.validate();
  if (episode_idx < 0 || episode_idx >= enc.episodes.rows()) {
    throw LookupError("make_pair: episode index " + std::to_string(episode_idx) +
                      " outside the encoded catalog");
  }
  ViewState st;
  st.episode = episode_idx;
  std::string prov;
  apply_source(enc, caches, source, st, rng, fallbacks, prov);
  ensure_encoded(enc, st);
  if (provenance) *provenance = prov;
  return st.values;
}

Scalar ntxent_core(const Mat& embeddings, Scalar temperature, bool symmetric,
                   Mat* grad) {
  const int rows = static_cast<int>(embeddings.rows());
  if (rows < 2 || rows % 2 != 0) {
    throw ArgumentError("ntxent: expected 2N embedding rows, got " +
                        std::to_string(rows));
  }
  if (temperature <= 0.0) {
    throw ArgumentError("ntxent: temperature must be positive");
  }
  const Mat sims = embeddings * embeddings.transpose() / temperature;
  if (!sims.allFinite()) {
    throw NumericError("ntxent: non-finite similarity matrix");
  }
  if (grad) {
    grad->resize(embeddings.rows(), embeddings.cols());
    grad->setZero();
  }
  const int n_anchors = symmetric ? rows : rows / 2;
  const Scalar weight = 1.0 / static_cast<Scalar>(n_anchors);

  Scalar loss = 0.0;
  for (int a = 0; a < rows; ++a) {
    if (!symmetric && a % 2 != 0) continue;
    const int b = a ^ 1;
    Scalar mx = -std::numeric_limits<Scalar>::infinity();
    for (int m = 0; m < rows; ++m) {
      if (m == a) continue;
      mx = std::max(mx, sims(a, m));
    }
    Scalar denom = 0.0;
    for (int m = 0; m < rows; ++m) {
      if (m == a) continue;
      denom += std::exp(sims(a, m) - mx);
    }
    loss += weight * (-(sims(a, b) - mx) + std::log(denom));
    if (grad) {
      for (int m = 0; m < rows; ++m) {
        if (m == a) continue;
        const Scalar p = std::exp(sims(a, m) - mx) / denom;
        const Scalar coef =
            weight * (p - (m == b ? 1.0 : 0.0)) / temperature;
        if (coef == 0.0) continue;
        grad->row(a) += coef * embeddings.row(m);
        grad->row(m) += coef * embeddings.row(a);
      }
    }
  }
  return loss;
}

NtxentResult ntxent_loss(const ContrastiveBatch& batch,
                         const TowerParams& params, Scalar temperature,
                         bool symmetric) {
  const int n = batch.size();
  if (n < 1) throw ArgumentError("ntxent: batch must hold at least one pair");
  if (batch.views.rows() != n) {
    throw ShapeError("ntxent: batch has " + std::to_string(n) +
                     " anchors but " + std::to_string(batch.views.rows()) +
                     " views");
  }
  Mat stacked(2 * n, batch.anchors.cols());
  for (int k = 0; k < n; ++k) {
    stacked.row(2 * k) = batch.anchors.row(k);
    stacked.row(2 * k + 1) = batch.views.row(k);
  }
  const Mat out = tower_forward(params.episode, stacked);
  NtxentResult result;
  result.loss = ntxent_core(out, temperature, symmetric, &result.d_embeddings);
  return result;
}

Scalar interaction_core(Scalar r_pos, const Vec& r_neg, Scalar* d_pos,
                        Vec* d_neg) {
  if (!std::isfinite(r_pos) || !r_neg.allFinite()) {
    throw NumericError("interaction loss: non-finite score");
  }
  Scalar loss = softplus(-r_pos);
  for (Index j = 0; j < r_neg.size(); ++j) {
    loss += softplus(r_neg[j]);
  }
  if (d_pos) *d_pos = sigmoid(r_pos) - 1.0;
  if (d_neg) {
    d_neg->resize(r_neg.size());
    for (Index j = 0; j < r_neg.size(); ++j) {
      (*d_neg)[j] = sigmoid(r_neg[j]);
    }
  }
  return loss;
}

InteractionResult interaction_loss(const TowerParams& params, const Vec& user,
                                   const Vec& positive, const Mat& negatives) {
  BatchInputs inputs;
  inputs.users = user.transpose();
  inputs.positives = positive.transpose();
  inputs.negatives = negatives;
  inputs.neg_spans = {{0, static_cast<int>(negatives.rows())}};
  StepResult step = combined_step(params, inputs, 0.0, 1.0, false);
  return {step.interaction, std::move(step.grads)};
}

Scalar total_loss(const TrainConfig& config, Scalar interaction,
                  Scalar contrastive) {
  if (config.lambda < 0.0) {
    throw ConfigError("total_loss: lambda must be nonnegative");
  }
  return interaction + config.lambda * contrastive;
}

std::vector<int> sample_negatives(const DatasetBundle& bundle, int user_idx,
                                  int k, Rng& rng) {
  if (user_idx < 0 || user_idx >= static_cast<int>(bundle.users.size())) {
    throw LookupError("sample_negatives: bad user index " +
                      std::to_string(user_idx));
  }
  if (k < 0) throw ArgumentError("sample_negatives: k must be nonnegative");
  std::unordered_set<int> excluded;
  if (bundle.split_of(user_idx) == SplitId::train) {
    const auto& pos = bundle.positives_of_user[user_idx];
    excluded.insert(pos.begin(), pos.end());
  }
  std::vector<int> pool;
  pool.reserve(bundle.episodes.size());
  for (int e = 0; e < static_cast<int>(bundle.episodes.size()); ++e) {
    if (!excluded.count(e)) pool.push_back(e);
  }
  if (k > static_cast<int>(pool.size())) {
    throw ArgumentError("sample_negatives: k=" + std::to_string(k) +
                        " exceeds the " + std::to_string(pool.size()) +
                        " episodes outside the user's train positives");
  }
  for (int i = 0; i < k; ++i) {
    const std::size_t j = i + rng.uniform_u64(pool.size() - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

StepResult combined_step(const TowerParams& params, const BatchInputs& inputs,
                         Scalar lambda, Scalar temperature, bool symmetric) {
  const int n = static_cast<int>(inputs.users.rows());
  if (n < 1) throw ArgumentError("combined_step: empty batch");
  if (inputs.positives.rows() != n ||
      static_cast<int>(inputs.neg_spans.size()) != n) {
    throw ShapeError("combined_step: users, positives and neg_spans disagree");
  }
  const bool contrastive = inputs.views.rows() > 0;
  if (contrastive && inputs.views.rows() != n) {
    throw ShapeError("combined_step: expected one view per pair");
  }
  const int n_neg = static_cast<int>(inputs.negatives.rows());

  // Episode rows: positives, then all negatives, then the views.
  const int view_base = n + n_neg;
  Mat episode_in(view_base + (contrastive ? n : 0), inputs.positives.cols());
  episode_in.topRows(n) = inputs.positives;
  if (n_neg > 0) episode_in.middleRows(n, n_neg) = inputs.negatives;
  if (contrastive) episode_in.bottomRows(n) = inputs.views;

  ForwardCache user_cache, episode_cache;
  const Mat user_out = tower_forward(params.user, inputs.users, &user_cache);
  const Mat episode_out =
      tower_forward(params.episode, episode_in, &episode_cache);

  Mat d_user_out = Mat::Zero(user_out.rows(), user_out.cols());
  Mat d_episode_out = Mat::Zero(episode_out.rows(), episode_out.cols());

  StepResult result;
  const Scalar inv_n = 1.0 / static_cast<Scalar>(n);
  for (int k = 0; k < n; ++k) {
    const auto [neg_begin, neg_count] = inputs.neg_spans[k];
    if (neg_begin < 0 || neg_begin + neg_count > n_neg) {
      throw ShapeError("combined_step: negative span out of range");
    }
    const Scalar r_pos = user_out.row(k).dot(episode_out.row(k));
    Vec r_neg(neg_count);
    for (int j = 0; j < neg_count; ++j) {
      r_neg[j] = user_out.row(k).dot(episode_out.row(n + neg_begin + j));
    }
    Scalar d_pos = 0.0;
    Vec d_neg;
    result.interaction += inv_n * interaction_core(r_pos, r_neg, &d_pos, &d_neg);
    d_pos *= inv_n;
    d_user_out.row(k) += d_pos * episode_out.row(k);
    d_episode_out.row(k) += d_pos * user_out.row(k);
    for (int j = 0; j < neg_count; ++j) {
      const Scalar dj = inv_n * d_neg[j];
      d_user_out.row(k) += dj * episode_out.row(n + neg_begin + j);
      d_episode_out.row(n + neg_begin + j) += dj * user_out.row(k);
    }
  }

  if (contrastive) {
    Mat z(2 * n, episode_out.cols());
    for (int k = 0; k < n; ++k) {
      z.row(2 * k) = episode_out.row(k);
      z.row(2 * k + 1) = episode_out.row(view_base + k);
    }
    Mat dz;
    result.contrastive = ntxent_core(z, temperature, symmetric, &dz);
    for (int k = 0; k < n; ++k) {
      d_episode_out.row(k) += lambda * dz.row(2 * k);
      d_episode_out.row(view_base + k) += lambda * dz.row(2 * k + 1);
    }
  }
  result.loss = result.interaction + lambda * result.contrastive;

  result.grads = make_zero_grads(params);
  tower_backward(params.user, user_cache, d_user_out, result.grads.user);
  tower_backward(params.episode, episode_cache, d_episode_out,
                 result.grads.episode);
  return result;
}

std::string TrainLogEntry::to_json(bool include_wall_time) const {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "{\"config_hash\":\"" << to_hex(config_hash) << "\",\"epoch\":" << epoch
     << ",\"train_loss\":" << train_loss << ",\"val_ndcg20\":" << val_ndcg20;
  if (include_wall_time) {
    os << ",\"wall_time_sec\":" << wall_time_sec;
  }
  os << "}";
  return os.str();
}

TrainResult train(const DatasetBundle& bundle, const EncodedDataset& enc,
                  const NeighborCaches& caches, const TrainConfig& config) {
  config.validate();
  const auto pairs = bundle.train_pairs();
  if (pairs.empty()) {
    throw StateError("train: the bundle has no train interactions");
  }

  TowerParams params =
      init_params(enc.user_schema.width, enc.episode_schema.width,
                  config.hidden_dims, config.seed, config.linear_head);
  AdamConfig adam;
  adam.learning_rate = config.learning_rate;
  OptimizerState optimizer = OptimizerState::create(params, adam);

  Rng shuffle_rng(derive_seed(config.seed, "shuffle"));
  Rng neg_rng(derive_seed(config.seed, "neg"));
  Rng aug_rng(derive_seed(config.seed, "aug"));

  const bool contrastive = config.lambda > 0.0;
  TrainResult result;
  result.config_hash = config_hash(config);
  result.best_val_ndcg20 = -std::numeric_limits<Scalar>::infinity();

  std::vector<int> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);

  EvalOptions val_opts;
  val_opts.threads = config.threads;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    Timer timer;
    shuffle_rng.shuffle(order);
    Scalar loss_sum = 0.0;
    int steps = 0;
    for (std::size_t begin = 0; begin < order.size();
         begin += static_cast<std::size_t>(config.batch_size)) {
      const int n = static_cast<int>(
          std::min<std::size_t>(config.batch_size, order.size() - begin));
      BatchInputs inputs;
      inputs.users.resize(n, enc.users.cols());
      inputs.positives.resize(n, enc.episodes.cols());
      inputs.neg_spans.resize(n);

      std::vector<int> batch_users(n), batch_episodes(n);
      for (int k = 0; k < n; ++k) {
        const auto [u, i] = pairs[order[begin + k]];
        batch_users[k] = u;
        batch_episodes[k] = i;
        inputs.users.row(k) = enc.users.row(u);
        inputs.positives.row(k) = enc.episodes.row(i);
      }

      std::vector<int> neg_rows;
      for (int k = 0; k < n; ++k) {
        const int span_begin = static_cast<int>(neg_rows.size());
        if (config.in_batch_negatives) {
          const auto& own = bundle.positives_of_user[batch_users[k]];
          for (int m = 0; m < n; ++m) {
            if (m == k) continue;
            const int e = batch_episodes[m];
            if (std::find(own.begin(), own.end(), e) == own.end()) {
              neg_rows.push_back(e);
            }
          }
        } else {
          for (int e : sample_negatives(bundle, batch_users[k],
                                        config.k_negatives, neg_rng)) {
            neg_rows.push_back(e);
          }
        }
        inputs.neg_spans[k] = {span_begin,
                               static_cast<int>(neg_rows.size()) - span_begin};
      }
      inputs.negatives.resize(static_cast<int>(neg_rows.size()),
                              enc.episodes.cols());
      for (std::size_t r = 0; r < neg_rows.size(); ++r) {
        inputs.negatives.row(static_cast<int>(r)) =
            enc.episodes.row(neg_rows[r]);
      }

      if (contrastive) {
        inputs.views.resize(n, enc.episodes.cols());
        for (int k = 0; k < n; ++k) {
          inputs.views.row(k) =
              make_pair(enc, caches, config.source, batch_episodes[k], aug_rng,
                        &result.augmentation_fallbacks)
                  .transpose();
        }
      }

      try {
        const StepResult step = combined_step(
            params, inputs, config.lambda, config.temperature, config.symmetric);
        loss_sum += step.loss;
        optimizer_step(params, step.grads, optimizer);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + " step " +
                           std::to_string(steps) + ": " + e.what());
      }
      ++steps;
    }

    TowerScorer scorer(bundle, enc, params, "validation");
    const Scalar val =
        mean_ndcg_at_n(scorer, bundle, SplitId::valid, 20, val_opts);

    TrainLogEntry entry;
    entry.epoch = epoch;
    entry.train_loss = loss_sum / static_cast<Scalar>(steps);
    entry.val_ndcg20 = val;
    entry.wall_time_sec = timer.seconds();
    entry.config_hash = result.config_hash;
    result.log.push_back(entry);

    if (val > result.best_val_ndcg20) {
      result.best_val_ndcg20 = val;
      result.best_epoch = epoch;
      result.params = params;
    }
  }
  return result;
}

TrainResult train(const DatasetBundle& bundle, const TrainConfig& config) {
  config.validate();
  if (bundle.episodes.empty()) {
    throw StateError("train: the bundle has no episodes");
  }
  const EncodedDataset enc = encode_dataset(bundle);

  NeighborTable content_table, kg_table;
  NeighborCaches caches;
  if (config.source.uses_content()) {
    const auto index = build_index(bundle, SpaceTag::content);
    content_table =
        build_neighbor_table(index, config.neighbor_k, config.threads);
    caches.content = &content_table;
  }
  if (config.source.uses_kg()) {
    const auto index = build_index(bundle, SpaceTag::kg);
    kg_table = build_neighbor_table(index, config.neighbor_k, config.threads);
    caches.kg = &kg_table;
  }
  return train(bundle, enc, caches, config);
}

}  // namespace msacl
