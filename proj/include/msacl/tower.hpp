#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "msacl/types.hpp"

namespace msacl {

/// One fully connected layer. W maps row vectors: y = x * W + b, with
/// W of shape (fan_in x fan_out).
struct DenseLayer {
  Mat W;
  Vec b;
};

/// An L-layer stack with ReLU after every layer, the output layer
/// included. `relu_head = false` (the linear-head variant) drops the
/// activation on the last layer only.
struct TowerStack {
  std::vector<DenseLayer> layers;
  bool relu_head = true;

  int input_width() const {
    return layers.empty() ? 0 : static_cast<int>(layers.front().W.rows());
  }
  int output_width() const {
    return layers.empty() ? 0 : static_cast<int>(layers.back().W.cols());
  }
};

struct TowerParams {
  TowerStack user;
  TowerStack episode;
};

TowerParams init_params(int user_width, int episode_width,
                        const std::vector<int>& hidden_dims, std::uint64_t seed,
                        bool linear_head = false);

/// Pre-activations and activations kept for the backward pass.
/// act[0] is the input batch; pre[l] and act[l+1] belong to layer l.
struct ForwardCache {
  std::vector<Mat> pre;
  std::vector<Mat> act;
};

/// Batch forward: X has one input row per sample. Returns the final
/// activations (n x output_width).
Mat tower_forward(const TowerStack& tower, const Mat& X,
                  ForwardCache* cache = nullptr);

Vec tower_forward(const TowerStack& tower, const Vec& x);

/// Dot-product preference score of one user/episode input pair.
Scalar score(const TowerParams& params, const Vec& user_vec,
             const Vec& episode_vec);

struct TowerGrads {
  std::vector<Mat> dW;
  std::vector<Vec> db;

  void setZero();
  bool allFinite() const;
};

struct ParamGrads {
  TowerGrads user;
  TowerGrads episode;
};

TowerGrads make_zero_grads(const TowerStack& tower);
ParamGrads make_zero_grads(const TowerParams& params);

/// Reverse accumulation through the stack. dOut is the loss gradient at
/// the tower output (n x output_width). The ReLU subgradient at exactly 0
/// is taken as 0. Accumulates into `grads`; returns the gradient at the
/// input for callers that need it.
Mat tower_backward(const TowerStack& tower, const ForwardCache& cache,
                   const Mat& dOut, TowerGrads& grads);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First/second moment accumulators mirroring TowerParams shapes.
struct OptimizerState {
  AdamConfig config;
  long step = 0;
  TowerGrads m_user, v_user;
  TowerGrads m_episode, v_episode;

  static OptimizerState create(const TowerParams& params, AdamConfig config);
};

/// One Adam update with bias correction. Throws NumericError naming the
/// offending parameter if a gradient is not finite.
void optimizer_step(TowerParams& params, const ParamGrads& grads,
                    OptimizerState& state);

struct Checkpoint {
  std::uint32_t version = 1;
  std::uint64_t user_schema_id = 0;
  std::uint64_t episode_schema_id = 0;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  std::string variant;  // model tag carried into reports
  TowerParams params;
  bool has_optimizer = false;
  OptimizerState optimizer;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Throws IncompatibilityError unless the checkpoint was trained against
/// the given schema hashes.
void check_schema_compatibility(const Checkpoint& ckpt,
                                std::uint64_t user_schema_id,
                                std::uint64_t episode_schema_id);

}  // namespace msacl
