#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hil/brst.hpp"
#include "hil/embedding_store.hpp"
#include "hil/eval_metrics.hpp"
#include "hil/hierarchy.hpp"
#include "hil/losses.hpp"
#include "hil/matrix.hpp"
#include "hil/memory.hpp"

namespace hil {

// Shared affine map followed by L2 normalization: feature = normalize(W^T x + b).
struct Encoder {
  Matrix weight;  // d_in x d
  Vector bias;    // d

  struct Output {
    Vector pre;
    Vector feature;
  };

  static Encoder random(std::size_t d_in, std::size_t d, std::mt19937_64& rng);

  std::size_t input_dim() const { return weight.rows(); }
  std::size_t output_dim() const { return weight.cols(); }

  Output forward(std::span<const double> raw) const;
  Matrix encode(const Matrix& raw) const;

  bool operator==(const Encoder&) const = default;
};

struct EncoderGrad {
  Matrix weight;
  Vector bias;
};

enum class NeighborPool { Dataset, Batch };

struct TrainConfig {
  int epochs = 30;
  double lr = 3.5e-5;
  int lr_step = 20;       // epochs between decays
  double lr_decay = 0.1;
  int pk_identities = 8;  // pseudo-identities per batch
  int pk_instances = 16;  // instances per pseudo-identity and modality
  double tau = 0.05;
  double alpha = 0.1;
  int fine_k = 9;
  double gamma = 0.5;
  double beta = 0.9;
  double lambda1 = 0.1;
  double lambda2 = 0.1;
  double eps = 0.6;
  int min_pts = 4;
  std::size_t feature_dim = 0;  // 0: same as the input dimension
  NeighborPool neighbor_pool = NeighborPool::Dataset;
  bool use_brst = true;
  std::uint64_t seed = 0;

  void validate() const;
  double lr_at(int epoch) const;
  LossWeights weights() const { return {tau, beta, lambda1, lambda2}; }

  bool operator==(const TrainConfig&) const = default;
};

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct TrainState {
  Encoder encoder;
  std::mt19937_64 rng;
  int next_epoch = 0;

  bool operator==(const TrainState&) const = default;
};

TrainState init_train_state(const Dataset& dataset, const TrainConfig& config);

/// Samples min(P, M) clusters without replacement, then k_inst members from
/// each (with replacement only when the cluster is smaller than k_inst).
/// Throws NoClusters when the labeling has no clusters.
std::vector<int> pk_sample(const CoarseLabeling& labeling, int p, int k_inst, std::mt19937_64& rng);

/// Chain rule through normalize: (I - f f^T) g / |x| with f = x / |x|.
Vector backprop_normalization(std::span<const double> grad_feature, std::span<const double> pre);

/// Plain SGD, no momentum or weight decay. Throws NonFinite on non-finite
/// gradients or parameters (the encoder is left untouched).
void sgd_step(Encoder& encoder, const EncoderGrad& grad, double lr);

// Everything one iteration's objective depends on besides the encoder.
struct IterationContext {
  const Dataset& dataset;
  const CoarseLabeling& coarse_vis;
  const CoarseLabeling& coarse_ir;
  const FineLabeling& fine_vis;
  const FineLabeling& fine_ir;
  const MemoryBank& bank;
  const InstancePool* pool_vis;  // null: batch pools
  const InstancePool* pool_ir;
  LossWeights weights;
  const CrossModalOverride* override_labels = nullptr;
};

struct IterationResult {
  QueryBatch vis;
  QueryBatch ir;
  LossReport report;
  EncoderGrad grad;
};

/// Forward pass of the sampled batch, L_total and its gradient with respect
/// to the encoder parameters.
IterationResult evaluate_iteration(const Encoder& encoder, const IterationContext& ctx, std::span<const int> vis_ids,
                                   std::span<const int> ir_ids);

struct MemoryEvent {
  MemoryLevel level;
  Modality modality;
  int batch_position;
  int coarse;
  int sub;
};

struct EpochHooks {
  std::function<void(const MemoryEvent&)> on_memory_update;
};

struct EpochReport {
  int epoch = 0;
  BrstDirection direction = BrstDirection::VisToIr;
  double lr = 0.0;
  int m_vis = 0;
  int m_ir = 0;
  int outliers_vis = 0;
  int outliers_ir = 0;
  int association_rows = 0;
  int matched = 0;
  double match_rate = 0.0;
  bool skipped = false;  // a modality produced no clusters
  std::vector<LossReport> iterations;  // gradients stripped
  CoarseLabeling coarse_vis, coarse_ir;
  FineLabeling fine_vis, fine_ir;
  MemoryBank memory;  // bank after the last iteration
  double wall_seconds = 0.0;

  // Equality of everything except wall time.
  bool same_outcome(const EpochReport& other) const;
  LossReport mean_losses() const;
};

/// One epoch of training at index state.next_epoch: cluster, build
/// memories, associate across modalities, then PK-sampled SGD iterations.
/// On NonFinite the encoder is rolled back and the error rethrown.
EpochReport run_epoch(const Dataset& dataset, TrainState& state, const TrainConfig& config,
                      const EpochHooks* hooks = nullptr);

std::string epoch_csv_header();
std::string epoch_csv_row(const EpochReport& report, std::uint64_t seed);

// Checkpoint directory: encoder.jsonl, memory.jsonl, state.json.
void save_checkpoint(const std::filesystem::path& dir, const TrainState& state, const TrainConfig& config,
                     const MemoryBank* bank = nullptr);
struct Checkpoint {
  TrainState state;
  TrainConfig config;
  MemoryBank memory;
};
Checkpoint load_checkpoint(const std::filesystem::path& dir);

/// Both query directions (VIS->IR, IR->VIS) of cross-modal retrieval with
/// the encoder, sharing the mixed-modality clustering quality (DBSCAN on the
/// stacked features of both modalities) and the pair margin. Needs ground
/// truth.
std::vector<MetricTable> evaluate_model(const Dataset& dataset, const Encoder& encoder, double eps, int min_pts,
                                        std::uint64_t seed);

void save_memory_bank(const MemoryBank& bank, const std::filesystem::path& path);
MemoryBank load_memory_bank(const std::filesystem::path& path);

}  // namespace hil
