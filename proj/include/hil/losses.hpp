#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "hil/embedding_store.hpp"
#include "hil/matrix.hpp"
#include "hil/memory.hpp"

namespace hil {

enum class PoolKind { Instances, FineCenters };

// Positive/negative index sets into a candidate pool.
struct SampleSets {
  std::vector<int> positives;
  std::vector<int> negatives;
  PoolKind pool_kind = PoolKind::Instances;
};

// A batch of live query features for one modality with their pseudo-labels.
struct QueryBatch {
  Matrix features;
  std::vector<int> ids;
  std::vector<int> coarse;
  std::vector<int> sub;
};

// Candidate instances for the neighbour loss; ids drive self-exclusion.
struct InstancePool {
  Matrix features;
  std::vector<int> ids;
};

/// Reliable-neighbour split of a candidate pool. With s* the best similarity
/// (lowest index on ties), positives are candidates with sim >= beta * s*
/// (the argmax is always kept), negatives the rest. Rows listed in
/// `excluded` belong to neither set. Throws EmptyPool when nothing is left.
SampleSets neighbor_sets(std::span<const double> query, const Matrix& candidates, double beta,
                         std::span<const int> excluded = {});

// One direction of the neighbour loss, averaged over queries. With
// exclude_self, pool rows whose id equals the query id are skipped.
DirectionalLoss neighbor_direction(const QueryBatch& queries, const InstancePool& pool, bool exclude_self,
                                   double beta, double tau);

struct DirectionalTerms {
  DirectionalLoss vv, rr, rv, vr;  // rv: IR queries against VIS candidates

  double value() const { return vv.value + rr.value + rv.value + vr.value; }
  std::array<double, 4> values() const { return {vv.value, rr.value, rv.value, vr.value}; }
  Matrix grad(Modality m) const;
};

DirectionalTerms neighbor_loss(const QueryBatch& vis, const QueryBatch& ir, const InstancePool& pool_vis,
                               const InstancePool& pool_ir, double beta, double tau);

// Fine memory rows of one modality flattened in (coarse, sub) order.
struct FineCenters {
  Matrix rows;
  std::vector<int> coarse_of;
  std::vector<int> sub_of;
  int num_coarse = 0;
};

FineCenters flatten_fine(const ModalityMemory& memory);

/// Multi-centre split: positives are every fine centre of the coarse cluster
/// owning the most similar centre (or of `forced_coarse` when >= 0),
/// negatives the most similar centre of each other coarse cluster. Throws
/// EmptyBank when there are no centres.
SampleSets mccl_sets(std::span<const double> query, const FineCenters& centers, int forced_coarse = -1);

DirectionalLoss mccl_direction(const QueryBatch& queries, const FineCenters& centers, double tau,
                               std::span<const int> forced_coarse = {});

// Replaces the argmax-selected target cluster of the cross-modal MCCL
// direction whose queries come from `source`. target[id] is a coarse id of
// the other modality or -1 (no override).
struct CrossModalOverride {
  Modality source = Modality::Vis;
  std::vector<int> target;

  std::vector<int> for_batch(const QueryBatch& batch) const;
};

DirectionalTerms mccl_loss(const QueryBatch& vis, const QueryBatch& ir, const MemoryBank& bank, double tau,
                           const CrossModalOverride* override_labels = nullptr);

struct LossReport {
  double l_id = 0.0;
  double l_neighbor = 0.0;
  double l_mccl = 0.0;
  double l_total = 0.0;
  double id_vis = 0.0;
  double id_ir = 0.0;
  std::array<double, 4> neighbor_terms{};  // vv, rr, rv, vr
  std::array<double, 4> mccl_terms{};
  Matrix grad_vis;
  Matrix grad_ir;

  bool operator==(const LossReport&) const = default;
};

/// l_total = l_id + lambda1 * l_neighbor + lambda2 * l_mccl. Throws NonFinite
/// if any component is NaN or infinite.
LossReport total_loss(double l_id, double l_neighbor, double l_mccl, double lambda1, double lambda2);

Matrix combine_gradients(const Matrix& g_id, const Matrix& g_neighbor, const Matrix& g_mccl, double lambda1,
                         double lambda2);

struct LossWeights {
  double tau = 0.05;
  double beta = 0.9;
  double lambda1 = 0.1;
  double lambda2 = 0.1;
};

// Full objective for one iteration: identity, neighbour and multi-centre
// terms with gradients with respect to every query feature.
LossReport compute_batch_loss(const QueryBatch& vis, const QueryBatch& ir, const MemoryBank& bank,
                              const InstancePool& pool_vis, const InstancePool& pool_ir, const LossWeights& weights,
                              const CrossModalOverride* override_labels = nullptr);

std::string loss_csv_header();
std::string loss_csv_row(int epoch, int iteration, const LossReport& report);

}  // namespace hil
