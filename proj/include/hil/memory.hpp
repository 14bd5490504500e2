#pragma once

#include <span>
#include <vector>

#include "hil/embedding_store.hpp"
#include "hil/hierarchy.hpp"
#include "hil/matrix.hpp"

namespace hil {

enum class MemoryLevel { Coarse, Fine };

// Coarse rows (one per coarse cluster) and ragged fine rows (per coarse
// cluster, one per sub-cluster) for one modality. Every row is unit norm.
struct ModalityMemory {
  Matrix coarse;
  std::vector<Matrix> fine;

  bool operator==(const ModalityMemory&) const = default;
};

struct MemoryBank {
  ModalityMemory vis;
  ModalityMemory ir;
  double alpha = 0.1;  // weight of the previous row in a momentum update
  double tau = 0.05;

  ModalityMemory& of(Modality m) { return m == Modality::Vis ? vis : ir; }
  const ModalityMemory& of(Modality m) const { return m == Modality::Vis ? vis : ir; }

  bool operator==(const MemoryBank&) const = default;
};

ModalityMemory memory_from_centroids(const Centroids& centroids);

// Each row is the normalized centroid row. Throws ZeroVector for a centroid
// that is numerically zero.
MemoryBank init_from_centroids(const Centroids& vis, const Centroids& ir, double alpha, double tau);

// row <- normalize(alpha * row + (1 - alpha) * query). `sub` is ignored for
// the coarse level. Throws UnknownLabel for an out-of-range label.
void momentum_update(MemoryBank& bank, MemoryLevel level, Modality modality, int coarse, int sub,
                     std::span<const double> query);

struct DirectionalLoss {
  double value = 0.0;
  Matrix grad;  // one row per query
};

// Softmax cross-entropy of every query against all coarse rows of its own
// modality, positive = its coarse label; mean over queries. Memory rows are
// constants. Throws EmptyBank when the modality has no coarse rows.
DirectionalLoss identity_loss(const MemoryBank& bank, Modality modality, const Matrix& queries,
                              std::span<const int> coarse_labels);

}  // namespace hil
