#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "hil/embedding_store.hpp"
#include "hil/matrix.hpp"

namespace hil {

inline constexpr int kOutlier = -1;

// Coarse pseudo-labels for one modality. assignment[id] is a cluster id in
// [0, num_clusters) or kOutlier. Cluster ids are compacted and ordered by
// their smallest member id.
struct CoarseLabeling {
  Modality modality = Modality::Vis;
  int num_clusters = 0;
  std::vector<int> assignment;

  std::vector<std::vector<int>> members() const;
  int outlier_count() const;

  bool operator==(const CoarseLabeling&) const = default;
};

// Fine pseudo-labels: each non-outlier instance gets (coarse, sub) with
// sub in [0, k_eff[coarse]).
struct FineLabeling {
  int requested_k = 0;
  std::vector<int> coarse;  // mirrors CoarseLabeling::assignment
  std::vector<int> sub;     // -1 for outliers
  std::vector<int> k_eff;   // per coarse cluster

  bool operator==(const FineLabeling&) const = default;
};

struct Centroids {
  Matrix coarse;              // M x d
  std::vector<Matrix> fine;   // per coarse id: k_eff x d
};

/// DBSCAN under cosine distance 1 - cos. A point is core when at least
/// min_pts points (itself included) lie within eps. Border points join the
/// cluster of their lowest-id core neighbour.
CoarseLabeling dbscan(const Matrix& features, double eps, int min_pts, Modality modality = Modality::Vis);

struct KMeansResult {
  std::vector<int> assignment;  // compacted cluster ids
  Matrix centers;
  std::vector<double> sse_trace;  // SSE after each assignment step
  int iterations = 0;
};

/// k-means++ seeding followed by Lloyd iterations on a point set. k is capped
/// at the number of distinct points; empty clusters are dropped.
KMeansResult kmeans(const Matrix& points, int k, std::uint64_t seed, int max_iterations = 100, double tolerance = 1e-6);

/// Runs kmeans() inside every coarse cluster. Each cluster uses its own
/// generator derived from (seed, cluster id), so clusters are independent.
FineLabeling kmeans_subcluster(const Matrix& features, const CoarseLabeling& coarse, int k, std::uint64_t seed);

Matrix coarse_centroids(const Matrix& features, const CoarseLabeling& coarse);
std::vector<Matrix> fine_centroids(const Matrix& features, const FineLabeling& fine);

Centroids compute_centroids(const Matrix& features, const CoarseLabeling& coarse, const FineLabeling& fine);

// {"modality": ..., "M": int, "assignment": [{"id": int, "coarse": int|-1, "sub": int|null}]}
nlohmann::json labeling_to_json(const CoarseLabeling& coarse, const FineLabeling* fine = nullptr);
CoarseLabeling coarse_from_json(const nlohmann::json& j);

}  // namespace hil
