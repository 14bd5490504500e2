#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hil/matrix.hpp"

namespace hil {

inline constexpr std::array<int, 4> kCmcRanks = {1, 5, 10, 20};

struct RetrievalMetrics {
  std::array<double, 4> cmc{};  // at kCmcRanks
  double map = 0.0;
  double minp = 0.0;
  int queries = 0;          // retained queries
  int dropped_queries = 0;  // queries without any relevant gallery item
  std::vector<double> per_query_ap;

  double rank1() const { return cmc[0]; }
};

/// Ranks the gallery for every query by descending similarity (ties by
/// gallery index). With relevant positions p_1 < ... < p_G (1-based):
/// AP = (1/G) sum_j j / p_j, INP = G / p_G, CMC@k = [p_1 <= k].
/// Queries without relevant items are dropped and counted; throws NoRelevant
/// when none remain.
RetrievalMetrics cmc_map_minp(const Matrix& similarity, std::span<const int> query_labels,
                              std::span<const int> gallery_labels);

/// Cosine-similarity retrieval between two feature sets.
RetrievalMetrics evaluate_retrieval(const Matrix& query_features, std::span<const int> query_labels,
                                    const Matrix& gallery_features, std::span<const int> gallery_labels);

struct ClusteringQuality {
  double ari = 0.0;
  double ami = 0.0;
  double v_measure = 0.0;
  double homogeneity = 0.0;
  double completeness = 0.0;
};

/// Contingency-table ARI, AMI (arithmetic-mean normalization) and V-measure.
/// Negative predicted labels are outliers and each forms its own singleton
/// cluster. Throws MismatchedInstances when the sizes differ.
ClusteringQuality clustering_quality(std::span<const int> predicted, std::span<const int> truth);

struct PairMargin {
  double delta = 0.0;
  double mean_positive = 0.0;
  double mean_negative = 0.0;
  std::uint64_t positive_pairs = 0;
  std::uint64_t negative_pairs = 0;
  bool exhaustive = true;
};

inline constexpr std::uint64_t kExhaustivePairLimit = 1000000;

/// Mean Euclidean distance of cross-modal negative pairs minus that of
/// positive pairs on unit features. All pairs are enumerated when
/// |a| * |b| <= exhaustive_limit; otherwise `samples` pairs of each kind are
/// drawn uniformly. Throws NoPairs when either kind is absent.
PairMargin pair_margin(const Matrix& features_a, std::span<const int> labels_a, const Matrix& features_b,
                       std::span<const int> labels_b, std::uint64_t seed = 0, std::uint64_t samples = 100000,
                       std::uint64_t exhaustive_limit = kExhaustivePairLimit);

struct MetricTable {
  std::string direction;
  RetrievalMetrics retrieval;
  ClusteringQuality quality;
  double delta_margin = 0.0;
};

std::string metric_csv_header();
std::string metric_csv_row(const MetricTable& table, std::uint64_t seed);
nlohmann::json metric_json(const MetricTable& table);

}  // namespace hil
