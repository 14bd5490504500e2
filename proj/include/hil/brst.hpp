#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hil/embedding_store.hpp"
#include "hil/hierarchy.hpp"
#include "hil/losses.hpp"
#include "hil/matrix.hpp"

namespace hil {

enum class BrstDirection { VisToIr, IrToVis };

std::string_view to_string(BrstDirection d);
BrstDirection parse_direction(std::string_view text);
// Even epochs label visible instances with infrared clusters, odd epochs the reverse.
BrstDirection direction_for_epoch(int epoch);
Modality source_of(BrstDirection d);
Modality target_of(BrstDirection d);

inline constexpr int kUnmatched = -1;

// values(k, i) = cosine similarity of source instance row_ids[k] and target
// coarse cluster col_ids[i].
struct SimilarityMatrix {
  Matrix values;
  std::vector<int> row_ids;
  std::vector<int> col_ids;
};

/// Throws EmptyBank when there are no target clusters.
SimilarityMatrix build_similarity(const Matrix& instances, std::span<const int> row_ids, const Matrix& centers);

struct UnifiedLabels {
  BrstDirection direction = BrstDirection::VisToIr;
  double gamma = 0.5;
  // Per row of the similarity matrix.
  std::vector<int> instance_ids;
  std::vector<int> best_cluster;  // row argmax, lowest column on ties
  std::vector<double> m_r;
  std::vector<double> m_c;
  std::vector<int> target;        // best_cluster or kUnmatched
  // Source coarse id -> target cluster or kUnmatched; filled by unify_cluster_labels.
  std::vector<int> per_cluster;

  int matched_count() const;
  double match_rate() const;
};

/// Row k keeps its argmax column i* iff max_i S(k,i) > gamma * max_j S(j,i*).
UnifiedLabels reverse_select(const SimilarityMatrix& s, double gamma, BrstDirection direction = BrstDirection::VisToIr);

/// Majority vote of matched members per source coarse cluster; ties go to the
/// target with the larger mean similarity among its voters, then the lower id.
void unify_cluster_labels(UnifiedLabels& labels, const CoarseLabeling& source);

/// MCCL override for `epoch`: every matched source instance is steered to
/// its cluster's unified target. Throws StaleLabels when the epoch parity
/// does not match the labels' direction or cluster labels are missing.
CrossModalOverride apply_unified(int epoch, const UnifiedLabels& unified, const CoarseLabeling& source);

// Full association for one direction: similarity of non-outlier source
// features against target coarse memory rows, reverse selection and
// cluster-level unification.
UnifiedLabels associate(const Matrix& source_features, const CoarseLabeling& source, const Matrix& target_centers,
                        double gamma, BrstDirection direction);

std::string brst_csv_header();
// instance_id,direction,target_cluster,m_r,m_c,matched (target_cluster is the row argmax)
std::string brst_csv_rows(const UnifiedLabels& labels);

}  // namespace hil
