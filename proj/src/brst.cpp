#include "hil/brst.hpp"

#include <algorithm>
#include <limits>
#include <map>

#include "hil/csv.hpp"
#include "hil/errors.hpp"
#include "hil/parallel.hpp"

namespace hil {

std::string_view to_string(BrstDirection d) { return d == BrstDirection::VisToIr ? "VIS->IR" : "IR->VIS"; }

BrstDirection parse_direction(std::string_view text) {
  if (text == "VIS->IR" || text == "vis2ir") return BrstDirection::VisToIr;
  if (text == "IR->VIS" || text == "ir2vis") return BrstDirection::IrToVis;
  throw Error(ErrorCode::ParseError, "unknown association direction '" + std::string(text) + "'");
}

BrstDirection direction_for_epoch(int epoch) { return epoch % 2 == 0 ? BrstDirection::VisToIr : BrstDirection::IrToVis; }

Modality source_of(BrstDirection d) { return d == BrstDirection::VisToIr ? Modality::Vis : Modality::Ir; }
Modality target_of(BrstDirection d) { return other(source_of(d)); }

SimilarityMatrix build_similarity(const Matrix& instances, std::span<const int> row_ids, const Matrix& centers) {
  if (centers.empty()) throw Error(ErrorCode::EmptyBank, "no target clusters for association");
  if (row_ids.size() != instances.rows()) throw Error(ErrorCode::DimensionMismatch, "row id count mismatch");
  SimilarityMatrix s;
  s.values = Matrix(instances.rows(), centers.rows());
  s.row_ids.assign(row_ids.begin(), row_ids.end());
  for (int i = 0; i < static_cast<int>(centers.rows()); ++i) s.col_ids.push_back(i);
  parallel_for(instances.rows(), [&](std::size_t k) {
    for (std::size_t i = 0; i < centers.rows(); ++i) s.values(k, i) = cosine_sim(instances.row(k), centers.row(i));
  });
  return s;
}

int UnifiedLabels::matched_count() const {
  return static_cast<int>(std::count_if(target.begin(), target.end(), [](int t) { return t != kUnmatched; }));
}

double UnifiedLabels::match_rate() const {
  return target.empty() ? 0.0 : static_cast<double>(matched_count()) / static_cast<double>(target.size());
}

UnifiedLabels reverse_select(const SimilarityMatrix& s, double gamma, BrstDirection direction) {
  UnifiedLabels out;
  out.direction = direction;
  out.gamma = gamma;
  out.instance_ids = s.row_ids;
  const std::size_t rows = s.values.rows(), cols = s.values.cols();
  if (rows == 0 || cols == 0) {
    out.best_cluster.assign(rows, kUnmatched);
    out.m_r.assign(rows, 0.0);
    out.m_c.assign(rows, 0.0);
    out.target.assign(rows, kUnmatched);
    return out;
  }

  std::vector<double> column_max(cols, -std::numeric_limits<double>::infinity());
  for (std::size_t k = 0; k < rows; ++k) {
    for (std::size_t i = 0; i < cols; ++i) column_max[i] = std::max(column_max[i], s.values(k, i));
  }
  out.best_cluster.resize(rows);
  out.m_r.resize(rows);
  out.m_c.resize(rows);
  out.target.resize(rows);
  for (std::size_t k = 0; k < rows; ++k) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < cols; ++i) {
      if (s.values(k, i) > s.values(k, best)) best = i;
    }
    out.best_cluster[k] = s.col_ids[best];
    out.m_r[k] = s.values(k, best);
    out.m_c[k] = column_max[best];
    out.target[k] = out.m_r[k] > gamma * out.m_c[k] ? s.col_ids[best] : kUnmatched;
  }
  return out;
}

void unify_cluster_labels(UnifiedLabels& labels, const CoarseLabeling& source) {
  struct Tally {
    int votes = 0;
    double sim_sum = 0.0;
  };
  std::vector<std::map<int, Tally>> tallies(static_cast<std::size_t>(source.num_clusters));
  for (std::size_t k = 0; k < labels.instance_ids.size(); ++k) {
    if (labels.target[k] == kUnmatched) continue;
    const int id = labels.instance_ids[k];
    if (id < 0 || static_cast<std::size_t>(id) >= source.assignment.size()) {
      throw Error(ErrorCode::UnknownLabel, "association row refers to unknown instance " + std::to_string(id));
    }
    const int c = source.assignment[static_cast<std::size_t>(id)];
    if (c == kOutlier) continue;
    auto& t = tallies[static_cast<std::size_t>(c)][labels.target[k]];
    ++t.votes;
    t.sim_sum += labels.m_r[k];
  }
  labels.per_cluster.assign(static_cast<std::size_t>(source.num_clusters), kUnmatched);
  for (std::size_t c = 0; c < tallies.size(); ++c) {
    int best = kUnmatched;
    Tally best_tally;
    for (const auto& [target, t] : tallies[c]) {  // ascending target id
      const bool better = best == kUnmatched || t.votes > best_tally.votes ||
                          (t.votes == best_tally.votes && t.sim_sum / t.votes > best_tally.sim_sum / best_tally.votes);
      if (better) {
        best = target;
        best_tally = t;
      }
    }
    labels.per_cluster[c] = best;
  }
}

CrossModalOverride apply_unified(int epoch, const UnifiedLabels& unified, const CoarseLabeling& source) {
  if (direction_for_epoch(epoch) != unified.direction) {
    throw Error(ErrorCode::StaleLabels, "labels for " + std::string(to_string(unified.direction)) +
                                            " used in epoch " + std::to_string(epoch));
  }
  if (source.modality != source_of(unified.direction) ||
      unified.per_cluster.size() != static_cast<std::size_t>(source.num_clusters)) {
    throw Error(ErrorCode::StaleLabels, "cluster-level labels do not match the source labeling");
  }
  CrossModalOverride out;
  out.source = source_of(unified.direction);
  out.target.assign(source.assignment.size(), -1);
  for (std::size_t k = 0; k < unified.instance_ids.size(); ++k) {
    if (unified.target[k] == kUnmatched) continue;
    const auto id = static_cast<std::size_t>(unified.instance_ids[k]);
    const int c = source.assignment[id];
    if (c != kOutlier) out.target[id] = unified.per_cluster[static_cast<std::size_t>(c)];
  }
  return out;
}

UnifiedLabels associate(const Matrix& source_features, const CoarseLabeling& source, const Matrix& target_centers,
                        double gamma, BrstDirection direction) {
  Matrix rows;
  std::vector<int> ids;
  for (std::size_t id = 0; id < source.assignment.size(); ++id) {
    if (source.assignment[id] == kOutlier) continue;
    rows.append_row(source_features.row(id));
    ids.push_back(static_cast<int>(id));
  }
  if (rows.empty()) rows = Matrix(0, source_features.cols());
  auto labels = reverse_select(build_similarity(rows, ids, target_centers), gamma, direction);
  unify_cluster_labels(labels, source);
  return labels;
}

std::string brst_csv_header() { return "instance_id,direction,target_cluster,m_r,m_c,matched"; }

std::string brst_csv_rows(const UnifiedLabels& labels) {
  std::string out;
  for (std::size_t k = 0; k < labels.instance_ids.size(); ++k) {
    out += std::to_string(labels.instance_ids[k]) + "," + csv_field(to_string(labels.direction)) + "," +
           std::to_string(labels.best_cluster[k]) + "," + csv_number(labels.m_r[k]) + "," + csv_number(labels.m_c[k]) +
           "," + (labels.target[k] != kUnmatched ? "1" : "0") + "\n";
  }
  return out;
}

}  // namespace hil
