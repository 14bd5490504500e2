#include "hil/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hil/contrastive.hpp"
#include "hil/csv.hpp"
#include "hil/errors.hpp"
#include "hil/parallel.hpp"

namespace hil {

SampleSets neighbor_sets(std::span<const double> query, const Matrix& candidates, double beta,
                         std::span<const int> excluded) {
  SampleSets out;
  out.pool_kind = PoolKind::Instances;
  const auto is_excluded = [&](int r) { return std::find(excluded.begin(), excluded.end(), r) != excluded.end(); };

  std::vector<double> sims(candidates.rows());
  int best = -1;
  for (int r = 0; r < static_cast<int>(candidates.rows()); ++r) {
    if (is_excluded(r)) continue;
    sims[static_cast<std::size_t>(r)] = cosine_sim(query, candidates.row(static_cast<std::size_t>(r)));
    if (best < 0 || sims[static_cast<std::size_t>(r)] > sims[static_cast<std::size_t>(best)]) best = r;
  }
  if (best < 0) throw Error(ErrorCode::EmptyPool, "no neighbour candidates left after self-exclusion");

  const double threshold = beta * sims[static_cast<std::size_t>(best)];
  for (int r = 0; r < static_cast<int>(candidates.rows()); ++r) {
    if (is_excluded(r)) continue;
    if (r == best || sims[static_cast<std::size_t>(r)] >= threshold) {
      out.positives.push_back(r);
    } else {
      out.negatives.push_back(r);
    }
  }
  return out;
}

namespace {

template <typename SetsFn>
DirectionalLoss average_terms(const QueryBatch& queries, const Matrix& candidates, double tau, SetsFn&& sets_for) {
  DirectionalLoss out;
  const std::size_t n = queries.features.rows();
  out.grad = Matrix(n, queries.features.cols());
  if (n == 0) return out;
  std::vector<double> losses(n);
  const double scale = 1.0 / static_cast<double>(n);
  parallel_for(n, [&](std::size_t q) {
    const auto query = queries.features.row(q);
    const SampleSets sets = sets_for(q, query);
    const auto term = contrastive_term(query, candidates, sets.positives, sets.negatives, tau);
    losses[q] = term.loss;
    auto g = out.grad.row(q);
    for (std::size_t k = 0; k < g.size(); ++k) g[k] = scale * term.grad[k];
  });
  out.value = pairwise_sum(losses) * scale;
  return out;
}

}  // namespace

DirectionalLoss neighbor_direction(const QueryBatch& queries, const InstancePool& pool, bool exclude_self,
                                   double beta, double tau) {
  return average_terms(queries, pool.features, tau, [&](std::size_t q, std::span<const double> query) {
    std::vector<int> excluded;
    if (exclude_self) {
      for (std::size_t r = 0; r < pool.ids.size(); ++r) {
        if (pool.ids[r] == queries.ids[q]) excluded.push_back(static_cast<int>(r));
      }
    }
    return neighbor_sets(query, pool.features, beta, excluded);
  });
}

Matrix DirectionalTerms::grad(Modality m) const {
  // VIS queries appear in vv and vr; IR queries in rr and rv.
  const Matrix& a = m == Modality::Vis ? vv.grad : rr.grad;
  const Matrix& b = m == Modality::Vis ? vr.grad : rv.grad;
  Matrix out = a;
  axpy(1.0, b.data(), out.data());
  return out;
}

DirectionalTerms neighbor_loss(const QueryBatch& vis, const QueryBatch& ir, const InstancePool& pool_vis,
                               const InstancePool& pool_ir, double beta, double tau) {
  DirectionalTerms out;
  out.vv = neighbor_direction(vis, pool_vis, true, beta, tau);
  out.rr = neighbor_direction(ir, pool_ir, true, beta, tau);
  out.rv = neighbor_direction(ir, pool_vis, false, beta, tau);
  out.vr = neighbor_direction(vis, pool_ir, false, beta, tau);
  return out;
}

FineCenters flatten_fine(const ModalityMemory& memory) {
  FineCenters out;
  out.num_coarse = static_cast<int>(memory.fine.size());
  for (std::size_t c = 0; c < memory.fine.size(); ++c) {
    for (std::size_t s = 0; s < memory.fine[c].rows(); ++s) {
      out.rows.append_row(memory.fine[c].row(s));
      out.coarse_of.push_back(static_cast<int>(c));
      out.sub_of.push_back(static_cast<int>(s));
    }
  }
  return out;
}

SampleSets mccl_sets(std::span<const double> query, const FineCenters& centers, int forced_coarse) {
  if (centers.rows.empty()) throw Error(ErrorCode::EmptyBank, "no fine centres in target modality");
  SampleSets out;
  out.pool_kind = PoolKind::FineCenters;
  const std::size_t n = centers.rows.rows();
  std::vector<double> sims(n);
  std::size_t best = 0;
  for (std::size_t r = 0; r < n; ++r) {
    sims[r] = cosine_sim(query, centers.rows.row(r));
    if (sims[r] > sims[best]) best = r;
  }
  int target = centers.coarse_of[best];
  if (forced_coarse >= 0) {
    if (forced_coarse >= centers.num_coarse) {
      throw Error(ErrorCode::UnknownLabel, "override target cluster " + std::to_string(forced_coarse));
    }
    target = forced_coarse;
  }

  std::vector<int> best_of(static_cast<std::size_t>(centers.num_coarse), -1);
  for (std::size_t r = 0; r < n; ++r) {
    const int c = centers.coarse_of[r];
    if (c == target) {
      out.positives.push_back(static_cast<int>(r));
      continue;
    }
    int& b = best_of[static_cast<std::size_t>(c)];
    if (b < 0 || sims[r] > sims[static_cast<std::size_t>(b)]) b = static_cast<int>(r);
  }
  for (int b : best_of) {
    if (b >= 0) out.negatives.push_back(b);
  }
  return out;
}

DirectionalLoss mccl_direction(const QueryBatch& queries, const FineCenters& centers, double tau,
                               std::span<const int> forced_coarse) {
  return average_terms(queries, centers.rows, tau, [&](std::size_t q, std::span<const double> query) {
    return mccl_sets(query, centers, forced_coarse.empty() ? -1 : forced_coarse[q]);
  });
}

std::vector<int> CrossModalOverride::for_batch(const QueryBatch& batch) const {
  std::vector<int> out;
  out.reserve(batch.ids.size());
  for (int id : batch.ids) {
    out.push_back(id >= 0 && static_cast<std::size_t>(id) < target.size() ? target[static_cast<std::size_t>(id)] : -1);
  }
  return out;
}

DirectionalTerms mccl_loss(const QueryBatch& vis, const QueryBatch& ir, const MemoryBank& bank, double tau,
                           const CrossModalOverride* override_labels) {
  const FineCenters vis_centers = flatten_fine(bank.vis);
  const FineCenters ir_centers = flatten_fine(bank.ir);
  std::vector<int> forced_vr, forced_rv;
  if (override_labels != nullptr) {
    if (override_labels->source == Modality::Vis) {
      forced_vr = override_labels->for_batch(vis);
    } else {
      forced_rv = override_labels->for_batch(ir);
    }
  }
  DirectionalTerms out;
  out.vv = mccl_direction(vis, vis_centers, tau);
  out.rr = mccl_direction(ir, ir_centers, tau);
  out.rv = mccl_direction(ir, vis_centers, tau, forced_rv);
  out.vr = mccl_direction(vis, ir_centers, tau, forced_vr);
  return out;
}

LossReport total_loss(double l_id, double l_neighbor, double l_mccl, double lambda1, double lambda2) {
  for (double v : {l_id, l_neighbor, l_mccl}) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFinite, "non-finite loss component");
  }
  LossReport r;
  r.l_id = l_id;
  r.l_neighbor = l_neighbor;
  r.l_mccl = l_mccl;
  r.l_total = l_id + lambda1 * l_neighbor + lambda2 * l_mccl;
  return r;
}

Matrix combine_gradients(const Matrix& g_id, const Matrix& g_neighbor, const Matrix& g_mccl, double lambda1,
                         double lambda2) {
  if (g_id.rows() != g_neighbor.rows() || g_id.rows() != g_mccl.rows() || g_id.cols() != g_neighbor.cols() ||
      g_id.cols() != g_mccl.cols()) {
    throw Error(ErrorCode::DimensionMismatch, "gradient blocks differ in shape");
  }
  Matrix out = g_id;
  axpy(lambda1, g_neighbor.data(), out.data());
  axpy(lambda2, g_mccl.data(), out.data());
  return out;
}

LossReport compute_batch_loss(const QueryBatch& vis, const QueryBatch& ir, const MemoryBank& bank,
                              const InstancePool& pool_vis, const InstancePool& pool_ir, const LossWeights& weights,
                              const CrossModalOverride* override_labels) {
  const auto id_vis = identity_loss(bank, Modality::Vis, vis.features, vis.coarse);
  const auto id_ir = identity_loss(bank, Modality::Ir, ir.features, ir.coarse);
  const auto nb = neighbor_loss(vis, ir, pool_vis, pool_ir, weights.beta, weights.tau);
  const auto mc = mccl_loss(vis, ir, bank, weights.tau, override_labels);

  LossReport r = total_loss(id_vis.value + id_ir.value, nb.value(), mc.value(), weights.lambda1, weights.lambda2);
  r.id_vis = id_vis.value;
  r.id_ir = id_ir.value;
  r.neighbor_terms = nb.values();
  r.mccl_terms = mc.values();
  r.grad_vis = combine_gradients(id_vis.grad, nb.grad(Modality::Vis), mc.grad(Modality::Vis), weights.lambda1,
                                 weights.lambda2);
  r.grad_ir = combine_gradients(id_ir.grad, nb.grad(Modality::Ir), mc.grad(Modality::Ir), weights.lambda1,
                                weights.lambda2);
  if (!all_finite(r.grad_vis.data()) || !all_finite(r.grad_ir.data())) {
    throw Error(ErrorCode::NonFinite, "non-finite loss gradient");
  }
  return r;
}

std::string loss_csv_header() {
  return "epoch,iter,l_id,neighbor_vv,neighbor_rr,neighbor_rv,neighbor_vr,l_neighbor,"
         "mccl_vv,mccl_rr,mccl_rv,mccl_vr,l_mccl,l_total";
}

std::string loss_csv_row(int epoch, int iteration, const LossReport& report) {
  std::string row = std::to_string(epoch) + "," + std::to_string(iteration) + "," + csv_number(report.l_id);
  for (double v : report.neighbor_terms) row += "," + csv_number(v);
  row += "," + csv_number(report.l_neighbor);
  for (double v : report.mccl_terms) row += "," + csv_number(v);
  row += "," + csv_number(report.l_mccl) + "," + csv_number(report.l_total);
  return row;
}

}  // namespace hil
