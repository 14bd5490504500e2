#include "hil/memory.hpp"

#include <numeric>
#include <string>

#include "hil/contrastive.hpp"
#include "hil/errors.hpp"
#include "hil/parallel.hpp"

namespace hil {

namespace {

Matrix normalized_rows(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto unit = normalize(m.row(i));
    std::copy(unit.begin(), unit.end(), out.row(i).begin());
  }
  return out;
}

}  // namespace

ModalityMemory memory_from_centroids(const Centroids& centroids) {
  ModalityMemory out;
  out.coarse = normalized_rows(centroids.coarse);
  for (const auto& f : centroids.fine) out.fine.push_back(normalized_rows(f));
  return out;
}

MemoryBank init_from_centroids(const Centroids& vis, const Centroids& ir, double alpha, double tau) {
  MemoryBank bank;
  bank.vis = memory_from_centroids(vis);
  bank.ir = memory_from_centroids(ir);
  bank.alpha = alpha;
  bank.tau = tau;
  return bank;
}

void momentum_update(MemoryBank& bank, MemoryLevel level, Modality modality, int coarse, int sub,
                     std::span<const double> query) {
  auto& mem = bank.of(modality);
  const auto unknown = [&] {
    return Error(ErrorCode::UnknownLabel, std::string(to_string(modality)) + " label (" + std::to_string(coarse) +
                                              ", " + std::to_string(sub) + ") not in memory");
  };
  if (coarse < 0 || static_cast<std::size_t>(coarse) >= mem.coarse.rows()) throw unknown();
  std::span<double> row;
  if (level == MemoryLevel::Coarse) {
    row = mem.coarse.row(static_cast<std::size_t>(coarse));
  } else {
    auto& fine = mem.fine[static_cast<std::size_t>(coarse)];
    if (sub < 0 || static_cast<std::size_t>(sub) >= fine.rows()) throw unknown();
    row = fine.row(static_cast<std::size_t>(sub));
  }
  Vector mixed(row.size());
  for (std::size_t k = 0; k < row.size(); ++k) mixed[k] = bank.alpha * row[k] + (1.0 - bank.alpha) * query[k];
  const auto unit = normalize(mixed);
  std::copy(unit.begin(), unit.end(), row.begin());
}

DirectionalLoss identity_loss(const MemoryBank& bank, Modality modality, const Matrix& queries,
                              std::span<const int> coarse_labels) {
  const auto& rows = bank.of(modality).coarse;
  if (rows.empty()) throw Error(ErrorCode::EmptyBank, std::string(to_string(modality)) + " coarse memory is empty");
  DirectionalLoss out;
  out.grad = Matrix(queries.rows(), queries.cols());
  if (queries.empty()) return out;

  std::vector<double> losses(queries.rows());
  parallel_for(queries.rows(), [&](std::size_t q) {
    const int label = coarse_labels[q];
    if (label < 0 || static_cast<std::size_t>(label) >= rows.rows()) {
      throw Error(ErrorCode::UnknownLabel, "query coarse label " + std::to_string(label));
    }
    std::vector<int> neg;
    neg.reserve(rows.rows() - 1);
    for (int i = 0; i < static_cast<int>(rows.rows()); ++i) {
      if (i != label) neg.push_back(i);
    }
    const int pos[] = {label};
    auto term = contrastive_term(queries.row(q), rows, pos, neg, bank.tau);
    losses[q] = term.loss;
    const double scale = 1.0 / static_cast<double>(queries.rows());
    auto g = out.grad.row(q);
    for (std::size_t k = 0; k < g.size(); ++k) g[k] = scale * term.grad[k];
  });
  out.value = pairwise_sum(losses) / static_cast<double>(queries.rows());
  return out;
}

}  // namespace hil
