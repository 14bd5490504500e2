#include "hil/errors.hpp"
#include "hil/trainer.hpp"

namespace hil {

std::vector<MetricTable> evaluate_model(const Dataset& dataset, const Encoder& encoder, double eps, int min_pts,
                                        std::uint64_t seed) {
  if (!dataset.has_ground_truth()) throw Error(ErrorCode::NoRelevant, "evaluation needs ground-truth identities");
  if (encoder.input_dim() != dataset.d_in) {
    throw Error(ErrorCode::DimensionMismatch, "encoder does not match the dataset dimension");
  }
  const Matrix fv = encoder.encode(dataset.raw_matrix(Modality::Vis));
  const Matrix fr = encoder.encode(dataset.raw_matrix(Modality::Ir));
  const auto lv = dataset.gt_labels(Modality::Vis);
  const auto lr = dataset.gt_labels(Modality::Ir);

  Matrix mixed = fv;
  for (std::size_t i = 0; i < fr.rows(); ++i) mixed.append_row(fr.row(i));
  std::vector<int> truth = lv;
  truth.insert(truth.end(), lr.begin(), lr.end());
  const auto quality = clustering_quality(dbscan(mixed, eps, min_pts).assignment, truth);
  const double delta = pair_margin(fv, lv, fr, lr, seed).delta;

  std::vector<MetricTable> tables(2);
  tables[0].direction = "VIS->IR";
  tables[0].retrieval = evaluate_retrieval(fv, lv, fr, lr);
  tables[1].direction = "IR->VIS";
  tables[1].retrieval = evaluate_retrieval(fr, lr, fv, lv);
  for (auto& t : tables) {
    t.quality = quality;
    t.delta_margin = delta;
  }
  return tables;
}

}  // namespace hil
