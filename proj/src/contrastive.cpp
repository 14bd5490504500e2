#include "hil/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hil/errors.hpp"

namespace hil {

ContrastiveTerm contrastive_term(std::span<const double> query, const Matrix& candidates,
                                 std::span<const int> positives, std::span<const int> negatives, double tau) {
  if (positives.empty()) throw Error(ErrorCode::EmptyPool, "contrastive term without positives");
  ContrastiveTerm out;
  out.grad.assign(query.size(), 0.0);
  if (negatives.empty()) return out;

  const auto logit = [&](int r) { return dot(query, candidates.row(static_cast<std::size_t>(r))) / tau; };
  std::vector<double> zp, zn;
  zp.reserve(positives.size());
  zn.reserve(negatives.size());
  double m = -std::numeric_limits<double>::infinity();
  for (int r : positives) m = std::max(m, zp.emplace_back(logit(r)));
  for (int r : negatives) m = std::max(m, zn.emplace_back(logit(r)));

  double sp = 0.0, sn = 0.0;
  for (double& z : zp) sp += (z = std::exp(z - m));
  for (double& z : zn) sn += (z = std::exp(z - m));
  out.loss = std::log1p(sn / sp);

  // dL/dz = softmax_all - softmax_pos on positives, softmax_all on negatives.
  const double total = sp + sn;
  for (std::size_t i = 0; i < positives.size(); ++i) {
    const double w = zp[i] / total - zp[i] / sp;
    axpy(w / tau, candidates.row(static_cast<std::size_t>(positives[i])), out.grad);
  }
  for (std::size_t i = 0; i < negatives.size(); ++i) {
    axpy(zn[i] / total / tau, candidates.row(static_cast<std::size_t>(negatives[i])), out.grad);
  }
  return out;
}

}  // namespace hil
