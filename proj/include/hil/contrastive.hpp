#pragma once

#include <span>

#include "hil/matrix.hpp"

namespace hil {

struct ContrastiveTerm {
  double loss = 0.0;
  Vector grad;  // d loss / d query
};

// loss = -log(S_p / (S_p + S_n)) with S_x = sum over rows r of x of
// exp(query . candidates[r] / tau). Candidates are constants. Evaluated with
// max-subtraction; the loss is exactly 0 when negatives is empty.
ContrastiveTerm contrastive_term(std::span<const double> query, const Matrix& candidates,
                                 std::span<const int> positives, std::span<const int> negatives, double tau);

}  // namespace hil
