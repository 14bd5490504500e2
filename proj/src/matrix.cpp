#include "hil/matrix.hpp"

#include <cmath>
#include <string>

#include "hil/errors.hpp"

namespace hil {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::UnknownLabel: return "UnknownLabel";
    case ErrorCode::EmptyBank: return "EmptyBank";
    case ErrorCode::EmptyPool: return "EmptyPool";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::NoClusters: return "NoClusters";
    case ErrorCode::StaleLabels: return "StaleLabels";
    case ErrorCode::NoRelevant: return "NoRelevant";
    case ErrorCode::MismatchedInstances: return "MismatchedInstances";
    case ErrorCode::NoPairs: return "NoPairs";
    case ErrorCode::Io: return "IoError";
    case ErrorCode::MissingCheckpoint: return "MissingCheckpoint";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

void Matrix::append_row(std::span<const double> values) {
  if (rows_ == 0 && cols_ == 0) {
    cols_ = values.size();
  } else if (values.size() != cols_) {
    throw Error(ErrorCode::DimensionMismatch, "row of length " + std::to_string(values.size()) +
                                                  " appended to matrix with " + std::to_string(cols_) +
                                                  " columns");
  }
  data_.insert(data_.end(), values.begin(), values.end());
  ++rows_;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::DimensionMismatch,
                "dot of lengths " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> a) {
  double s = 0.0;
  for (double x : a) s += x * x;
  return std::sqrt(s);
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::DimensionMismatch, "distance between vectors of different length");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

void axpy(double scale, std::span<const double> x, std::span<double> out) {
  for (std::size_t i = 0; i < x.size(); ++i) out[i] += scale * x[i];
}

double pairwise_sum(std::span<const double> values) {
  if (values.size() <= 8) {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
  const std::size_t half = values.size() / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

bool all_finite(std::span<const double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace hil
