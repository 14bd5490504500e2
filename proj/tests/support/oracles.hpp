#pragma once

// Test-only reference implementations. Each one takes a different route from
// the library code it checks (brute force, enumeration, finite differences).

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "hil/matrix.hpp"

namespace hil::oracle {

Matrix random_unit_rows(std::size_t rows, std::size_t cols, std::mt19937_64& rng);
Matrix random_rows(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale = 1.0);

// Central differences of f at x, step h, one coordinate at a time.
Vector finite_difference(const std::function<double(std::span<const double>)>& f, std::span<const double> x,
                         double h = 1e-5);

// ||a - b|| / max(||a||, ||b||, floor)
double relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-8);

// DBSCAN from the definition: core test by counting, clusters as the
// transitive closure of core-core reachability, borders to their lowest-id
// core neighbour, ids by smallest member.
std::vector<int> dbscan_by_closure(const Matrix& features, double eps, int min_pts);

// True when the two labelings induce the same partition (labels -1 must
// coincide exactly).
bool same_partition(std::span<const int> a, std::span<const int> b);

// Minimum within-cluster SSE over all splits of the rows into two non-empty
// groups.
double best_two_partition_sse(const Matrix& points);
double partition_sse(const Matrix& points, std::span<const int> labels);

// `per` unit vectors scattered around each of `centers` random directions.
Matrix blobs(std::mt19937_64& rng, int centers, int per, std::size_t dim, double spread);

// Coarse-cluster-like unit points in 8-d: two sub-modes of random spread and
// size around nearby directions, 3 to 12 points in total.
Matrix two_mode_cluster(std::mt19937_64& rng);

// Adjusted Rand index from explicit pair counting over all item pairs.
double ari_by_pairs(std::span<const int> a, std::span<const int> b);

// Average precision as the area under the stepwise precision-recall curve.
double ap_by_pr_curve(std::span<const double> similarities, std::span<const int> relevant);

}  // namespace hil::oracle
