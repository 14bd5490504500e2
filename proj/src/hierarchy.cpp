#include "hil/hierarchy.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <random>

#include "hil/errors.hpp"
#include "hil/parallel.hpp"

namespace hil {

std::vector<std::vector<int>> CoarseLabeling::members() const {
  std::vector<std::vector<int>> out(static_cast<std::size_t>(num_clusters));
  for (std::size_t id = 0; id < assignment.size(); ++id) {
    if (assignment[id] != kOutlier) out[static_cast<std::size_t>(assignment[id])].push_back(static_cast<int>(id));
  }
  return out;
}

int CoarseLabeling::outlier_count() const {
  return static_cast<int>(std::count(assignment.begin(), assignment.end(), kOutlier));
}

CoarseLabeling dbscan(const Matrix& features, double eps, int min_pts, Modality modality) {
  const std::size_t n = features.rows();
  CoarseLabeling out;
  out.modality = modality;
  out.assignment.assign(n, kOutlier);

  std::vector<std::vector<int>> neighbours(n);
  parallel_for(n, [&](std::size_t i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (1.0 - cosine_sim(features.row(i), features.row(j)) <= eps) neighbours[i].push_back(static_cast<int>(j));
    }
  });
  std::vector<bool> core(n);
  for (std::size_t i = 0; i < n; ++i) core[i] = static_cast<int>(neighbours[i].size()) >= min_pts;

  // Expand core components in ascending seed order.
  int next_cluster = 0;
  std::vector<int> raw(n, kOutlier);
  for (std::size_t seed = 0; seed < n; ++seed) {
    if (!core[seed] || raw[seed] != kOutlier) continue;
    const int c = next_cluster++;
    std::deque<int> frontier{static_cast<int>(seed)};
    raw[seed] = c;
    while (!frontier.empty()) {
      const int p = frontier.front();
      frontier.pop_front();
      for (int q : neighbours[static_cast<std::size_t>(p)]) {
        if (core[static_cast<std::size_t>(q)] && raw[static_cast<std::size_t>(q)] == kOutlier) {
          raw[static_cast<std::size_t>(q)] = c;
          frontier.push_back(q);
        }
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (core[i]) continue;
    for (int q : neighbours[i]) {  // ascending ids
      if (core[static_cast<std::size_t>(q)]) {
        raw[i] = raw[static_cast<std::size_t>(q)];
        break;
      }
    }
  }

  // Relabel by smallest member id.
  std::vector<int> remap(static_cast<std::size_t>(next_cluster), -1);
  int compact = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (raw[i] == kOutlier) continue;
    auto& r = remap[static_cast<std::size_t>(raw[i])];
    if (r < 0) r = compact++;
    out.assignment[i] = r;
  }
  out.num_clusters = compact;
  return out;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::size_t count_distinct_rows(const Matrix& points) {
  std::vector<std::size_t> order(points.rows());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const auto less = [&](std::size_t a, std::size_t b) {
    const auto ra = points.row(a), rb = points.row(b);
    return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
  };
  std::sort(order.begin(), order.end(), less);
  std::size_t distinct = order.empty() ? 0 : 1;
  for (std::size_t i = 1; i < order.size(); ++i) {
    if (less(order[i - 1], order[i])) ++distinct;
  }
  return distinct;
}

int nearest_center(std::span<const double> x, const Matrix& centers, double* best_out) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centers.rows(); ++c) {
    const double d = squared_distance(x, centers.row(c));
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  if (best_out) *best_out = best_d;
  return best;
}

}  // namespace

KMeansResult kmeans(const Matrix& points, int k, std::uint64_t seed, int max_iterations, double tolerance) {
  KMeansResult res;
  const std::size_t n = points.rows();
  if (n == 0 || k < 1) return res;
  const std::size_t dim = points.cols();
  const std::size_t k_eff = std::min<std::size_t>(static_cast<std::size_t>(k), count_distinct_rows(points));

  // k-means++ seeding.
  std::mt19937_64 rng(seed);
  Matrix centers;
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  centers.append_row(points.row(pick(rng)));
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  while (centers.rows() < k_eff) {
    const auto last = centers.row(centers.rows() - 1);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], squared_distance(points.row(i), last));
      total += d2[i];
    }
    const double u = std::uniform_real_distribution<double>(0.0, total)(rng);
    std::size_t chosen = n;
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      acc += d2[i];
      if (d2[i] > 0.0 && acc > u) {
        chosen = i;
        break;
      }
    }
    if (chosen == n) {  // u landed on the rounding edge; take the last eligible point
      for (std::size_t i = n; i-- > 0;) {
        if (d2[i] > 0.0) {
          chosen = i;
          break;
        }
      }
    }
    centers.append_row(points.row(chosen));
  }

  // Lloyd iterations.
  std::vector<int> assign(n, 0);
  for (int it = 0; it < max_iterations; ++it) {
    double sse = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double d = 0.0;
      assign[i] = nearest_center(points.row(i), centers, &d);
      sse += d;
    }
    res.sse_trace.push_back(sse);
    ++res.iterations;

    Matrix next(centers.rows(), dim);
    std::vector<std::size_t> counts(centers.rows(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      axpy(1.0, points.row(i), next.row(static_cast<std::size_t>(assign[i])));
      ++counts[static_cast<std::size_t>(assign[i])];
    }
    double movement = 0.0;
    for (std::size_t c = 0; c < centers.rows(); ++c) {
      if (counts[c] == 0) {
        std::copy(centers.row(c).begin(), centers.row(c).end(), next.row(c).begin());
        continue;
      }
      for (double& x : next.row(c)) x /= static_cast<double>(counts[c]);
      movement = std::max(movement, std::sqrt(squared_distance(next.row(c), centers.row(c))));
    }
    centers = std::move(next);
    if (movement < tolerance) break;
  }

  // Drop empty clusters and compact ids.
  std::vector<int> remap(centers.rows(), -1);
  std::vector<std::size_t> counts(centers.rows(), 0);
  for (int a : assign) ++counts[static_cast<std::size_t>(a)];
  Matrix kept;
  int next_id = 0;
  for (std::size_t c = 0; c < centers.rows(); ++c) {
    if (counts[c] == 0) continue;
    remap[c] = next_id++;
    kept.append_row(centers.row(c));
  }
  for (int& a : assign) a = remap[static_cast<std::size_t>(a)];
  res.assignment = std::move(assign);
  res.centers = std::move(kept);
  return res;
}

FineLabeling kmeans_subcluster(const Matrix& features, const CoarseLabeling& coarse, int k, std::uint64_t seed) {
  FineLabeling out;
  out.requested_k = k;
  out.coarse = coarse.assignment;
  out.sub.assign(coarse.assignment.size(), -1);
  out.k_eff.assign(static_cast<std::size_t>(coarse.num_clusters), 0);
  const auto groups = coarse.members();
  parallel_for(groups.size(), [&](std::size_t c) {
    Matrix pts;
    for (int id : groups[c]) pts.append_row(features.row(static_cast<std::size_t>(id)));
    const auto km = kmeans(pts, k, splitmix64(seed ^ splitmix64(c + 1)));
    out.k_eff[c] = static_cast<int>(km.centers.rows());
    for (std::size_t m = 0; m < groups[c].size(); ++m) out.sub[static_cast<std::size_t>(groups[c][m])] = km.assignment[m];
  });
  return out;
}

Matrix coarse_centroids(const Matrix& features, const CoarseLabeling& coarse) {
  Matrix out(static_cast<std::size_t>(coarse.num_clusters), features.cols());
  std::vector<std::size_t> counts(out.rows(), 0);
  for (std::size_t id = 0; id < coarse.assignment.size(); ++id) {
    const int c = coarse.assignment[id];
    if (c == kOutlier) continue;
    axpy(1.0, features.row(id), out.row(static_cast<std::size_t>(c)));
    ++counts[static_cast<std::size_t>(c)];
  }
  for (std::size_t c = 0; c < out.rows(); ++c) {
    for (double& x : out.row(c)) x /= static_cast<double>(counts[c]);
  }
  return out;
}

std::vector<Matrix> fine_centroids(const Matrix& features, const FineLabeling& fine) {
  std::vector<Matrix> out;
  for (int k : fine.k_eff) out.emplace_back(static_cast<std::size_t>(k), features.cols());
  std::vector<std::vector<std::size_t>> counts;
  for (int k : fine.k_eff) counts.emplace_back(static_cast<std::size_t>(k), 0);
  for (std::size_t id = 0; id < fine.coarse.size(); ++id) {
    const int c = fine.coarse[id];
    if (c == kOutlier) continue;
    const auto cu = static_cast<std::size_t>(c);
    const auto s = static_cast<std::size_t>(fine.sub[id]);
    axpy(1.0, features.row(id), out[cu].row(s));
    ++counts[cu][s];
  }
  for (std::size_t c = 0; c < out.size(); ++c) {
    for (std::size_t s = 0; s < out[c].rows(); ++s) {
      for (double& x : out[c].row(s)) x /= static_cast<double>(counts[c][s]);
    }
  }
  return out;
}

Centroids compute_centroids(const Matrix& features, const CoarseLabeling& coarse, const FineLabeling& fine) {
  return {coarse_centroids(features, coarse), fine_centroids(features, fine)};
}

nlohmann::json labeling_to_json(const CoarseLabeling& coarse, const FineLabeling* fine) {
  nlohmann::json assignment = nlohmann::json::array();
  for (std::size_t id = 0; id < coarse.assignment.size(); ++id) {
    nlohmann::json rec{{"id", id}, {"coarse", coarse.assignment[id]}, {"sub", nullptr}};
    if (fine != nullptr && fine->sub[id] >= 0) rec["sub"] = fine->sub[id];
    assignment.push_back(std::move(rec));
  }
  return {{"modality", std::string(to_string(coarse.modality))}, {"M", coarse.num_clusters}, {"assignment", assignment}};
}

CoarseLabeling coarse_from_json(const nlohmann::json& j) {
  try {
    CoarseLabeling out;
    out.modality = parse_modality(j.at("modality").get<std::string>());
    out.num_clusters = j.at("M").get<int>();
    const auto& a = j.at("assignment");
    out.assignment.assign(a.size(), kOutlier);
    for (const auto& rec : a) {
      const auto id = rec.at("id").get<std::size_t>();
      const int c = rec.at("coarse").get<int>();
      if (id >= a.size() || c < kOutlier || c >= out.num_clusters) {
        throw Error(ErrorCode::ParseError, "labeling record out of range");
      }
      out.assignment[id] = c;
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("malformed labeling: ") + e.what());
  }
}

}  // namespace hil
