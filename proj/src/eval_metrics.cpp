#include "hil/eval_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>

#include "hil/csv.hpp"
#include "hil/embedding_store.hpp"
#include "hil/errors.hpp"
#include "hil/parallel.hpp"

namespace hil {

RetrievalMetrics cmc_map_minp(const Matrix& similarity, std::span<const int> query_labels,
                              std::span<const int> gallery_labels) {
  if (similarity.rows() != query_labels.size() || similarity.cols() != gallery_labels.size()) {
    throw Error(ErrorCode::DimensionMismatch, "similarity shape does not match label counts");
  }
  const std::size_t nq = similarity.rows(), ng = similarity.cols();
  std::vector<double> ap(nq, -1.0), inp(nq, 0.0);
  std::vector<std::size_t> first_hit(nq, 0);
  parallel_for(nq, [&](std::size_t q) {
    std::vector<std::size_t> order(ng);
    std::iota(order.begin(), order.end(), 0);
    const auto row = similarity.row(q);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return row[a] != row[b] ? row[a] > row[b] : a < b;
    });
    double precision_sum = 0.0;
    std::size_t hits = 0, last = 0;
    for (std::size_t pos = 0; pos < ng; ++pos) {
      if (gallery_labels[order[pos]] != query_labels[q]) continue;
      ++hits;
      if (hits == 1) first_hit[q] = pos + 1;
      last = pos + 1;
      precision_sum += static_cast<double>(hits) / static_cast<double>(pos + 1);
    }
    if (hits == 0) return;
    ap[q] = precision_sum / static_cast<double>(hits);
    inp[q] = static_cast<double>(hits) / static_cast<double>(last);
  });

  RetrievalMetrics out;
  std::vector<double> kept_ap, kept_inp;
  std::array<std::vector<double>, 4> cmc_hits;
  for (std::size_t q = 0; q < nq; ++q) {
    if (ap[q] < 0.0) {
      ++out.dropped_queries;
      continue;
    }
    kept_ap.push_back(ap[q]);
    kept_inp.push_back(inp[q]);
    for (std::size_t r = 0; r < kCmcRanks.size(); ++r) {
      cmc_hits[r].push_back(first_hit[q] <= static_cast<std::size_t>(kCmcRanks[r]) ? 1.0 : 0.0);
    }
  }
  if (kept_ap.empty()) throw Error(ErrorCode::NoRelevant, "no query has a relevant gallery item");
  const double n = static_cast<double>(kept_ap.size());
  out.queries = static_cast<int>(kept_ap.size());
  out.map = pairwise_sum(kept_ap) / n;
  out.minp = pairwise_sum(kept_inp) / n;
  for (std::size_t r = 0; r < kCmcRanks.size(); ++r) out.cmc[r] = pairwise_sum(cmc_hits[r]) / n;
  out.per_query_ap = std::move(kept_ap);
  return out;
}

RetrievalMetrics evaluate_retrieval(const Matrix& query_features, std::span<const int> query_labels,
                                    const Matrix& gallery_features, std::span<const int> gallery_labels) {
  Matrix sim(query_features.rows(), gallery_features.rows());
  parallel_for(query_features.rows(), [&](std::size_t q) {
    for (std::size_t g = 0; g < gallery_features.rows(); ++g) {
      sim(q, g) = cosine_sim(query_features.row(q), gallery_features.row(g));
    }
  });
  return cmc_map_minp(sim, query_labels, gallery_labels);
}

namespace {

// Relabels to 0..k-1 in order of first appearance; negative labels become
// fresh singleton ids.
std::vector<int> compact_labels(std::span<const int> labels, int& count) {
  std::map<int, int> ids;
  std::vector<int> out(labels.size());
  count = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) {
      out[i] = count++;
      continue;
    }
    auto [it, inserted] = ids.try_emplace(labels[i], count);
    if (inserted) ++count;
    out[i] = it->second;
  }
  return out;
}

double comb2(double n) { return n * (n - 1.0) / 2.0; }

double entropy(const std::vector<double>& counts, double n) {
  double h = 0.0;
  for (double c : counts) {
    if (c > 0.0) h -= (c / n) * std::log(c / n);
  }
  return h;
}

double expected_mutual_information(const std::vector<double>& a, const std::vector<double>& b, double n) {
  const double lg_n = std::lgamma(n + 1.0);
  double emi = 0.0;
  for (double ai : a) {
    for (double bj : b) {
      const double lo = std::max(1.0, ai + bj - n);
      const double hi = std::min(ai, bj);
      for (double nij = lo; nij <= hi; nij += 1.0) {
        const double term = (nij / n) * std::log(n * nij / (ai * bj));
        const double log_p = std::lgamma(ai + 1.0) + std::lgamma(bj + 1.0) + std::lgamma(n - ai + 1.0) +
                             std::lgamma(n - bj + 1.0) - lg_n - std::lgamma(nij + 1.0) - std::lgamma(ai - nij + 1.0) -
                             std::lgamma(bj - nij + 1.0) - std::lgamma(n - ai - bj + nij + 1.0);
        emi += term * std::exp(log_p);
      }
    }
  }
  return emi;
}

}  // namespace

ClusteringQuality clustering_quality(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) {
    throw Error(ErrorCode::MismatchedInstances, "labelings cover " + std::to_string(predicted.size()) + " and " +
                                                    std::to_string(truth.size()) + " instances");
  }
  ClusteringQuality q;
  const std::size_t n_items = predicted.size();
  if (n_items == 0) {
    q.ari = q.ami = q.v_measure = q.homogeneity = q.completeness = 1.0;
    return q;
  }
  int kp = 0, kt = 0;
  const auto pred = compact_labels(predicted, kp);
  const auto tru = compact_labels(truth, kt);
  const double n = static_cast<double>(n_items);

  std::vector<double> cont(static_cast<std::size_t>(kt) * static_cast<std::size_t>(kp), 0.0);
  std::vector<double> a(static_cast<std::size_t>(kt), 0.0), b(static_cast<std::size_t>(kp), 0.0);
  for (std::size_t i = 0; i < n_items; ++i) {
    cont[static_cast<std::size_t>(tru[i]) * static_cast<std::size_t>(kp) + static_cast<std::size_t>(pred[i])] += 1.0;
    a[static_cast<std::size_t>(tru[i])] += 1.0;
    b[static_cast<std::size_t>(pred[i])] += 1.0;
  }

  // ARI
  double index = 0.0, sum_a = 0.0, sum_b = 0.0;
  for (double c : cont) index += comb2(c);
  for (double x : a) sum_a += comb2(x);
  for (double x : b) sum_b += comb2(x);
  const double expected = sum_a * sum_b / comb2(n);
  const double max_index = 0.5 * (sum_a + sum_b);
  q.ari = max_index == expected ? 1.0 : (index - expected) / (max_index - expected);

  // Mutual information and entropies (natural log).
  double mi = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) {
      const double c = cont[i * b.size() + j];
      if (c > 0.0) mi += (c / n) * std::log(n * c / (a[i] * b[j]));
    }
  }
  mi = std::max(mi, 0.0);
  const double h_true = entropy(a, n), h_pred = entropy(b, n);

  if ((kt == 1 && kp == 1) || (kt == 0 && kp == 0)) {
    q.ami = 1.0;
  } else {
    const double emi = expected_mutual_information(a, b, n);
    double denom = 0.5 * (h_true + h_pred) - emi;
    const double tiny = std::numeric_limits<double>::epsilon();
    denom = denom < 0.0 ? std::min(denom, -tiny) : std::max(denom, tiny);
    q.ami = (mi - emi) / denom;
  }

  q.homogeneity = h_true == 0.0 ? 1.0 : mi / h_true;
  q.completeness = h_pred == 0.0 ? 1.0 : mi / h_pred;
  q.v_measure = q.homogeneity + q.completeness == 0.0
                    ? 0.0
                    : 2.0 * q.homogeneity * q.completeness / (q.homogeneity + q.completeness);
  return q;
}

PairMargin pair_margin(const Matrix& features_a, std::span<const int> labels_a, const Matrix& features_b,
                       std::span<const int> labels_b, std::uint64_t seed, std::uint64_t samples,
                       std::uint64_t exhaustive_limit) {
  if (features_a.rows() != labels_a.size() || features_b.rows() != labels_b.size()) {
    throw Error(ErrorCode::DimensionMismatch, "label counts do not match feature rows");
  }
  const auto distance = [&](std::size_t i, std::size_t j) {
    return std::sqrt(squared_distance(features_a.row(i), features_b.row(j)));
  };
  PairMargin out;
  const std::uint64_t total = static_cast<std::uint64_t>(features_a.rows()) * features_b.rows();

  if (total <= exhaustive_limit) {
    double pos = 0.0, neg = 0.0;
    for (std::size_t i = 0; i < features_a.rows(); ++i) {
      if (labels_a[i] < 0) continue;
      for (std::size_t j = 0; j < features_b.rows(); ++j) {
        if (labels_b[j] < 0) continue;
        if (labels_a[i] == labels_b[j]) {
          pos += distance(i, j);
          ++out.positive_pairs;
        } else {
          neg += distance(i, j);
          ++out.negative_pairs;
        }
      }
    }
    if (out.positive_pairs == 0 || out.negative_pairs == 0) {
      throw Error(ErrorCode::NoPairs, "need both positive and negative cross-modal pairs");
    }
    out.mean_positive = pos / static_cast<double>(out.positive_pairs);
    out.mean_negative = neg / static_cast<double>(out.negative_pairs);
    out.delta = out.mean_negative - out.mean_positive;
    return out;
  }

  out.exhaustive = false;
  std::map<int, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> groups;
  std::vector<std::size_t> valid_a, valid_b;
  for (std::size_t i = 0; i < labels_a.size(); ++i) {
    if (labels_a[i] < 0) continue;
    groups[labels_a[i]].first.push_back(i);
    valid_a.push_back(i);
  }
  for (std::size_t j = 0; j < labels_b.size(); ++j) {
    if (labels_b[j] < 0) continue;
    groups[labels_b[j]].second.push_back(j);
    valid_b.push_back(j);
  }
  std::vector<const std::pair<std::vector<std::size_t>, std::vector<std::size_t>>*> shared;
  std::vector<double> weights;
  std::uint64_t positive_total = 0;
  for (const auto& [label, g] : groups) {
    if (g.first.empty() || g.second.empty()) continue;
    shared.push_back(&g);
    weights.push_back(static_cast<double>(g.first.size() * g.second.size()));
    positive_total += g.first.size() * g.second.size();
  }
  const std::uint64_t valid_total = static_cast<std::uint64_t>(valid_a.size()) * valid_b.size();
  if (positive_total == 0 || positive_total == valid_total) {
    throw Error(ErrorCode::NoPairs, "need both positive and negative cross-modal pairs");
  }

  std::mt19937_64 rng(seed);
  std::discrete_distribution<std::size_t> pick_group(weights.begin(), weights.end());
  std::uniform_int_distribution<std::size_t> pick_a(0, valid_a.size() - 1), pick_b(0, valid_b.size() - 1);
  std::vector<double> pos(samples), neg(samples);
  for (std::uint64_t s = 0; s < samples; ++s) {
    const auto& g = *shared[pick_group(rng)];
    const std::size_t i = g.first[std::uniform_int_distribution<std::size_t>(0, g.first.size() - 1)(rng)];
    const std::size_t j = g.second[std::uniform_int_distribution<std::size_t>(0, g.second.size() - 1)(rng)];
    pos[s] = distance(i, j);
  }
  for (std::uint64_t s = 0; s < samples; ++s) {
    std::size_t i = 0, j = 0;
    do {
      i = valid_a[pick_a(rng)];
      j = valid_b[pick_b(rng)];
    } while (labels_a[i] == labels_b[j]);
    neg[s] = distance(i, j);
  }
  out.positive_pairs = out.negative_pairs = samples;
  out.mean_positive = pairwise_sum(pos) / static_cast<double>(samples);
  out.mean_negative = pairwise_sum(neg) / static_cast<double>(samples);
  out.delta = out.mean_negative - out.mean_positive;
  return out;
}

std::string metric_csv_header() {
  return "seed,direction,rank1,rank5,rank10,rank20,mAP,mINP,queries,dropped_queries,ari,ami,v_measure,delta_margin";
}

std::string metric_csv_row(const MetricTable& t, std::uint64_t seed) {
  std::string row = std::to_string(seed) + "," + csv_field(t.direction);
  for (double c : t.retrieval.cmc) row += "," + csv_number(c);
  row += "," + csv_number(t.retrieval.map) + "," + csv_number(t.retrieval.minp) + "," +
         std::to_string(t.retrieval.queries) + "," + std::to_string(t.retrieval.dropped_queries) + "," +
         csv_number(t.quality.ari) + "," + csv_number(t.quality.ami) + "," + csv_number(t.quality.v_measure) + "," +
         csv_number(t.delta_margin);
  return row;
}

nlohmann::json metric_json(const MetricTable& t) {
  nlohmann::json cmc = nlohmann::json::object();
  for (std::size_t r = 0; r < kCmcRanks.size(); ++r) cmc["rank" + std::to_string(kCmcRanks[r])] = t.retrieval.cmc[r];
  return {{"direction", t.direction},
          {"cmc", cmc},
          {"mAP", t.retrieval.map},
          {"mINP", t.retrieval.minp},
          {"queries", t.retrieval.queries},
          {"dropped_queries", t.retrieval.dropped_queries},
          {"ari", t.quality.ari},
          {"ami", t.quality.ami},
          {"v_measure", t.quality.v_measure},
          {"delta_margin", t.delta_margin}};
}

}  // namespace hil
