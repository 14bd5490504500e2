#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "hil/matrix.hpp"

namespace hil {

enum class Modality { Vis, Ir };

std::string_view to_string(Modality m);
Modality parse_modality(std::string_view text);
inline Modality other(Modality m) { return m == Modality::Vis ? Modality::Ir : Modality::Vis; }

// Norms at or below this are treated as zero by normalize().
inline constexpr double kZeroNorm = 1e-12;

/// Returns v scaled to unit L2 norm. Throws ZeroVector for |v| <= 1e-12 and
/// NonFinite when the norm is not finite.
Vector normalize(std::span<const double> v);

/// Dot product of two unit vectors, clamped to [-1, 1].
double cosine_sim(std::span<const double> a, std::span<const double> b);

struct Instance {
  int id = 0;
  Modality modality = Modality::Vis;
  Vector raw;
  Vector feature;
  // Ground truth identity. Only evaluation code reads this.
  std::optional<int> gt_identity;

  bool operator==(const Instance&) const = default;
};

struct Dataset {
  std::vector<Instance> vis;
  std::vector<Instance> ir;
  std::size_t d_in = 0;
  std::size_t d = 0;

  const std::vector<Instance>& of(Modality m) const { return m == Modality::Vis ? vis : ir; }
  std::size_t size(Modality m) const { return of(m).size(); }

  Matrix raw_matrix(Modality m) const;
  Matrix feature_matrix(Modality m) const;
  // Ground-truth labels, -1 where absent. Evaluation only.
  std::vector<int> gt_labels(Modality m) const;
  bool has_ground_truth() const;

  bool operator==(const Dataset&) const = default;
};

// Parameters for the two-modality Gaussian generator. Each identity gets a
// prototype (scale sigma_id); each identity/modality pair gets its own offset
// (scale sigma_mod); each instance adds isotropic noise (scale sigma_noise).
struct SynthSpec {
  int num_identities = 20;
  int instances_per_identity = 8;
  std::size_t d_in = 32;
  double sigma_id = 1.0;
  double sigma_noise = 0.1;
  double sigma_mod = 1.0;
  std::uint64_t seed = 0;

  /// Throws InvalidSpec unless counts/dimension are positive, scales are
  /// non-negative and sigma_noise < sigma_id.
  void validate() const;
};

Dataset generate_synthetic(const SynthSpec& spec);

// JSON Lines, one record per instance:
//   {"id": int, "modality": "VIS"|"IR", "gt": int|null, "raw": [float, ...]}
// Raw values are stored as 32-bit floats; features are recomputed on load.
Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);

// Builds a dataset from in-memory records (any order). Used by the loader;
// validates contiguous ids and consistent dimensions.
Dataset assemble_dataset(std::vector<Instance> records);

}  // namespace hil
