#include "hil/embedding_store.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include <json.hpp>

#include "hil/errors.hpp"

namespace hil {

std::string_view to_string(Modality m) { return m == Modality::Vis ? "VIS" : "IR"; }

Modality parse_modality(std::string_view text) {
  if (text == "VIS") return Modality::Vis;
  if (text == "IR") return Modality::Ir;
  throw Error(ErrorCode::ParseError, "unknown modality '" + std::string(text) + "'");
}

Vector normalize(std::span<const double> v) {
  const double n = norm(v);
  if (!std::isfinite(n)) throw Error(ErrorCode::NonFinite, "cannot normalize vector with non-finite norm");
  if (!(n > kZeroNorm)) {
    throw Error(ErrorCode::ZeroVector, "cannot normalize vector with norm " + std::to_string(n));
  }
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
  return out;
}

double cosine_sim(std::span<const double> a, std::span<const double> b) {
  return std::clamp(dot(a, b), -1.0, 1.0);
}

Matrix Dataset::raw_matrix(Modality m) const {
  const auto& items = of(m);
  Matrix out(items.size(), d_in);
  for (std::size_t i = 0; i < items.size(); ++i) {
    std::copy(items[i].raw.begin(), items[i].raw.end(), out.row(i).begin());
  }
  return out;
}

Matrix Dataset::feature_matrix(Modality m) const {
  const auto& items = of(m);
  Matrix out(items.size(), d);
  for (std::size_t i = 0; i < items.size(); ++i) {
    std::copy(items[i].feature.begin(), items[i].feature.end(), out.row(i).begin());
  }
  return out;
}

std::vector<int> Dataset::gt_labels(Modality m) const {
  std::vector<int> out;
  out.reserve(size(m));
  for (const auto& inst : of(m)) out.push_back(inst.gt_identity.value_or(-1));
  return out;
}

bool Dataset::has_ground_truth() const {
  if (vis.empty() && ir.empty()) return false;
  const auto has = [](const Instance& i) { return i.gt_identity.has_value(); };
  return std::all_of(vis.begin(), vis.end(), has) && std::all_of(ir.begin(), ir.end(), has);
}

void SynthSpec::validate() const {
  if (num_identities <= 0) throw Error(ErrorCode::InvalidSpec, "num_identities must be positive");
  if (instances_per_identity <= 0) {
    throw Error(ErrorCode::InvalidSpec, "instances_per_identity must be positive");
  }
  if (d_in == 0) throw Error(ErrorCode::InvalidSpec, "d_in must be positive");
  if (!(sigma_id >= 0.0) || !(sigma_noise >= 0.0) || !(sigma_mod >= 0.0)) {
    throw Error(ErrorCode::InvalidSpec, "sigma values must be non-negative");
  }
  if (!(sigma_noise < sigma_id)) {
    throw Error(ErrorCode::InvalidSpec,
                "sigma_noise must be smaller than sigma_id (identities would not be separable)");
  }
}

Dataset generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const auto draw = [&](double scale) {
    Vector v(spec.d_in);
    for (double& x : v) x = scale * gauss(rng);
    return v;
  };

  const auto ids = static_cast<std::size_t>(spec.num_identities);
  std::vector<Vector> prototypes;
  for (std::size_t i = 0; i < ids; ++i) prototypes.push_back(draw(spec.sigma_id));
  std::vector<Vector> offset_vis, offset_ir;
  for (std::size_t i = 0; i < ids; ++i) {
    offset_vis.push_back(draw(spec.sigma_mod));
    offset_ir.push_back(draw(spec.sigma_mod));
  }

  Dataset ds;
  ds.d_in = spec.d_in;
  ds.d = spec.d_in;
  for (Modality m : {Modality::Vis, Modality::Ir}) {
    auto& out = m == Modality::Vis ? ds.vis : ds.ir;
    const auto& offsets = m == Modality::Vis ? offset_vis : offset_ir;
    for (std::size_t i = 0; i < ids; ++i) {
      for (int j = 0; j < spec.instances_per_identity; ++j) {
        Instance inst;
        inst.id = static_cast<int>(out.size());
        inst.modality = m;
        inst.gt_identity = static_cast<int>(i);
        inst.raw = draw(spec.sigma_noise);
        for (std::size_t k = 0; k < spec.d_in; ++k) {
          // Stored at file precision so that save/load round-trips exactly.
          inst.raw[k] = static_cast<float>(prototypes[i][k] + offsets[i][k] + inst.raw[k]);
        }
        inst.feature = normalize(inst.raw);
        out.push_back(std::move(inst));
      }
    }
  }
  return ds;
}

namespace {

void append_float(std::string& out, double value) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, static_cast<float>(value));
  out.append(buf, res.ptr);
}

[[noreturn]] void parse_fail(std::size_t line, const std::string& what) {
  throw Error(ErrorCode::ParseError, "line " + std::to_string(line) + ": " + what);
}

}  // namespace

Dataset assemble_dataset(std::vector<Instance> records) {
  Dataset ds;
  for (auto& r : records) (r.modality == Modality::Vis ? ds.vis : ds.ir).push_back(std::move(r));
  for (auto* part : {&ds.vis, &ds.ir}) {
    std::sort(part->begin(), part->end(), [](const Instance& a, const Instance& b) { return a.id < b.id; });
    for (std::size_t i = 0; i < part->size(); ++i) {
      if ((*part)[i].id != static_cast<int>(i)) {
        throw Error(ErrorCode::ParseError, "ids of modality " + std::string(to_string((*part)[i].modality)) +
                                               " are not contiguous from 0 (expected " + std::to_string(i) +
                                               ", found " + std::to_string((*part)[i].id) + ")");
      }
    }
  }
  const Instance* first = !ds.vis.empty() ? &ds.vis.front() : (!ds.ir.empty() ? &ds.ir.front() : nullptr);
  if (first != nullptr) {
    ds.d_in = first->raw.size();
    ds.d = first->feature.size();
  }
  for (const auto* part : {&ds.vis, &ds.ir}) {
    for (const auto& inst : *part) {
      if (inst.raw.size() != ds.d_in || inst.feature.size() != ds.d) {
        throw Error(ErrorCode::DimensionMismatch, "instance " + std::to_string(inst.id) + " has inconsistent dimensions");
      }
    }
  }
  return ds;
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open dataset file " + path.string());

  std::vector<Instance> records;
  std::optional<std::size_t> d_in;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      parse_fail(line, e.what());
    }
    if (!j.is_object()) parse_fail(line, "record is not a JSON object");
    for (const auto& [key, _] : j.items()) {
      if (key != "id" && key != "modality" && key != "gt" && key != "raw") parse_fail(line, "unknown key '" + key + "'");
    }
    if (!j.contains("id") || !j["id"].is_number_integer() || j["id"].get<long long>() < 0) {
      parse_fail(line, "missing or invalid 'id'");
    }
    if (!j.contains("modality") || !j["modality"].is_string()) parse_fail(line, "missing or invalid 'modality'");
    if (!j.contains("raw") || !j["raw"].is_array()) parse_fail(line, "missing or invalid 'raw'");

    Instance inst;
    inst.id = j["id"].get<int>();
    try {
      inst.modality = parse_modality(j["modality"].get<std::string>());
    } catch (const Error&) {
      parse_fail(line, "modality must be \"VIS\" or \"IR\"");
    }
    if (j.contains("gt") && !j["gt"].is_null()) {
      if (!j["gt"].is_number_integer() || j["gt"].get<long long>() < 0) parse_fail(line, "invalid 'gt'");
      inst.gt_identity = j["gt"].get<int>();
    }
    for (const auto& x : j["raw"]) {
      if (!x.is_number()) parse_fail(line, "non-numeric entry in 'raw'");
      inst.raw.push_back(static_cast<float>(x.get<double>()));
    }
    if (inst.raw.empty()) parse_fail(line, "empty 'raw' vector");
    if (!d_in) d_in = inst.raw.size();
    if (inst.raw.size() != *d_in) {
      parse_fail(line, "raw vector has length " + std::to_string(inst.raw.size()) + ", expected " + std::to_string(*d_in));
    }
    try {
      inst.feature = normalize(inst.raw);
    } catch (const Error& e) {
      parse_fail(line, e.what());
    }
    records.push_back(std::move(inst));
  }
  // Duplicate ids surface as a contiguity failure.
  return assemble_dataset(std::move(records));
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write dataset file " + path.string());
  std::string line;
  for (const auto* part : {&dataset.vis, &dataset.ir}) {
    for (const auto& inst : *part) {
      line.clear();
      line += "{\"id\":" + std::to_string(inst.id);
      line += ",\"modality\":\"" + std::string(to_string(inst.modality)) + "\"";
      line += ",\"gt\":" + (inst.gt_identity ? std::to_string(*inst.gt_identity) : std::string("null"));
      line += ",\"raw\":[";
      for (std::size_t k = 0; k < inst.raw.size(); ++k) {
        if (k) line += ',';
        append_float(line, inst.raw[k]);
      }
      line += "]}\n";
      out << line;
    }
  }
  if (!out) throw Error(ErrorCode::Io, "failed writing dataset file " + path.string());
}

}  // namespace hil
