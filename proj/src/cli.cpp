#include "hil/cli.hpp"

#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "hil/brst.hpp"
#include "hil/csv.hpp"
#include "hil/errors.hpp"
#include "hil/eval_metrics.hpp"
#include "hil/parallel.hpp"
#include "hil/trainer.hpp"

namespace hil {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Everything any command can be configured with. One flat key space is shared
// by config files of all commands; keys a command does not use are ignored.
struct RunConfig {
  SynthSpec synth;
  TrainConfig train;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  std::string preset = "default";
  std::string data;
  std::string output;
  std::string checkpoint;
  std::string labels;
  std::string direction = "VIS->IR";
  std::string neighbor_pool = "dataset";
  bool resume = false;
};

void log(const std::string& message) { std::cerr << "hil: " << message << '\n'; }

void apply_preset(RunConfig& c, const std::string& name) {
  if (name.empty() || name == "default") return;
  if (name == "regdb") {
    c.train.fine_k = 2;
    c.train.gamma = 0.8;
    return;
  }
  throw Error(ErrorCode::InvalidConfig, "unknown preset '" + name + "' (expected default or regdb)");
}

// Files are written under a temporary name and renamed into place only once
// the whole command has succeeded. Whatever is left over is removed.
class OutputSet {
 public:
  OutputSet() = default;
  OutputSet(const OutputSet&) = delete;
  OutputSet& operator=(const OutputSet&) = delete;

  ~OutputSet() {
    if (committed_) return;
    std::error_code ec;
    for (const auto& [tmp, dst] : staged_) fs::remove_all(tmp, ec);
    for (auto it = created_.rbegin(); it != created_.rend(); ++it) fs::remove(*it, ec);  // only if empty
  }

  void make_dir(const fs::path& dir) {
    std::vector<fs::path> missing;
    for (fs::path p = fs::absolute(dir); !p.empty() && !fs::exists(p); p = p.parent_path()) {
      missing.push_back(p);
      if (p == p.parent_path()) break;
    }
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(ErrorCode::Io, "cannot create directory " + dir.string() + ": " + ec.message());
    created_.insert(created_.end(), missing.rbegin(), missing.rend());
  }

  fs::path stage(const fs::path& destination) {
    fs::path tmp = destination;
    tmp += ".partial";
    std::error_code ec;
    fs::remove_all(tmp, ec);
    staged_.emplace_back(tmp, destination);
    return tmp;
  }

  void commit() {
    for (const auto& [tmp, dst] : staged_) {
      std::error_code ec;
      if (fs::is_directory(dst)) fs::remove_all(dst, ec);
      fs::rename(tmp, dst, ec);
      if (ec) throw Error(ErrorCode::Io, "cannot move " + tmp.string() + " into place: " + ec.message());
    }
    committed_ = true;
  }

 private:
  std::vector<std::pair<fs::path, fs::path>> staged_;
  std::vector<fs::path> created_;
  bool committed_ = false;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::Io, "failed writing " + path.string());
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
}

std::string optional_number(bool present, double value) { return present ? csv_number(value) : std::string(); }

std::set<std::string>& known_keys() {
  static std::set<std::string> keys{"preset"};
  return keys;
}

struct Binding {
  std::string key;
  CLI::Option* option;
  std::function<void(RunConfig&, const json&)> from_json;
  std::function<void(RunConfig&, RunConfig&)> copy;
};

// A subcommand whose options write into `flags`; resolve() layers
// defaults < preset < config file < explicit flags.
class Command {
 public:
  Command(CLI::App& parent, const std::string& name, const std::string& help)
      : app(parent.add_subcommand(name, help)) {
    app->add_option("--config", config_path, "JSON config file (flat object of the keys below)");
    bind("--preset", "preset", [](RunConfig& c) -> std::string& { return c.preset; },
         "named defaults: default | regdb (K=2, gamma=0.8)");
    bind("--seed", "seed", [](RunConfig& c) -> std::uint64_t& { return c.seed; }, "random seed");
    bind("--threads", "threads", [](RunConfig& c) -> unsigned& { return c.threads; }, "worker threads")
        ->check(CLI::PositiveNumber);
  }

  template <typename Access>
  CLI::Option* bind(const std::string& flags, const std::string& key, Access access, const std::string& help) {
    using T = std::remove_reference_t<decltype(access(std::declval<RunConfig&>()))>;
    auto* opt = app->add_option(flags, access(flags_), help + " [key: " + key + "]")->capture_default_str();
    known_keys().insert(key);
    bindings_.push_back({key, opt, [access](RunConfig& c, const json& j) { access(c) = j.get<T>(); },
                         [access](RunConfig& dst, RunConfig& src) { access(dst) = access(src); }});
    return opt;
  }

  void bind_train_options(bool full) {
    bind("--eps", "eps", [](RunConfig& c) -> double& { return c.train.eps; }, "DBSCAN radius (cosine distance)");
    bind("--min-pts", "min_pts", [](RunConfig& c) -> int& { return c.train.min_pts; }, "DBSCAN MinPts");
    bind("--fine-k", "K", [](RunConfig& c) -> int& { return c.train.fine_k; }, "sub-clusters per coarse cluster");
    bind("--gamma", "gamma", [](RunConfig& c) -> double& { return c.train.gamma; }, "reverse-selection threshold");
    if (!full) return;
    bind("--epochs", "epochs", [](RunConfig& c) -> int& { return c.train.epochs; }, "training epochs");
    bind("--lr", "lr", [](RunConfig& c) -> double& { return c.train.lr; }, "SGD learning rate");
    bind("--lr-step", "lr_step", [](RunConfig& c) -> int& { return c.train.lr_step; }, "epochs between decays");
    bind("--lr-decay", "lr_decay", [](RunConfig& c) -> double& { return c.train.lr_decay; }, "learning-rate decay");
    bind("--batch-ids", "P", [](RunConfig& c) -> int& { return c.train.pk_identities; }, "pseudo-identities per batch");
    bind("--batch-instances", "K_inst", [](RunConfig& c) -> int& { return c.train.pk_instances; },
         "instances per pseudo-identity");
    bind("--tau", "tau", [](RunConfig& c) -> double& { return c.train.tau; }, "temperature");
    bind("--alpha", "alpha", [](RunConfig& c) -> double& { return c.train.alpha; }, "memory momentum (old row weight)");
    bind("--beta", "beta", [](RunConfig& c) -> double& { return c.train.beta; }, "reliable-neighbour ratio");
    bind("--lambda1", "lambda1", [](RunConfig& c) -> double& { return c.train.lambda1; }, "neighbour loss weight");
    bind("--lambda2", "lambda2", [](RunConfig& c) -> double& { return c.train.lambda2; }, "multi-centre loss weight");
    bind("--feature-dim", "feature_dim", [](RunConfig& c) -> std::size_t& { return c.train.feature_dim; },
         "encoder output dimension (0: input dimension)");
    bind("--neighbor-pool", "neighbor_pool", [](RunConfig& c) -> std::string& { return c.neighbor_pool; },
         "neighbour candidates: dataset | batch");
    bind("--brst", "brst", [](RunConfig& c) -> bool& { return c.train.use_brst; }, "use cross-modal association");
  }

  RunConfig resolve() {
    RunConfig cfg;
    json file = json::object();
    if (!config_path.empty()) {
      file = read_json_file(config_path);
      if (!file.is_object()) throw Error(ErrorCode::InvalidConfig, config_path + " must hold a JSON object");
    }
    for (const auto& [key, value] : file.items()) {
      if (!known_keys().contains(key)) throw Error(ErrorCode::InvalidConfig, "unknown config key '" + key + "'");
    }

    const Binding& preset = bindings_.front();
    if (preset.option->count() > 0) {
      apply_preset(cfg, flags_.preset);
    } else if (file.contains("preset")) {
      if (!file["preset"].is_string()) throw Error(ErrorCode::InvalidConfig, "config key 'preset' must be a string");
      apply_preset(cfg, file["preset"].get<std::string>());
    }
    for (const auto& b : bindings_) {
      if (b.key == "preset" || !file.contains(b.key)) continue;
      try {
        b.from_json(cfg, file[b.key]);
      } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidConfig, "bad value for config key '" + b.key + "': " + e.what());
      }
    }
    for (const auto& b : bindings_) {
      if (b.option->count() > 0) b.copy(cfg, flags_);
    }

    cfg.synth.seed = cfg.seed;
    cfg.train.seed = cfg.seed;
    if (cfg.neighbor_pool == "dataset") cfg.train.neighbor_pool = NeighborPool::Dataset;
    else if (cfg.neighbor_pool == "batch") cfg.train.neighbor_pool = NeighborPool::Batch;
    else throw Error(ErrorCode::InvalidConfig, "neighbor_pool must be dataset or batch");
    if (cfg.threads == 0) throw Error(ErrorCode::InvalidConfig, "threads must be positive");
    cfg.train.validate();
    return cfg;
  }

  CLI::App* app;
  std::string config_path;

 private:
  RunConfig flags_;
  std::vector<Binding> bindings_;
};

Matrix features_of(const Dataset& ds, Modality m, const Encoder* encoder) {
  return encoder != nullptr ? encoder->encode(ds.raw_matrix(m)) : ds.feature_matrix(m);
}

Matrix normalized_rows(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto u = normalize(m.row(i));
    std::copy(u.begin(), u.end(), out.row(i).begin());
  }
  return out;
}

std::string quality_fields(const CoarseLabeling& lab, const std::vector<int>& truth, bool have_truth) {
  if (!have_truth) return ",,";
  const auto q = clustering_quality(lab.assignment, truth);
  return csv_number(q.ari) + "," + csv_number(q.ami) + "," + csv_number(q.v_measure);
}

// Most frequent ground-truth identity per cluster (lowest identity on ties).
std::vector<int> majority_identity(const CoarseLabeling& lab, const std::vector<int>& truth) {
  std::vector<std::map<int, int>> counts(static_cast<std::size_t>(lab.num_clusters));
  for (std::size_t i = 0; i < lab.assignment.size(); ++i) {
    if (lab.assignment[i] >= 0 && truth[i] >= 0) ++counts[static_cast<std::size_t>(lab.assignment[i])][truth[i]];
  }
  std::vector<int> out(counts.size(), -1);
  for (std::size_t c = 0; c < counts.size(); ++c) {
    int best = 0;
    for (const auto& [id, n] : counts[c]) {
      if (n > best) {
        best = n;
        out[c] = id;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------- commands

void cmd_synth(const RunConfig& cfg) {
  if (cfg.output.empty()) throw Error(ErrorCode::InvalidConfig, "synth needs an output file (-o)");
  const Dataset ds = generate_synthetic(cfg.synth);
  OutputSet out;
  const fs::path dst(cfg.output);
  if (dst.has_parent_path()) out.make_dir(dst.parent_path());
  save_dataset(ds, out.stage(dst));
  out.commit();
  log("wrote " + std::to_string(ds.vis.size() + ds.ir.size()) + " records (" + std::to_string(ds.vis.size()) +
      " VIS, " + std::to_string(ds.ir.size()) + " IR) to " + cfg.output);
}

struct Inputs {
  Dataset dataset;
  std::optional<Encoder> encoder;
};

Inputs load_inputs(const RunConfig& cfg) {
  if (cfg.data.empty()) throw Error(ErrorCode::InvalidConfig, "no dataset given (--data)");
  Inputs in{load_dataset(cfg.data), std::nullopt};
  if (!cfg.checkpoint.empty()) {
    in.encoder = load_checkpoint(cfg.checkpoint).state.encoder;
    if (in.encoder->input_dim() != in.dataset.d_in) {
      throw Error(ErrorCode::DimensionMismatch, "checkpoint encoder does not match the dataset dimension");
    }
  }
  return in;
}

void cmd_cluster(const RunConfig& cfg) {
  if (cfg.output.empty()) throw Error(ErrorCode::InvalidConfig, "cluster needs an output directory (-o)");
  const auto in = load_inputs(cfg);
  const bool have_truth = in.dataset.has_ground_truth();
  std::mt19937_64 rng(cfg.seed);

  OutputSet out;
  const fs::path dir(cfg.output);
  out.make_dir(dir);
  std::string quality = "seed,modality,M,outliers,fine_clusters,ari,ami,v_measure\n";
  for (Modality m : {Modality::Vis, Modality::Ir}) {
    const Matrix feats = features_of(in.dataset, m, in.encoder ? &*in.encoder : nullptr);
    const auto coarse = dbscan(feats, cfg.train.eps, cfg.train.min_pts, m);
    const auto fine = kmeans_subcluster(feats, coarse, cfg.train.fine_k, rng());
    if (coarse.num_clusters == 0) {
      log("warning: no " + std::string(to_string(m)) + " clusters at eps=" + csv_number(cfg.train.eps) +
          ", min_pts=" + std::to_string(cfg.train.min_pts) + "; every instance is an outlier");
    }
    auto j = labeling_to_json(coarse, &fine);
    j["seed"] = cfg.seed;
    const std::string name = m == Modality::Vis ? "labels_vis.json" : "labels_ir.json";
    write_text(out.stage(dir / name), j.dump(2) + "\n");
    int fine_total = 0;
    for (int k : fine.k_eff) fine_total += k;
    quality += std::to_string(cfg.seed) + "," + std::string(to_string(m)) + "," + std::to_string(coarse.num_clusters) +
               "," + std::to_string(coarse.outlier_count()) + "," + std::to_string(fine_total) + "," +
               quality_fields(coarse, in.dataset.gt_labels(m), have_truth) + "\n";
    log(std::string(to_string(m)) + ": " + std::to_string(coarse.num_clusters) + " clusters, " +
        std::to_string(coarse.outlier_count()) + " outliers");
  }
  write_text(out.stage(dir / "quality.csv"), quality);
  out.commit();
}

CoarseLabeling read_labels(const fs::path& path, Modality m, std::size_t count) {
  auto lab = coarse_from_json(read_json_file(path));
  if (lab.modality != m || lab.assignment.size() != count) {
    throw Error(ErrorCode::MismatchedInstances, path.string() + " does not describe the " +
                                                    std::string(to_string(m)) + " instances of the dataset");
  }
  return lab;
}

void cmd_associate(const RunConfig& cfg) {
  if (cfg.output.empty()) throw Error(ErrorCode::InvalidConfig, "associate needs an output directory (-o)");
  const auto in = load_inputs(cfg);
  const Dataset& ds = in.dataset;
  const BrstDirection direction = parse_direction(cfg.direction);
  const Encoder* enc = in.encoder ? &*in.encoder : nullptr;
  const Matrix fv = features_of(ds, Modality::Vis, enc);
  const Matrix fr = features_of(ds, Modality::Ir, enc);

  CoarseLabeling lv, lr;
  if (!cfg.labels.empty()) {
    lv = read_labels(fs::path(cfg.labels) / "labels_vis.json", Modality::Vis, ds.vis.size());
    lr = read_labels(fs::path(cfg.labels) / "labels_ir.json", Modality::Ir, ds.ir.size());
  } else {
    lv = dbscan(fv, cfg.train.eps, cfg.train.min_pts, Modality::Vis);
    lr = dbscan(fr, cfg.train.eps, cfg.train.min_pts, Modality::Ir);
  }
  const Modality src = source_of(direction);
  const CoarseLabeling& source = src == Modality::Vis ? lv : lr;
  const CoarseLabeling& target = src == Modality::Vis ? lr : lv;
  const Matrix centers = normalized_rows(coarse_centroids(src == Modality::Vis ? fr : fv, target));
  const auto labels = associate(src == Modality::Vis ? fv : fr, source, centers, cfg.train.gamma, direction);

  const std::string seed = std::to_string(cfg.seed);
  const std::string dir_name = csv_field(to_string(direction));
  std::string rows = "seed," + brst_csv_header() + "\n";
  std::istringstream body(brst_csv_rows(labels));
  for (std::string line; std::getline(body, line);) rows += seed + "," + line + "\n";

  std::string clusters = "seed,direction,source_cluster,target_cluster\n";
  for (std::size_t c = 0; c < labels.per_cluster.size(); ++c) {
    clusters += seed + "," + dir_name + "," + std::to_string(c) + "," + std::to_string(labels.per_cluster[c]) + "\n";
  }

  // Against ground truth: a matched instance is correct when its target
  // cluster's majority identity is its own identity.
  std::string summary = "seed,direction,gamma,rows,matched,match_rate,precision,recall,cluster_precision\n";
  summary += seed + "," + dir_name + "," + csv_number(cfg.train.gamma) + "," +
             std::to_string(labels.instance_ids.size()) + "," + std::to_string(labels.matched_count()) + "," +
             csv_number(labels.match_rate()) + ",";
  if (ds.has_ground_truth()) {
    const auto src_truth = ds.gt_labels(src);
    const auto target_major = majority_identity(target, ds.gt_labels(target_of(direction)));
    const auto source_major = majority_identity(source, src_truth);
    int correct = 0;
    for (std::size_t k = 0; k < labels.instance_ids.size(); ++k) {
      if (labels.target[k] == kUnmatched) continue;
      correct += target_major[static_cast<std::size_t>(labels.target[k])] ==
                 src_truth[static_cast<std::size_t>(labels.instance_ids[k])];
    }
    int mapped = 0, mapped_correct = 0;
    for (std::size_t c = 0; c < labels.per_cluster.size(); ++c) {
      if (labels.per_cluster[c] == kUnmatched) continue;
      ++mapped;
      mapped_correct += target_major[static_cast<std::size_t>(labels.per_cluster[c])] == source_major[c];
    }
    const int matched = labels.matched_count();
    const auto rows_n = static_cast<int>(labels.instance_ids.size());
    summary += optional_number(matched > 0, matched > 0 ? static_cast<double>(correct) / matched : 0.0) + "," +
               optional_number(rows_n > 0, rows_n > 0 ? static_cast<double>(correct) / rows_n : 0.0) + "," +
               optional_number(mapped > 0, mapped > 0 ? static_cast<double>(mapped_correct) / mapped : 0.0) + "\n";
  } else {
    summary += ",,\n";
  }

  OutputSet out;
  const fs::path dir(cfg.output);
  out.make_dir(dir);
  write_text(out.stage(dir / "brst.csv"), rows);
  write_text(out.stage(dir / "brst_clusters.csv"), clusters);
  write_text(out.stage(dir / "association.csv"), summary);
  out.commit();
  log(std::string(to_string(direction)) + ": matched " + std::to_string(labels.matched_count()) + " of " +
      std::to_string(labels.instance_ids.size()) + " instances");
}

// Keeps the header and the rows of epochs before `next_epoch` (the epoch
// is the second column of both training logs).
std::string kept_log_rows(const fs::path& path, const std::string& header, int next_epoch) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingCheckpoint, "cannot resume without " + path.string());
  std::string line, out;
  if (!std::getline(in, line) || line != header) {
    throw Error(ErrorCode::ParseError, path.string() + " does not have the expected header");
  }
  out = header + "\n";
  while (std::getline(in, line)) {
    const auto a = line.find(',');
    const auto b = line.find(',', a + 1);
    if (a == std::string::npos || b == std::string::npos) throw Error(ErrorCode::ParseError, "bad row in " + path.string());
    if (std::stoi(line.substr(a + 1, b - a - 1)) < next_epoch) out += line + "\n";
  }
  return out;
}

const char* kQualityColumns = ",ari_vis,ami_vis,v_vis,ari_ir,ami_ir,v_ir";

void cmd_train(const RunConfig& cfg) {
  if (cfg.output.empty()) throw Error(ErrorCode::InvalidConfig, "train needs an output directory (-o)");
  if (cfg.data.empty()) throw Error(ErrorCode::InvalidConfig, "no dataset given (--data)");
  const Dataset ds = load_dataset(cfg.data);
  const bool have_truth = ds.has_ground_truth();
  const fs::path dir(cfg.output);
  const fs::path ckpt_dir = dir / "checkpoint";
  const std::string train_header = epoch_csv_header() + kQualityColumns;
  const std::string loss_header = "seed," + loss_csv_header();

  TrainState state;
  TrainConfig config = cfg.train;
  MemoryBank memory;
  std::string train_log, loss_log;
  if (cfg.resume) {
    auto cp = load_checkpoint(ckpt_dir);
    state = std::move(cp.state);
    memory = std::move(cp.memory);
    config = cp.config;
    config.epochs = cfg.train.epochs;
    if (state.encoder.input_dim() != ds.d_in) {
      throw Error(ErrorCode::DimensionMismatch, "checkpoint encoder does not match the dataset dimension");
    }
    train_log = kept_log_rows(dir / "train_log.csv", train_header, state.next_epoch);
    loss_log = kept_log_rows(dir / "loss_log.csv", loss_header, state.next_epoch);
    log("resuming at epoch " + std::to_string(state.next_epoch) + " with the checkpoint's configuration");
  } else {
    state = init_train_state(ds, config);
    train_log = train_header + "\n";
    loss_log = loss_header + "\n";
  }

  const std::string seed = std::to_string(config.seed);
  while (state.next_epoch < config.epochs) {
    const auto rep = run_epoch(ds, state, config);
    train_log += epoch_csv_row(rep, config.seed) + "," +
                 quality_fields(rep.coarse_vis, ds.gt_labels(Modality::Vis), have_truth) + "," +
                 quality_fields(rep.coarse_ir, ds.gt_labels(Modality::Ir), have_truth) + "\n";
    for (std::size_t t = 0; t < rep.iterations.size(); ++t) {
      loss_log += seed + "," + loss_csv_row(rep.epoch, static_cast<int>(t), rep.iterations[t]) + "\n";
    }
    if (rep.skipped) {
      log("epoch " + std::to_string(rep.epoch) + ": no clusters in a modality, skipped");
    } else {
      memory = rep.memory;
      const auto mean = rep.mean_losses();
      log("epoch " + std::to_string(rep.epoch) + " " + std::string(to_string(rep.direction)) + ": M_v=" +
          std::to_string(rep.m_vis) + " M_r=" + std::to_string(rep.m_ir) + " matched=" + std::to_string(rep.matched) +
          " L_total=" + csv_number(mean.l_total));
    }
  }

  OutputSet out;
  out.make_dir(dir);
  save_checkpoint(out.stage(ckpt_dir), state, config, &memory);
  write_text(out.stage(dir / "train_log.csv"), train_log);
  write_text(out.stage(dir / "loss_log.csv"), loss_log);
  out.commit();
}

void cmd_eval(const RunConfig& cfg) {
  if (cfg.output.empty()) throw Error(ErrorCode::InvalidConfig, "eval needs an output directory (-o)");
  if (cfg.data.empty()) throw Error(ErrorCode::InvalidConfig, "no dataset given (--data)");
  const Dataset ds = load_dataset(cfg.data);

  Encoder encoder;
  TrainConfig config = cfg.train;
  if (!cfg.checkpoint.empty()) {
    auto cp = load_checkpoint(cfg.checkpoint);
    encoder = std::move(cp.state.encoder);
    config = cp.config;
  } else {
    log("no checkpoint given; evaluating the untrained encoder for seed " + std::to_string(cfg.seed));
    encoder = init_train_state(ds, config).encoder;
  }
  const auto tables = evaluate_model(ds, encoder, config.eps, config.min_pts, cfg.seed);
  std::string csv = metric_csv_header() + "\n";
  json j{{"seed", cfg.seed}, {"directions", json::array()}};
  for (const auto& t : tables) {
    csv += metric_csv_row(t, cfg.seed) + "\n";
    j["directions"].push_back(metric_json(t));
    log(t.direction + ": rank-1 " + csv_number(t.retrieval.rank1()) + ", mAP " + csv_number(t.retrieval.map));
  }

  OutputSet out;
  const fs::path dir(cfg.output);
  out.make_dir(dir);
  write_text(out.stage(dir / "metrics.json"), j.dump(2) + "\n");
  write_text(out.stage(dir / "metrics.csv"), csv);
  out.commit();
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Hierarchical identity learning on two-modality embeddings", "hil"};
  app.require_subcommand(1);
  app.get_formatter()->column_width(40);

  std::deque<Command> commands;
  auto& synth = commands.emplace_back(app, "synth", "generate a synthetic two-modality dataset");
  synth.bind("--ids", "ids", [](RunConfig& c) -> int& { return c.synth.num_identities; }, "identities");
  synth.bind("--per", "per", [](RunConfig& c) -> int& { return c.synth.instances_per_identity; },
             "instances per identity and modality");
  synth.bind("--dim", "dim", [](RunConfig& c) -> std::size_t& { return c.synth.d_in; }, "embedding dimension");
  synth.bind("--sigma-id", "sigma_id", [](RunConfig& c) -> double& { return c.synth.sigma_id; }, "prototype scale");
  synth.bind("--sigma-noise", "sigma_noise", [](RunConfig& c) -> double& { return c.synth.sigma_noise; },
             "per-instance noise scale");
  synth.bind("--sigma-mod", "sigma_mod", [](RunConfig& c) -> double& { return c.synth.sigma_mod; },
             "per-identity modality offset scale");
  synth.bind("-o,--output", "output", [](RunConfig& c) -> std::string& { return c.output; }, "dataset file to write");

  auto& cluster = commands.emplace_back(app, "cluster", "coarse and fine pseudo-labels for a dataset");
  cluster.bind("-i,--data", "data", [](RunConfig& c) -> std::string& { return c.data; }, "dataset file");
  cluster.bind("--checkpoint", "checkpoint", [](RunConfig& c) -> std::string& { return c.checkpoint; },
               "encode with this checkpoint (default: raw features)");
  cluster.bind("-o,--output", "output", [](RunConfig& c) -> std::string& { return c.output; }, "output directory");
  cluster.bind_train_options(false);

  auto& assoc = commands.emplace_back(app, "associate", "one-shot cross-modal label association");
  assoc.bind("-i,--data", "data", [](RunConfig& c) -> std::string& { return c.data; }, "dataset file");
  assoc.bind("--labels", "labels", [](RunConfig& c) -> std::string& { return c.labels; },
             "directory with labels_vis.json/labels_ir.json (default: cluster now)");
  assoc.bind("--checkpoint", "checkpoint", [](RunConfig& c) -> std::string& { return c.checkpoint; },
             "encode with this checkpoint (default: raw features)");
  assoc.bind("--direction", "direction", [](RunConfig& c) -> std::string& { return c.direction; },
             "VIS->IR | IR->VIS");
  assoc.bind("-o,--output", "output", [](RunConfig& c) -> std::string& { return c.output; }, "output directory");
  assoc.bind_train_options(false);

  auto& train = commands.emplace_back(app, "train", "train the encoder");
  train.bind("-i,--data", "data", [](RunConfig& c) -> std::string& { return c.data; }, "dataset file");
  train.bind("-o,--output", "output", [](RunConfig& c) -> std::string& { return c.output; },
             "output directory (checkpoint/, train_log.csv, loss_log.csv)");
  train.app->add_flag("--resume", "continue from the checkpoint in the output directory");
  train.bind_train_options(true);

  auto& eval = commands.emplace_back(app, "eval", "retrieval, clustering and margin metrics");
  eval.bind("-i,--data", "data", [](RunConfig& c) -> std::string& { return c.data; }, "dataset file");
  eval.bind("--checkpoint", "checkpoint", [](RunConfig& c) -> std::string& { return c.checkpoint; },
            "checkpoint directory (default: untrained encoder from --seed)");
  eval.bind("-o,--output", "output", [](RunConfig& c) -> std::string& { return c.output; }, "output directory");
  eval.bind_train_options(false);
  eval.bind("--feature-dim", "feature_dim", [](RunConfig& c) -> std::size_t& { return c.train.feature_dim; },
            "untrained encoder output dimension (0: input dimension)");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    for (auto& cmd : commands) {
      if (!cmd.app->parsed()) continue;
      RunConfig cfg = cmd.resolve();
      const std::string name = cmd.app->get_name();
      cfg.resume = name == "train" && cmd.app->count("--resume") > 0;
      set_num_threads(cfg.threads);
      if (name == "synth") cmd_synth(cfg);
      else if (name == "cluster") cmd_cluster(cfg);
      else if (name == "associate") cmd_associate(cfg);
      else if (name == "train") cmd_train(cfg);
      else cmd_eval(cfg);
    }
  } catch (const std::exception& e) {
    log(std::string("error: ") + e.what());
    return 1;
  }
  return 0;
}

}  // namespace hil
