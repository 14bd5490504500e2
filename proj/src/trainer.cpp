#include "hil/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "hil/csv.hpp"
#include "hil/errors.hpp"
#include "hil/parallel.hpp"

namespace hil {

Encoder Encoder::random(std::size_t d_in, std::size_t d, std::mt19937_64& rng) {
  Encoder e;
  e.weight = Matrix(d_in, d);
  e.bias.assign(d, 0.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d_in));
  for (double& w : e.weight.data()) w = scale * gauss(rng);
  return e;
}

Encoder::Output Encoder::forward(std::span<const double> raw) const {
  if (raw.size() != weight.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "encoder expects input of length " + std::to_string(weight.rows()) +
                                                  ", got " + std::to_string(raw.size()));
  }
  Output out;
  out.pre = bias;
  for (std::size_t i = 0; i < raw.size(); ++i) axpy(raw[i], weight.row(i), out.pre);
  out.feature = normalize(out.pre);
  return out;
}

Matrix Encoder::encode(const Matrix& raw) const {
  Matrix out(raw.rows(), output_dim());
  parallel_for(raw.rows(), [&](std::size_t k) {
    const auto f = forward(raw.row(k)).feature;
    std::copy(f.begin(), f.end(), out.row(k).begin());
  });
  return out;
}

void TrainConfig::validate() const {
  const auto require = [](bool ok, const char* what) {
    if (!ok) throw Error(ErrorCode::InvalidConfig, what);
  };
  require(epochs >= 0, "epochs must be non-negative");
  require(lr >= 0.0 && std::isfinite(lr), "lr must be a finite non-negative number");
  require(lr_step >= 1, "lr_step must be at least 1");
  require(lr_decay > 0.0, "lr_decay must be positive");
  require(pk_identities >= 1 && pk_instances >= 1, "batch sizes must be positive");
  require(tau > 0.0, "tau must be positive");
  require(alpha >= 0.0 && alpha <= 1.0, "alpha must lie in [0, 1]");
  require(fine_k >= 1, "K must be at least 1");
  require(gamma >= 0.0, "gamma must be non-negative");
  require(beta > 0.0 && beta <= 1.0, "beta must lie in (0, 1]");
  require(lambda1 >= 0.0 && lambda2 >= 0.0, "lambda weights must be non-negative");
  require(eps > 0.0, "eps must be positive");
  require(min_pts >= 1, "min_pts must be at least 1");
}

double TrainConfig::lr_at(int epoch) const { return lr * std::pow(lr_decay, epoch / lr_step); }

nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"lr", c.lr},
          {"lr_step", c.lr_step},
          {"lr_decay", c.lr_decay},
          {"P", c.pk_identities},
          {"K_inst", c.pk_instances},
          {"tau", c.tau},
          {"alpha", c.alpha},
          {"K", c.fine_k},
          {"gamma", c.gamma},
          {"beta", c.beta},
          {"lambda1", c.lambda1},
          {"lambda2", c.lambda2},
          {"eps", c.eps},
          {"min_pts", c.min_pts},
          {"feature_dim", c.feature_dim},
          {"neighbor_pool", c.neighbor_pool == NeighborPool::Dataset ? "dataset" : "batch"},
          {"brst", c.use_brst},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "epochs") c.epochs = v.get<int>();
      else if (key == "lr") c.lr = v.get<double>();
      else if (key == "lr_step") c.lr_step = v.get<int>();
      else if (key == "lr_decay") c.lr_decay = v.get<double>();
      else if (key == "P") c.pk_identities = v.get<int>();
      else if (key == "K_inst") c.pk_instances = v.get<int>();
      else if (key == "tau") c.tau = v.get<double>();
      else if (key == "alpha") c.alpha = v.get<double>();
      else if (key == "K") c.fine_k = v.get<int>();
      else if (key == "gamma") c.gamma = v.get<double>();
      else if (key == "beta") c.beta = v.get<double>();
      else if (key == "lambda1") c.lambda1 = v.get<double>();
      else if (key == "lambda2") c.lambda2 = v.get<double>();
      else if (key == "eps") c.eps = v.get<double>();
      else if (key == "min_pts") c.min_pts = v.get<int>();
      else if (key == "feature_dim") c.feature_dim = v.get<std::size_t>();
      else if (key == "neighbor_pool") {
        const auto mode = v.get<std::string>();
        if (mode != "dataset" && mode != "batch") throw Error(ErrorCode::InvalidConfig, "neighbor_pool must be dataset or batch");
        c.neighbor_pool = mode == "dataset" ? NeighborPool::Dataset : NeighborPool::Batch;
      } else if (key == "brst") c.use_brst = v.get<bool>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else throw Error(ErrorCode::InvalidConfig, "unknown training config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("bad training config value: ") + e.what());
  }
  return c;
}

TrainState init_train_state(const Dataset& dataset, const TrainConfig& config) {
  config.validate();
  TrainState s;
  s.rng.seed(config.seed);
  const std::size_t d = config.feature_dim == 0 ? dataset.d_in : config.feature_dim;
  s.encoder = Encoder::random(dataset.d_in, d, s.rng);
  return s;
}

std::vector<int> pk_sample(const CoarseLabeling& labeling, int p, int k_inst, std::mt19937_64& rng) {
  if (labeling.num_clusters <= 0) throw Error(ErrorCode::NoClusters, "cannot sample a batch without clusters");
  const auto groups = labeling.members();
  std::vector<int> clusters(groups.size());
  std::iota(clusters.begin(), clusters.end(), 0);
  const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(p), clusters.size());
  for (std::size_t i = 0; i < take; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, clusters.size() - 1);
    std::swap(clusters[i], clusters[pick(rng)]);
  }

  std::vector<int> batch;
  batch.reserve(take * static_cast<std::size_t>(k_inst));
  for (std::size_t i = 0; i < take; ++i) {
    auto members = groups[static_cast<std::size_t>(clusters[i])];
    const auto k = static_cast<std::size_t>(k_inst);
    if (members.size() >= k) {
      for (std::size_t j = 0; j < k; ++j) {
        std::uniform_int_distribution<std::size_t> pick(j, members.size() - 1);
        std::swap(members[j], members[pick(rng)]);
        batch.push_back(members[j]);
      }
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
      for (std::size_t j = 0; j < k; ++j) batch.push_back(members[pick(rng)]);
    }
  }
  return batch;
}

Vector backprop_normalization(std::span<const double> grad_feature, std::span<const double> pre) {
  const double n = norm(pre);
  if (!(n > kZeroNorm)) throw Error(ErrorCode::ZeroVector, "normalization backprop through a zero vector");
  double radial = 0.0;
  for (std::size_t k = 0; k < pre.size(); ++k) radial += grad_feature[k] * pre[k] / n;
  Vector out(pre.size());
  for (std::size_t k = 0; k < pre.size(); ++k) out[k] = (grad_feature[k] - radial * pre[k] / n) / n;
  return out;
}

void sgd_step(Encoder& encoder, const EncoderGrad& grad, double lr) {
  if (grad.weight.rows() != encoder.weight.rows() || grad.weight.cols() != encoder.weight.cols() ||
      grad.bias.size() != encoder.bias.size()) {
    throw Error(ErrorCode::DimensionMismatch, "gradient shape does not match encoder");
  }
  if (!all_finite(grad.weight.data()) || !all_finite(grad.bias)) {
    throw Error(ErrorCode::NonFinite, "non-finite encoder gradient");
  }
  Encoder next = encoder;
  axpy(-lr, grad.weight.data(), next.weight.data());
  axpy(-lr, grad.bias, next.bias);
  if (!all_finite(next.weight.data()) || !all_finite(next.bias)) {
    throw Error(ErrorCode::NonFinite, "non-finite encoder parameters after update");
  }
  encoder = std::move(next);
}

namespace {

struct ForwardBatch {
  QueryBatch batch;
  Matrix pre;
  Matrix raw;
};

ForwardBatch forward_batch(const Encoder& encoder, const Dataset& dataset, Modality m, std::span<const int> ids,
                           const CoarseLabeling& coarse, const FineLabeling& fine) {
  ForwardBatch out;
  const auto& items = dataset.of(m);
  out.batch.features = Matrix(ids.size(), encoder.output_dim());
  out.pre = Matrix(ids.size(), encoder.output_dim());
  out.raw = Matrix(ids.size(), encoder.input_dim());
  for (std::size_t p = 0; p < ids.size(); ++p) {
    const auto id = static_cast<std::size_t>(ids[p]);
    const auto& raw = items.at(id).raw;
    const auto o = encoder.forward(raw);
    std::copy(o.feature.begin(), o.feature.end(), out.batch.features.row(p).begin());
    std::copy(o.pre.begin(), o.pre.end(), out.pre.row(p).begin());
    std::copy(raw.begin(), raw.end(), out.raw.row(p).begin());
    out.batch.ids.push_back(ids[p]);
    out.batch.coarse.push_back(coarse.assignment.at(id));
    out.batch.sub.push_back(fine.sub.at(id));
  }
  return out;
}

void accumulate_encoder_grad(const ForwardBatch& fb, const Matrix& grad_features, EncoderGrad& out) {
  for (std::size_t p = 0; p < fb.pre.rows(); ++p) {
    const auto g_pre = backprop_normalization(grad_features.row(p), fb.pre.row(p));
    const auto x = fb.raw.row(p);
    for (std::size_t i = 0; i < x.size(); ++i) axpy(x[i], g_pre, out.weight.row(i));
    axpy(1.0, g_pre, out.bias);
  }
}

InstancePool full_pool(const Matrix& features) {
  InstancePool pool{features, std::vector<int>(features.rows())};
  std::iota(pool.ids.begin(), pool.ids.end(), 0);
  return pool;
}

LossReport strip_gradients(LossReport r) {
  r.grad_vis = Matrix();
  r.grad_ir = Matrix();
  return r;
}

}  // namespace

IterationResult evaluate_iteration(const Encoder& encoder, const IterationContext& ctx, std::span<const int> vis_ids,
                                   std::span<const int> ir_ids) {
  auto fv = forward_batch(encoder, ctx.dataset, Modality::Vis, vis_ids, ctx.coarse_vis, ctx.fine_vis);
  auto fr = forward_batch(encoder, ctx.dataset, Modality::Ir, ir_ids, ctx.coarse_ir, ctx.fine_ir);
  for (int c : fv.batch.coarse) {
    if (c == kOutlier) throw Error(ErrorCode::UnknownLabel, "outlier instance in a training batch");
  }
  for (int c : fr.batch.coarse) {
    if (c == kOutlier) throw Error(ErrorCode::UnknownLabel, "outlier instance in a training batch");
  }

  InstancePool batch_vis, batch_ir;
  if (ctx.pool_vis == nullptr || ctx.pool_ir == nullptr) {
    batch_vis = {fv.batch.features, fv.batch.ids};
    batch_ir = {fr.batch.features, fr.batch.ids};
  }
  const InstancePool& pv = ctx.pool_vis != nullptr ? *ctx.pool_vis : batch_vis;
  const InstancePool& pr = ctx.pool_ir != nullptr ? *ctx.pool_ir : batch_ir;

  IterationResult res;
  res.report = compute_batch_loss(fv.batch, fr.batch, ctx.bank, pv, pr, ctx.weights, ctx.override_labels);
  res.grad.weight = Matrix(encoder.input_dim(), encoder.output_dim());
  res.grad.bias.assign(encoder.output_dim(), 0.0);
  accumulate_encoder_grad(fv, res.report.grad_vis, res.grad);
  accumulate_encoder_grad(fr, res.report.grad_ir, res.grad);
  res.vis = std::move(fv.batch);
  res.ir = std::move(fr.batch);
  return res;
}

bool EpochReport::same_outcome(const EpochReport& o) const {
  return epoch == o.epoch && direction == o.direction && lr == o.lr && m_vis == o.m_vis && m_ir == o.m_ir &&
         outliers_vis == o.outliers_vis && outliers_ir == o.outliers_ir && association_rows == o.association_rows &&
         matched == o.matched && match_rate == o.match_rate && skipped == o.skipped && iterations == o.iterations &&
         coarse_vis == o.coarse_vis && coarse_ir == o.coarse_ir && fine_vis == o.fine_vis && fine_ir == o.fine_ir &&
         memory == o.memory;
}

LossReport EpochReport::mean_losses() const {
  LossReport m;
  if (iterations.empty()) return m;
  const double n = static_cast<double>(iterations.size());
  for (const auto& r : iterations) {
    m.l_id += r.l_id / n;
    m.l_neighbor += r.l_neighbor / n;
    m.l_mccl += r.l_mccl / n;
    m.l_total += r.l_total / n;
    m.id_vis += r.id_vis / n;
    m.id_ir += r.id_ir / n;
    for (std::size_t k = 0; k < 4; ++k) {
      m.neighbor_terms[k] += r.neighbor_terms[k] / n;
      m.mccl_terms[k] += r.mccl_terms[k] / n;
    }
  }
  return m;
}

EpochReport run_epoch(const Dataset& dataset, TrainState& state, const TrainConfig& config, const EpochHooks* hooks) {
  config.validate();
  if (dataset.vis.empty() || dataset.ir.empty()) {
    throw Error(ErrorCode::NoClusters, "training needs instances in both modalities");
  }
  const auto started = std::chrono::steady_clock::now();
  const TrainState backup = state;

  EpochReport rep;
  rep.epoch = state.next_epoch;
  rep.direction = direction_for_epoch(rep.epoch);
  rep.lr = config.lr_at(rep.epoch);

  try {
    // 1. epoch-start feature snapshot
    const Matrix feats_vis = state.encoder.encode(dataset.raw_matrix(Modality::Vis));
    const Matrix feats_ir = state.encoder.encode(dataset.raw_matrix(Modality::Ir));

    // 2. coarse pseudo-labels
    rep.coarse_vis = dbscan(feats_vis, config.eps, config.min_pts, Modality::Vis);
    rep.coarse_ir = dbscan(feats_ir, config.eps, config.min_pts, Modality::Ir);
    rep.m_vis = rep.coarse_vis.num_clusters;
    rep.m_ir = rep.coarse_ir.num_clusters;
    rep.outliers_vis = rep.coarse_vis.outlier_count();
    rep.outliers_ir = rep.coarse_ir.outlier_count();
    if (rep.m_vis == 0 || rep.m_ir == 0) {
      rep.skipped = true;
      ++state.next_epoch;
      rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      return rep;
    }

    // 3-5. fine pseudo-labels and memories
    const std::uint64_t seed_vis = state.rng();
    const std::uint64_t seed_ir = state.rng();
    rep.fine_vis = kmeans_subcluster(feats_vis, rep.coarse_vis, config.fine_k, seed_vis);
    rep.fine_ir = kmeans_subcluster(feats_ir, rep.coarse_ir, config.fine_k, seed_ir);
    MemoryBank bank = init_from_centroids(compute_centroids(feats_vis, rep.coarse_vis, rep.fine_vis),
                                          compute_centroids(feats_ir, rep.coarse_ir, rep.fine_ir), config.alpha,
                                          config.tau);

    // 6. cross-modal association in this epoch's direction
    const Modality source = source_of(rep.direction);
    const CoarseLabeling& source_labels = source == Modality::Vis ? rep.coarse_vis : rep.coarse_ir;
    rep.association_rows = static_cast<int>(source_labels.assignment.size()) - source_labels.outlier_count();
    CrossModalOverride override_labels;
    bool have_override = false;
    if (config.use_brst) {
      const auto unified = associate(source == Modality::Vis ? feats_vis : feats_ir, source_labels,
                                     bank.of(target_of(rep.direction)).coarse, config.gamma, rep.direction);
      rep.matched = unified.matched_count();
      rep.match_rate = unified.match_rate();
      override_labels = apply_unified(rep.epoch, unified, source_labels);
      have_override = true;
    }

    // 7. iterations
    const InstancePool pool_vis = full_pool(feats_vis);
    const InstancePool pool_ir = full_pool(feats_ir);
    const bool dataset_pools = config.neighbor_pool == NeighborPool::Dataset;
    const IterationContext ctx{dataset,
                               rep.coarse_vis,
                               rep.coarse_ir,
                               rep.fine_vis,
                               rep.fine_ir,
                               bank,
                               dataset_pools ? &pool_vis : nullptr,
                               dataset_pools ? &pool_ir : nullptr,
                               config.weights(),
                               have_override ? &override_labels : nullptr};
    const std::size_t per_batch = static_cast<std::size_t>(config.pk_identities * config.pk_instances);
    const std::size_t smaller = std::min(dataset.vis.size(), dataset.ir.size());
    const std::size_t iterations = (smaller + per_batch - 1) / per_batch;

    for (std::size_t t = 0; t < iterations; ++t) {
      const auto vis_ids = pk_sample(rep.coarse_vis, config.pk_identities, config.pk_instances, state.rng);
      const auto ir_ids = pk_sample(rep.coarse_ir, config.pk_identities, config.pk_instances, state.rng);
      auto res = evaluate_iteration(state.encoder, ctx, vis_ids, ir_ids);

      for (MemoryLevel level : {MemoryLevel::Coarse, MemoryLevel::Fine}) {
        for (const auto* batch : {&res.vis, &res.ir}) {
          const Modality m = batch == &res.vis ? Modality::Vis : Modality::Ir;
          for (std::size_t p = 0; p < batch->ids.size(); ++p) {
            momentum_update(bank, level, m, batch->coarse[p], batch->sub[p], batch->features.row(p));
            if (hooks != nullptr && hooks->on_memory_update) {
              hooks->on_memory_update({level, m, static_cast<int>(p), batch->coarse[p], batch->sub[p]});
            }
          }
        }
      }
      sgd_step(state.encoder, res.grad, rep.lr);
      rep.iterations.push_back(strip_gradients(std::move(res.report)));
    }
    rep.memory = std::move(bank);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::NonFinite) state = backup;
    throw;
  }
  ++state.next_epoch;
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return rep;
}

std::string epoch_csv_header() {
  return "seed,epoch,direction,lr,m_vis,m_ir,outliers_vis,outliers_ir,association_rows,matched,match_rate,"
         "iterations,l_id,l_neighbor,l_mccl,l_total";
}

std::string epoch_csv_row(const EpochReport& r, std::uint64_t seed) {
  const auto m = r.mean_losses();
  return std::to_string(seed) + "," + std::to_string(r.epoch) + "," + csv_field(to_string(r.direction)) + "," +
         csv_number(r.lr) + "," + std::to_string(r.m_vis) + "," + std::to_string(r.m_ir) + "," +
         std::to_string(r.outliers_vis) + "," + std::to_string(r.outliers_ir) + "," +
         std::to_string(r.association_rows) + "," + std::to_string(r.matched) + "," + csv_number(r.match_rate) + "," +
         std::to_string(r.iterations.size()) + "," + csv_number(m.l_id) + "," + csv_number(m.l_neighbor) + "," +
         csv_number(m.l_mccl) + "," + csv_number(m.l_total);
}

}  // namespace hil
