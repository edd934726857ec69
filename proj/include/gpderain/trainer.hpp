#pragma once

// Alternating labeled / unlabeled optimisation.
//
// Each epoch runs a labeled pass (supervised loss on pairs, collecting one
// latent per labeled image into a fresh LatentStore) followed, when unlabeled
// data is present, by an unlabeled pass in which every unlabeled latent is
// pulled towards its GP pseudo ground truth computed against that store. The
// unlabeled pass updates encoder parameters only.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gpderain/checkpoint.hpp"
#include "gpderain/config.hpp"
#include "gpderain/gp.hpp"
#include "gpderain/latent_store_io.hpp"
#include "gpderain/losses.hpp"
#include "gpderain/metrics.hpp"
#include "gpderain/model.hpp"
#include "gpderain/optim.hpp"
#include "gpderain/rain.hpp"
#include "gpderain/rng.hpp"

namespace gpderain::train {

struct TrainState {
  model::ParamSet params;
  optim::AdamState adam;
  Rng rng;
  /// Completed epochs.
  std::int64_t epoch = 0;
  /// Optimizer steps taken so far (both phases).
  std::int64_t step = 0;
  /// Store produced by the most recent labeled pass.
  std::optional<gp::LatentStore> store;

  static TrainState fresh(const TrainConfig& cfg) {
    TrainState s;
    s.params = model::init_params(cfg.model);
    s.adam = optim::AdamState::for_params(s.params, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    s.rng.seed(derive_seed(cfg.seed, 0x54524149ULL));
    return s;
  }
};

struct StepRecord {
  std::int64_t step = 0;
  std::string phase;
  losses::LossReport report;
};

struct EpochSummary {
  std::int64_t epoch = 0;
  double lr = 0.0;
  std::int64_t labeled_steps = 0;
  std::int64_t unlabeled_steps = 0;
  double mean_sup = 0.0;
  double mean_unsup = 0.0;
  std::int64_t clamped_count = 0;
  std::size_t store_rows = 0;
  std::optional<double> val_psnr;

  nlohmann::json to_json() const {
    nlohmann::json j = {{"epoch", epoch},
                        {"lr", lr},
                        {"labeled_steps", labeled_steps},
                        {"unlabeled_steps", unlabeled_steps},
                        {"mean_sup_loss", mean_sup},
                        {"mean_unsup_loss", mean_unsup},
                        {"clamped_count", clamped_count},
                        {"store_rows", store_rows}};
    j["val_psnr"] = val_psnr ? nlohmann::json(*val_psnr) : nlohmann::json(nullptr);
    return j;
  }
};

/// Receives per-step loss rows and per-epoch summaries.
struct MetricsSink {
  std::function<void(const StepRecord&)> on_step;
  std::function<void(const EpochSummary&)> on_epoch;
};

inline double epoch_lr(const TrainConfig& cfg, std::int64_t epoch) {
  return optim::lr_at(epoch, cfg.lr, cfg.lr_decay_factor, cfg.lr_decay_every);
}

namespace detail {

inline std::vector<std::size_t> shuffled_order(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  shuffle(order, rng);
  return order;
}

template <typename Fn>
void with_context(const char* phase, std::int64_t epoch, std::size_t batch, Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    throw Error(e.kind(), std::string(phase) + " epoch " + std::to_string(epoch) + " batch " + std::to_string(batch) +
                              ": " + e.detail());
  }
}

}  // namespace detail

struct PhaseResult {
  std::int64_t steps = 0;
  double mean_loss = 0.0;
  std::int64_t clamped_count = 0;
};

/// Supervised pass over the labeled pairs. Returns a fresh store holding one
/// latent per labeled image (from this epoch's crop), ordered by labeled index.
inline gp::LatentStore labeled_epoch(const rain::DatasetSplit& split, TrainState& st, const TrainConfig& cfg,
                                     const losses::FeatureExtractor& fx, const MetricsSink& sink = {},
                                     PhaseResult* result = nullptr) {
  if (split.labeled.empty()) fail(ErrorKind::Config, "labeled set is empty");
  const double lr = epoch_lr(cfg, st.epoch);
  const auto order = detail::shuffled_order(split.labeled.size(), st.rng);
  gp::LatentStore store;
  store.epoch_tag = st.epoch;
  store.rows.resize(split.labeled.size());
  PhaseResult pr;
  ad::Tape tape;
  const auto bsz = static_cast<std::size_t>(cfg.batch_size);
  for (std::size_t start = 0, batch = 0; start < order.size(); start += bsz, ++batch) {
    const std::size_t end = std::min(order.size(), start + bsz);
    const double scale = 1.0 / static_cast<double>(end - start);
    detail::with_context("labeled", st.epoch, batch, [&] {
      auto grads = model::Gradients::zeros_like(st.params);
      std::vector<losses::LossReport> reports;
      for (std::size_t k = start; k < end; ++k) {
        const auto idx = order[k];
        const auto crop = rain::random_crop(split.labeled[idx], cfg.crop_size, st.rng);
        tape.clear();
        const auto fwd = model::forward(tape, crop.rainy, st.params);
        store.rows[idx] = {tape.value(fwd.encoded.latent).values, split.labeled[idx].id};
        auto obj = losses::sup_objective(tape, fwd.estimate, crop.clean, fx, cfg.lambda_p, scale);
        tape.backward(obj.seeds);
        model::accumulate(grads, tape, st.params);
        reports.push_back(obj.report);
      }
      optim::adam_step(st.params, grads, st.adam, lr);
      ++st.step;
      const auto mean = losses::batch_mean(reports);
      pr.mean_loss += mean.total;
      pr.clamped_count += mean.clamped_count;
      ++pr.steps;
      if (sink.on_step) sink.on_step({st.step, "labeled", mean});
    });
  }
  if (pr.steps) pr.mean_loss /= static_cast<double>(pr.steps);
  if (result) *result = pr;
  st.store = store;
  return store;
}

/// Latent-space GP pass over the unlabeled images against `store`. Only
/// encoder parameters move; with lambda_unsup == 0 no optimizer step is taken.
inline void unlabeled_epoch(const rain::DatasetSplit& split, const gp::LatentStore& store, TrainState& st,
                            const TrainConfig& cfg, const MetricsSink& sink = {}, PhaseResult* result = nullptr) {
  if (store.empty()) fail(ErrorKind::Ordering, "unlabeled phase before any labeled epoch");
  store.validate();
  const double lr = epoch_lr(cfg, st.epoch);
  const auto order = detail::shuffled_order(split.unlabeled.size(), st.rng);
  PhaseResult pr;
  ad::Tape tape;
  const auto bsz = static_cast<std::size_t>(cfg.batch_size);
  const bool update = cfg.lambda_unsup > 0.0;
  for (std::size_t start = 0, batch = 0; start < order.size(); start += bsz, ++batch) {
    const std::size_t end = std::min(order.size(), start + bsz);
    const double scale = cfg.lambda_unsup / static_cast<double>(end - start);
    detail::with_context("unlabeled", st.epoch, batch, [&] {
      auto grads = model::Gradients::zeros_like(st.params);
      std::vector<losses::LossReport> reports;
      for (std::size_t k = start; k < end; ++k) {
        const auto& img = split.unlabeled[order[k]];
        const auto crop = rain::random_crop(img.rainy, cfg.crop_size, st.rng);
        tape.clear();
        const auto enc = model::encoder_forward(tape, crop, st.params);
        const auto& z = tape.value(enc.latent).values;
        const auto pg = gp::pseudo_gt(gp::LatentVector{z, img.id}, store, cfg.gp);
        auto term = losses::unsup_loss(z, pg.near, pg.far_variance, cfg.gp);
        reports.push_back(losses::total_loss(losses::LossReport{}, term.report, cfg.lambda_unsup));
        if (!update) continue;
        for (double& g : term.z_seed) g *= scale;
        const ad::Seed seed{enc.latent, std::move(term.z_seed)};
        tape.backward(std::span(&seed, 1));
        model::accumulate(grads, tape, st.params);
      }
      if (update) {
        optim::adam_step(st.params, grads, st.adam, lr,
                         [](const std::string& name) { return model::is_encoder_param(name); });
        ++st.step;
      }
      auto mean = losses::batch_mean(reports);
      pr.mean_loss += mean.unsup;
      pr.clamped_count += mean.clamped_count;
      ++pr.steps;
      if (sink.on_step) sink.on_step({st.step, "unlabeled", mean});
    });
  }
  if (pr.steps) pr.mean_loss /= static_cast<double>(pr.steps);
  if (result) *result = pr;
}

/// Encodes the centre crop of every labeled image with the current parameters.
inline gp::LatentStore encode_store(const rain::DatasetSplit& split, const model::ParamSet& ps, std::int64_t epoch) {
  gp::LatentStore store;
  store.epoch_tag = epoch;
  for (const auto& pr : split.labeled)
    store.rows.push_back({model::encode(rain::center_crop(pr.rainy, ps.config.patch_size), ps), pr.id});
  return store;
}

inline double validation_psnr(const model::ParamSet& ps, const std::vector<rain::ImagePair>& pairs) {
  double s = 0.0;
  for (const auto& p : pairs) s += metrics::psnr(metrics::derain_tiled(p.rainy, ps), p.clean);
  return s / static_cast<double>(pairs.size());
}

inline CheckpointRecord make_checkpoint(const TrainState& st, const TrainConfig& cfg) {
  TrainingState ts;
  ts.adam = st.adam;
  ts.epoch = static_cast<std::uint64_t>(st.epoch);
  ts.step = static_cast<std::uint64_t>(st.step);
  ts.rng_state = rng_state(st.rng);
  ts.config_hash = config_hash(cfg);
  return {st.params, std::move(ts)};
}

/// Restores training state; refuses checkpoints written under a different config.
inline TrainState restore_state(const CheckpointRecord& rec, const TrainConfig& cfg) {
  if (!rec.state) fail(ErrorKind::Compatibility, "checkpoint carries no training state");
  if (rec.state->config_hash != config_hash(cfg))
    fail(ErrorKind::Compatibility, "checkpoint was written under a different training config");
  if (!(rec.params.config == cfg.model)) fail(ErrorKind::Compatibility, "checkpoint model config differs");
  TrainState st;
  st.params = rec.params;
  st.adam = rec.state->adam;
  st.epoch = static_cast<std::int64_t>(rec.state->epoch);
  st.step = static_cast<std::int64_t>(rec.state->step);
  restore_rng_state(st.rng, rec.state->rng_state);
  return st;
}

struct TrainOptions {
  bool supervised_only = false;
  std::vector<rain::ImagePair> validation;
  /// When set, metrics.csv, epochs.jsonl, checkpoints and the final latent store go here.
  std::optional<std::filesystem::path> out_dir;
  /// Stop once this many epochs have completed (simulates an interruption).
  std::optional<std::int64_t> stop_after;
  std::optional<CheckpointRecord> resume;
  MetricsSink sink;
};

struct TrainResult {
  TrainState state;
  std::vector<StepRecord> steps;
  std::vector<EpochSummary> epochs;
  bool completed = false;
};

inline TrainResult train(const rain::DatasetSplit& split, const TrainConfig& cfg, const TrainOptions& opt = {}) {
  cfg.validate();
  if (split.labeled.empty()) fail(ErrorKind::Config, "labeled set is empty");
  for (const auto& p : split.labeled)
    if (p.rainy.shape.c != cfg.model.channels || p.rainy.shape.h < cfg.crop_size || p.rainy.shape.w < cfg.crop_size)
      fail(ErrorKind::Compatibility, "labeled image " + p.id + " of shape " + p.rainy.shape.str() +
                                         " does not fit the model/crop configuration");
  for (const auto& u : split.unlabeled)
    if (u.rainy.shape.c != cfg.model.channels || u.rainy.shape.h < cfg.crop_size || u.rainy.shape.w < cfg.crop_size)
      fail(ErrorKind::Compatibility, "unlabeled image " + u.id + " does not fit the model/crop configuration");

  TrainResult res;
  res.state = opt.resume ? restore_state(*opt.resume, cfg) : TrainState::fresh(cfg);
  auto& st = res.state;
  const losses::FeatureExtractor fx(cfg.model.channels, cfg.feature_seed);
  const bool use_unlabeled = !opt.supervised_only && !split.unlabeled.empty();

  std::ofstream csv, epochs_log;
  if (opt.out_dir) {
    std::filesystem::create_directories(*opt.out_dir);
    const auto csv_path = *opt.out_dir / "metrics.csv";
    const bool fresh_csv = !opt.resume || !std::filesystem::exists(csv_path);
    csv.open(csv_path, fresh_csv ? std::ios::trunc : std::ios::app);
    epochs_log.open(*opt.out_dir / "epochs.jsonl", fresh_csv ? std::ios::trunc : std::ios::app);
    if (!csv || !epochs_log) fail(ErrorKind::Io, "cannot write metrics under " + opt.out_dir->string());
    if (fresh_csv) csv << losses::kMetricsCsvHeader << "\n";
  }
  MetricsSink sink;
  sink.on_step = [&](const StepRecord& r) {
    res.steps.push_back(r);
    if (csv.is_open()) csv << losses::csv_row(r.step, r.phase, r.report) << "\n";
    if (opt.sink.on_step) opt.sink.on_step(r);
  };

  const std::int64_t last = opt.stop_after ? std::min<std::int64_t>(*opt.stop_after, cfg.epochs) : cfg.epochs;
  while (st.epoch < last) {
    EpochSummary es;
    es.epoch = st.epoch;
    es.lr = epoch_lr(cfg, st.epoch);
    PhaseResult lab, unl;
    const auto store = labeled_epoch(split, st, cfg, fx, sink, &lab);
    es.labeled_steps = lab.steps;
    es.mean_sup = lab.mean_loss;
    es.store_rows = store.size();
    if (use_unlabeled) {
      unlabeled_epoch(split, store, st, cfg, sink, &unl);
      es.unlabeled_steps = unl.steps;
      es.mean_unsup = unl.mean_loss;
      es.clamped_count = unl.clamped_count;
    }
    ++st.epoch;
    if (!opt.validation.empty()) es.val_psnr = validation_psnr(st.params, opt.validation);
    res.epochs.push_back(es);
    if (epochs_log.is_open()) epochs_log << es.to_json().dump() << "\n";
    if (opt.sink.on_epoch) opt.sink.on_epoch(es);
    if (opt.out_dir && cfg.checkpoint_every > 0 && st.epoch % cfg.checkpoint_every == 0) {
      char name[64];
      std::snprintf(name, sizeof name, "epoch_%04lld.ckpt", static_cast<long long>(st.epoch));
      save_checkpoint(*opt.out_dir / name, make_checkpoint(st, cfg));
    }
  }
  res.completed = st.epoch >= cfg.epochs;
  if (opt.out_dir) {
    csv.flush();
    epochs_log.flush();
    save_checkpoint(*opt.out_dir / (res.completed ? "final.ckpt" : "interrupted.ckpt"), make_checkpoint(st, cfg));
    gp::save_latent_store(*opt.out_dir / "latent_store.gpls", encode_store(split, st.params, st.epoch));
  }
  return res;
}

}  // namespace gpderain::train
