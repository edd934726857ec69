#pragma once

// Command-line front end: gen-data | train | eval | gp-inspect.
// Exit codes: 0 ok, 2 usage, 3 I/O, 4 compatibility, 5 numeric.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "gpderain/checkpoint.hpp"
#include "gpderain/config.hpp"
#include "gpderain/dataset_io.hpp"
#include "gpderain/gp.hpp"
#include "gpderain/latent_store_io.hpp"
#include "gpderain/losses.hpp"
#include "gpderain/metrics.hpp"
#include "gpderain/rain.hpp"
#include "gpderain/trainer.hpp"

namespace gpderain::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kUsage = 2, kIo = 3, kCompat = 4, kNumeric = 5 };

inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Io: return kIo;
    case ErrorKind::Numeric:
    case ErrorKind::IllConditioned:
    case ErrorKind::DegenerateVector:
    case ErrorKind::Ordering: return kNumeric;
    default: return kCompat;
  }
}

inline void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << j.dump(2) << "\n";
}

struct GenDataArgs {
  std::string out;
  int count = 0;
  std::string size = "32x32";
  double fraction = 1.0;
  std::uint64_t seed = 0;
  std::string regime = "shifted";
  int test_count = 0;
};

struct TrainArgs {
  std::string data, config, out, resume;
  bool supervised_only = false;
  long long stop_after = -1;
};

struct EvalArgs {
  std::string model, data, out;
};

struct InspectArgs {
  std::string store, query, model, config;
  std::size_t top = 10;
};

inline int gen_data(const GenDataArgs& a) {
  rain::GenerationConfig cfg;
  if (std::sscanf(a.size.c_str(), "%dx%d", &cfg.height, &cfg.width) != 2 || cfg.height < 1 || cfg.width < 1) {
    std::cerr << "gen-data: --size must look like HxW\n";
    return kUsage;
  }
  if (a.count < 1 || !(a.fraction > 0.0 && a.fraction <= 1.0) || a.test_count < 0 ||
      (a.regime != "labeled" && a.regime != "shifted")) {
    std::cerr << "gen-data: invalid --count, --fraction-labeled, --test-count or --regime\n";
    return kUsage;
  }
  cfg.count = a.count;
  cfg.fraction_labeled = a.fraction;
  cfg.seed = a.seed;
  cfg.unlabeled_regime = a.regime;
  cfg.test_count = a.test_count;
  const auto data = rain::generate_dataset(cfg);
  dataset::write_dataset(a.out, cfg, data);
  write_json(fs::path(a.out) / "resolved_config.json",
             {{"command", "gen-data"}, {"count", a.count}, {"size", a.size}, {"fraction_labeled", a.fraction},
              {"seed", a.seed}, {"regime", a.regime}, {"test_count", a.test_count}});
  std::cerr << "gen-data: " << data.split.labeled.size() << " labeled, " << data.split.unlabeled.size()
            << " unlabeled, " << data.test.size() << " test images -> " << a.out << "\n";
  return kOk;
}

inline int train_cmd(const TrainArgs& a) {
  const TrainConfig cfg = load_train_config(a.config);
  const auto ds = dataset::read_dataset(a.data);
  train::TrainOptions opt;
  opt.supervised_only = a.supervised_only;
  opt.validation = ds.test;
  opt.out_dir = fs::path(a.out);
  if (a.stop_after >= 0) opt.stop_after = a.stop_after;
  if (!a.resume.empty()) opt.resume = load_checkpoint(a.resume, cfg.model);
  opt.sink.on_epoch = [](const train::EpochSummary& e) { std::cerr << "train: " << e.to_json().dump() << "\n"; };
  fs::create_directories(a.out);
  save_train_config(cfg, fs::path(a.out) / "config.json");
  write_json(fs::path(a.out) / "run.json", {{"command", "train"},
                                            {"data", a.data},
                                            {"config", a.config},
                                            {"supervised_only", a.supervised_only},
                                            {"resume", a.resume},
                                            {"config_hash", config_hash(cfg)}});
  const auto res = train::train(ds.split, cfg, opt);
  std::cerr << "train: finished " << res.state.epoch << " epochs, " << res.state.step << " steps\n";
  return kOk;
}

inline int eval_cmd(const EvalArgs& a) {
  const auto rec = load_checkpoint(a.model);
  const auto ds = dataset::read_dataset(a.data);
  const auto& pairs = ds.test.empty() ? ds.split.labeled : ds.test;
  const auto hash = rec.state ? rec.state->config_hash : 0;
  const auto rep = metrics::evaluate(rec.params, pairs, hash);
  metrics::write_eval_report(rep, a.out);
  write_json(fs::path(a.out) / "resolved_config.json",
             {{"command", "eval"}, {"model", a.model}, {"data", a.data}, {"split", ds.test.empty() ? "labeled" : "test"},
              {"model_config", to_json(rec.params.config)}});
  std::cerr << "eval: mean PSNR " << rep.mean_psnr << " dB, mean SSIM " << rep.mean_ssim << " over " << rep.rows.size()
            << " images\n";
  return kOk;
}

inline nlohmann::json neighbor_listing(const gp::NeighborSet& set, const gp::LatentStore& store) {
  nlohmann::json arr = nlohmann::json::array();
  for (std::size_t r = 0; r < set.size(); ++r)
    arr.push_back({{"rank", r}, {"index", set.indices[r]}, {"id", store.rows[set.indices[r]].source_id},
                   {"similarity", set.similarities[r]}});
  return arr;
}

/// Builds the gp-inspect report for a query image.
inline nlohmann::json inspect(const gp::LatentStore& store, const model::ParamSet& ps, const image::ImagePatch& img,
                              const gp::GpConfig& gpc, std::size_t top) {
  store.validate();
  if (store.dim() != static_cast<std::size_t>(ps.config.latent_dim))
    fail(ErrorKind::Compatibility, "store dimension " + std::to_string(store.dim()) + " differs from model latent " +
                                       std::to_string(ps.config.latent_dim));
  const gp::LatentVector q{model::encode(rain::center_crop(img, ps.config.patch_size), ps), "query"};
  gp::GpConfig listing = gpc;
  listing.n_nearest = std::max<std::size_t>(top, 1);
  listing.n_farthest = top;
  const auto pg = gp::pseudo_gt(q, store, gpc);
  const auto u = losses::unsup_loss(q.values, pg.near, pg.far_variance, gpc);
  nlohmann::json j;
  j["store_rows"] = store.size();
  j["latent_dim"] = store.dim();
  j["nearest"] = neighbor_listing(gp::select_neighbors(q, store, listing, gp::NeighborKind::Nearest), store);
  j["farthest"] = neighbor_listing(gp::select_neighbors(q, store, listing, gp::NeighborKind::Farthest), store);
  j["near_set"] = pg.nearest.indices;
  j["far_set"] = pg.farthest.indices;
  j["near_variance"] = pg.near.variance;
  j["near_raw_variance"] = pg.near.raw_variance;
  j["far_variance"] = pg.far_variance ? nlohmann::json(*pg.far_variance) : nlohmann::json(nullptr);
  j["weights"] = pg.near.weights;
  j["fidelity"] = u.report.unsup_fidelity;
  j["log_terms"] = {{"logvar_near", u.report.unsup_logvar_near},
                    {"logvar_far", u.report.unsup_logvar_far},
                    {"near_clamped", pg.near.variance < gpc.log_clamp},
                    {"far_clamped", pg.far_variance && 1.0 - *pg.far_variance < gpc.log_clamp},
                    {"log_clamp", gpc.log_clamp}};
  j["gp"] = to_json(gpc);
  return j;
}

inline int inspect_cmd(const InspectArgs& a, std::ostream& out) {
  const auto rec = load_checkpoint(a.model);
  const auto store = gp::load_latent_store(a.store);
  const auto img = image::load_image(a.query);
  const gp::GpConfig gpc = a.config.empty() ? gp::GpConfig{} : load_train_config(a.config).gp;
  out << inspect(store, rec.params, img, gpc, a.top).dump(2) << "\n";
  return kOk;
}

/// Parses argv and runs one command; never throws.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout) {
  CLI::App app{"GP latent-space semi-supervised deraining"};
  app.require_subcommand(1);

  GenDataArgs g;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic rainy/clean dataset");
  gen->add_option("--out", g.out, "Output directory")->required();
  gen->add_option("--count", g.count, "Number of base images")->required();
  gen->add_option("--size", g.size, "Image size HxW");
  gen->add_option("--fraction-labeled", g.fraction, "Fraction of images kept as labeled pairs");
  gen->add_option("--seed", g.seed, "Generation seed");
  gen->add_option("--regime", g.regime, "Rain regime for unlabeled and test images (labeled|shifted)");
  gen->add_option("--test-count", g.test_count, "Held-out test pairs to generate");

  TrainArgs t;
  auto* tr = app.add_subcommand("train", "Train a model");
  tr->add_option("--data", t.data, "Dataset directory")->required();
  tr->add_option("--config", t.config, "Training config JSON")->required();
  tr->add_option("--out", t.out, "Output directory")->required();
  tr->add_flag("--supervised-only", t.supervised_only, "Ignore unlabeled data (labeled-only baseline)");
  tr->add_option("--resume", t.resume, "Resume from a checkpoint");
  tr->add_option("--stop-after", t.stop_after, "Stop after this many completed epochs");

  EvalArgs e;
  auto* ev = app.add_subcommand("eval", "Evaluate a model checkpoint");
  ev->add_option("--model", e.model, "Checkpoint file")->required();
  ev->add_option("--data", e.data, "Dataset directory (test/ if present, else labeled/)")->required();
  ev->add_option("--out", e.out, "Output directory")->required();

  InspectArgs in;
  auto* gi = app.add_subcommand("gp-inspect", "Show GP neighbours and variances for a query image");
  gi->add_option("--store", in.store, "Latent store file")->required();
  gi->add_option("--query-image", in.query, "Query image (PGM/PPM)")->required();
  gi->add_option("--model", in.model, "Checkpoint file")->required();
  gi->add_option("--top", in.top, "Neighbours to list");
  gi->add_option("--config", in.config, "Training config supplying GP settings");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return gen_data(g);
    if (*tr) return train_cmd(t);
    if (*ev) return eval_cmd(e);
    if (*gi) return inspect_cmd(in, out);
  } catch (const Error& err) {
    std::cerr << err.what() << "\n";
    return exit_code_for(err.kind());
  } catch (const fs::filesystem_error& err) {
    std::cerr << "io error: " << err.what() << "\n";
    return kIo;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kNumeric;
  }
  return kUsage;
}

}  // namespace gpderain::cli
