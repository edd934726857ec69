#pragma once

// Training configuration and its JSON form. Parsing is strict: unknown keys
// are rejected so a typo cannot silently fall back to a default.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "gpderain/binary_io.hpp"
#include "gpderain/error.hpp"
#include "gpderain/gp.hpp"
#include "gpderain/model.hpp"

namespace gpderain {

struct TrainConfig {
  double lr = 2e-4;
  int batch_size = 4;
  int epochs = 60;
  double lr_decay_factor = 0.5;
  int lr_decay_every = 25;
  double lambda_p = 0.04;
  double lambda_unsup = 1.5e-4;
  gp::GpConfig gp{};
  model::ModelConfig model{};
  int crop_size = 32;
  /// Drives shuffling and cropping.
  std::uint64_t seed = 0;
  /// Seed of the fixed perceptual feature extractor.
  std::uint64_t feature_seed = 7;
  std::string store_refresh = "per-labeled-epoch";
  /// Write an epoch checkpoint every k epochs; 0 writes only the final one.
  int checkpoint_every = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const {
    if (!(lr >= 0.0)) fail(ErrorKind::Config, "lr must be >= 0");
    if (batch_size < 1) fail(ErrorKind::Config, "batch_size must be >= 1");
    if (epochs < 1) fail(ErrorKind::Config, "epochs must be >= 1");
    if (!(lr_decay_factor > 0.0)) fail(ErrorKind::Config, "lr_decay_factor must be > 0");
    if (lr_decay_every < 1) fail(ErrorKind::Config, "lr_decay_every must be >= 1");
    if (!(lambda_p >= 0.0)) fail(ErrorKind::Config, "lambda_p must be >= 0");
    if (!(lambda_unsup >= 0.0)) fail(ErrorKind::Config, "lambda_unsup must be >= 0");
    gp.validate();
    model.validate();
    if (crop_size != model.patch_size) fail(ErrorKind::Config, "crop_size must equal model.patch_size");
    if (store_refresh != "per-labeled-epoch") fail(ErrorKind::Config, "store_refresh must be 'per-labeled-epoch'");
    if (checkpoint_every < 0) fail(ErrorKind::Config, "checkpoint_every must be >= 0");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0 && adam_eps > 0.0))
      fail(ErrorKind::Config, "invalid Adam constants");
  }
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const char* where) {
  if (!j.is_object()) fail(ErrorKind::Config, std::string(where) + " must be a JSON object");
  std::set<std::string> k(known.begin(), known.end());
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!k.count(it.key())) fail(ErrorKind::Config, std::string("unknown key '") + it.key() + "' in " + where);
}

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Config, std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace detail

inline nlohmann::json to_json(const gp::GpConfig& g) {
  return {{"sigma_eps_sq", g.sigma_eps_sq},
          {"n_nearest", g.n_nearest},
          {"n_farthest", g.n_farthest},
          {"log_clamp", g.log_clamp}};
}

inline gp::GpConfig gp_config_from_json(const nlohmann::json& j) {
  detail::reject_unknown(j, {"sigma_eps_sq", "n_nearest", "n_farthest", "log_clamp"}, "gp");
  gp::GpConfig g;
  detail::read_opt(j, "sigma_eps_sq", g.sigma_eps_sq);
  detail::read_opt(j, "n_nearest", g.n_nearest);
  detail::read_opt(j, "n_farthest", g.n_farthest);
  detail::read_opt(j, "log_clamp", g.log_clamp);
  return g;
}

inline nlohmann::json to_json(const model::ModelConfig& m) {
  return {{"patch_size", m.patch_size}, {"channels", m.channels},
          {"widths", m.widths},         {"latent_dim", m.latent_dim},
          {"activation", model::to_string(m.activation)}, {"seed", m.seed}};
}

inline model::ModelConfig model_config_from_json(const nlohmann::json& j) {
  detail::reject_unknown(j, {"patch_size", "channels", "widths", "latent_dim", "activation", "seed"}, "model");
  model::ModelConfig m;
  detail::read_opt(j, "patch_size", m.patch_size);
  detail::read_opt(j, "channels", m.channels);
  detail::read_opt(j, "widths", m.widths);
  detail::read_opt(j, "latent_dim", m.latent_dim);
  std::string act = model::to_string(m.activation);
  detail::read_opt(j, "activation", act);
  m.activation = model::parse_activation(act);
  detail::read_opt(j, "seed", m.seed);
  return m;
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"lr_decay_factor", c.lr_decay_factor},
          {"lr_decay_every", c.lr_decay_every},
          {"lambda_p", c.lambda_p},
          {"lambda_unsup", c.lambda_unsup},
          {"gp", to_json(c.gp)},
          {"model", to_json(c.model)},
          {"crop_size", c.crop_size},
          {"seed", c.seed},
          {"feature_seed", c.feature_seed},
          {"store_refresh", c.store_refresh},
          {"checkpoint_every", c.checkpoint_every},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_eps", c.adam_eps}};
}

/// Missing keys keep their defaults; the result is validated.
inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  detail::reject_unknown(j,
                         {"lr", "batch_size", "epochs", "lr_decay_factor", "lr_decay_every", "lambda_p",
                          "lambda_unsup", "gp", "model", "crop_size", "seed", "feature_seed", "store_refresh",
                          "checkpoint_every", "adam_beta1", "adam_beta2", "adam_eps"},
                         "config");
  TrainConfig c;
  detail::read_opt(j, "lr", c.lr);
  detail::read_opt(j, "batch_size", c.batch_size);
  detail::read_opt(j, "epochs", c.epochs);
  detail::read_opt(j, "lr_decay_factor", c.lr_decay_factor);
  detail::read_opt(j, "lr_decay_every", c.lr_decay_every);
  detail::read_opt(j, "lambda_p", c.lambda_p);
  detail::read_opt(j, "lambda_unsup", c.lambda_unsup);
  if (j.contains("gp")) c.gp = gp_config_from_json(j.at("gp"));
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
  detail::read_opt(j, "crop_size", c.crop_size);
  detail::read_opt(j, "seed", c.seed);
  detail::read_opt(j, "feature_seed", c.feature_seed);
  detail::read_opt(j, "store_refresh", c.store_refresh);
  detail::read_opt(j, "checkpoint_every", c.checkpoint_every);
  detail::read_opt(j, "adam_beta1", c.adam_beta1);
  detail::read_opt(j, "adam_beta2", c.adam_beta2);
  detail::read_opt(j, "adam_eps", c.adam_eps);
  c.validate();
  return c;
}

inline std::uint64_t config_hash(const TrainConfig& c) { return binio::fnv1a(to_json(c).dump()); }

inline TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Config, "config " + path.string() + " is not valid JSON: " + e.what());
  }
  return train_config_from_json(j);
}

inline void save_train_config(const TrainConfig& c, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << to_json(c).dump(2) << "\n";
}

}  // namespace gpderain
