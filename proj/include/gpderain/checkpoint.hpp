#pragma once

// Checkpoint file, little-endian:
//   "S2RC" | version u32 | seed u64
//   patch u32 | channels u32 | activation u32 | latent u32 | n_widths u32 | widths u32[n]
//   n_params u32 | per param: name (u32 len + bytes), n_dims u32, dims u64[], values f64[]
//   has_state u8 | if set: config_hash u64, epoch u64, step u64, adam t u64,
//     beta1 f64, beta2 f64, eps f64, per param m f64[] then v f64[], rng state string

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>

#include "gpderain/binary_io.hpp"
#include "gpderain/error.hpp"
#include "gpderain/model.hpp"
#include "gpderain/optim.hpp"

namespace gpderain {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TrainingState {
  optim::AdamState adam;
  /// Number of completed epochs.
  std::uint64_t epoch = 0;
  std::uint64_t step = 0;
  std::string rng_state;
  std::uint64_t config_hash = 0;
};

struct CheckpointRecord {
  model::ParamSet params;
  std::optional<TrainingState> state;
};

inline void write_checkpoint(std::ostream& out, const CheckpointRecord& rec) {
  using namespace binio;
  const auto& cfg = rec.params.config;
  out.write("S2RC", 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, cfg.seed);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.patch_size));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.channels));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.activation));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.latent_dim));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.widths.size()));
  for (int w : cfg.widths) put<std::uint32_t>(out, static_cast<std::uint32_t>(w));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(rec.params.params.size()));
  for (const auto& p : rec.params.params) {
    put_string(out, p.name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.dims.size()));
    for (auto d : p.dims) put<std::uint64_t>(out, d);
    put_doubles(out, p.value);
  }
  put<std::uint8_t>(out, rec.state ? 1 : 0);
  if (rec.state) {
    const auto& s = *rec.state;
    put<std::uint64_t>(out, s.config_hash);
    put<std::uint64_t>(out, s.epoch);
    put<std::uint64_t>(out, s.step);
    put<std::uint64_t>(out, s.adam.t);
    put<double>(out, s.adam.beta1);
    put<double>(out, s.adam.beta2);
    put<double>(out, s.adam.eps);
    for (std::size_t i = 0; i < rec.params.params.size(); ++i) {
      put_doubles(out, s.adam.m.at(i));
      put_doubles(out, s.adam.v.at(i));
    }
    put_string(out, s.rng_state);
  }
}

/// Reads a checkpoint and checks that its parameter blobs match the topology
/// implied by its own model config.
inline CheckpointRecord read_checkpoint(std::istream& in) {
  using namespace binio;
  expect_magic(in, "S2RC", "checkpoint");
  const auto version = get<std::uint32_t>(in, "checkpoint version");
  if (version != kCheckpointVersion) fail(ErrorKind::Format, "unsupported checkpoint version " + std::to_string(version));
  model::ModelConfig cfg;
  cfg.seed = get<std::uint64_t>(in, "seed");
  cfg.patch_size = static_cast<int>(get<std::uint32_t>(in, "patch size"));
  cfg.channels = static_cast<int>(get<std::uint32_t>(in, "channels"));
  const auto act = get<std::uint32_t>(in, "activation");
  if (act > 1) fail(ErrorKind::Format, "unknown activation code " + std::to_string(act));
  cfg.activation = static_cast<model::Activation>(act);
  cfg.latent_dim = static_cast<int>(get<std::uint32_t>(in, "latent dim"));
  const auto nw = get<std::uint32_t>(in, "width count");
  if (nw == 0 || nw > 8) fail(ErrorKind::Format, "implausible encoder block count " + std::to_string(nw));
  cfg.widths.resize(nw);
  for (auto& w : cfg.widths) w = static_cast<int>(get<std::uint32_t>(in, "widths"));
  try {
    cfg.validate();
  } catch (const Error& e) {
    fail(ErrorKind::Compatibility, "checkpoint model config invalid: " + e.detail());
  }

  CheckpointRecord rec;
  rec.params = model::make_param_layout(cfg);
  const auto np = get<std::uint32_t>(in, "parameter count");
  if (np != rec.params.params.size())
    fail(ErrorKind::Compatibility, "checkpoint has " + std::to_string(np) + " parameters, topology needs " +
                                       std::to_string(rec.params.params.size()));
  for (auto& p : rec.params.params) {
    const auto name = get_string(in, "parameter name", 256);
    if (name != p.name) fail(ErrorKind::Compatibility, "checkpoint parameter '" + name + "' where '" + p.name + "' expected");
    const auto nd = get<std::uint32_t>(in, "dim count");
    if (nd != p.dims.size()) fail(ErrorKind::Compatibility, "rank mismatch for " + p.name);
    for (auto d : p.dims)
      if (get<std::uint64_t>(in, "dims") != d) fail(ErrorKind::Compatibility, "dims mismatch for " + p.name);
    p.value = get_doubles(in, p.size(), "parameter values");
  }
  if (!rec.params.all_finite()) fail(ErrorKind::Format, "checkpoint holds non-finite parameters");
  const auto has_state = get<std::uint8_t>(in, "state flag");
  if (has_state > 1) fail(ErrorKind::Format, "bad state flag");
  if (has_state) {
    TrainingState s;
    s.config_hash = get<std::uint64_t>(in, "config hash");
    s.epoch = get<std::uint64_t>(in, "epoch");
    s.step = get<std::uint64_t>(in, "step");
    s.adam.t = get<std::uint64_t>(in, "adam step");
    s.adam.beta1 = get<double>(in, "beta1");
    s.adam.beta2 = get<double>(in, "beta2");
    s.adam.eps = get<double>(in, "eps");
    for (const auto& p : rec.params.params) {
      s.adam.m.push_back(get_doubles(in, p.size(), "adam m"));
      s.adam.v.push_back(get_doubles(in, p.size(), "adam v"));
    }
    s.rng_state = get_string(in, "rng state", 1u << 16);
    rec.state = std::move(s);
  }
  return rec;
}

inline void save_checkpoint(const std::filesystem::path& path, const CheckpointRecord& rec) {
  // Write-then-rename: `path` only ever holds a complete checkpoint.
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) fail(ErrorKind::Io, "cannot open " + tmp.string() + " for writing");
    write_checkpoint(out, rec);
    if (!out) fail(ErrorKind::Io, "failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline CheckpointRecord load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

/// As load_checkpoint, additionally requiring the stored topology to equal `expected`.
inline CheckpointRecord load_checkpoint(const std::filesystem::path& path, const model::ModelConfig& expected) {
  auto rec = load_checkpoint(path);
  const auto& got = rec.params.config;
  if (got.patch_size != expected.patch_size || got.channels != expected.channels || got.widths != expected.widths ||
      got.latent_dim != expected.latent_dim || got.activation != expected.activation)
    fail(ErrorKind::Compatibility, "checkpoint " + path.string() + " has a different model topology");
  return rec;
}

inline std::uint64_t checkpoint_hash(const CheckpointRecord& rec) {
  std::ostringstream out;
  write_checkpoint(out, rec);
  return binio::fnv1a(out.str());
}

}  // namespace gpderain
