#pragma once

// Small U-shaped encoder-decoder that predicts an additive rain residual.
// Encoder: blocks of [conv3x3 -> activation -> 2x avg-pool], then a dense
// layer to the flat latent vector (pre-activation). Decoder: dense back to the
// bottleneck grid, then per block [2x upsample -> concat skip -> conv3x3 ->
// activation], and a final conv3x3 to the output channels.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gpderain/autodiff.hpp"
#include "gpderain/error.hpp"
#include "gpderain/rng.hpp"
#include "gpderain/tensor.hpp"

namespace gpderain::model {

enum class Activation : std::uint32_t { Relu = 0, Identity = 1 };

inline const char* to_string(Activation a) { return a == Activation::Relu ? "relu" : "identity"; }

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::Relu;
  if (s == "identity") return Activation::Identity;
  fail(ErrorKind::Config, "unknown activation '" + s + "'");
}

struct ModelConfig {
  int patch_size = 32;
  int channels = 1;
  std::vector<int> widths{8, 16, 32};
  int latent_dim = 128;
  Activation activation = Activation::Relu;
  std::uint64_t seed = 1;

  int downsample_factor() const { return 1 << widths.size(); }
  int bottleneck_side() const { return patch_size / downsample_factor(); }
  std::size_t bottleneck_size() const {
    const auto s = static_cast<std::size_t>(bottleneck_side());
    return static_cast<std::size_t>(widths.back()) * s * s;
  }
  Shape input_shape() const { return {channels, patch_size, patch_size}; }

  bool operator==(const ModelConfig&) const = default;

  void validate() const {
    if (latent_dim <= 0) fail(ErrorKind::Config, "latent_dim must be > 0");
    if (channels <= 0) fail(ErrorKind::Config, "channels must be > 0");
    if (widths.empty() || widths.size() > 8) fail(ErrorKind::Config, "widths must list 1..8 encoder blocks");
    for (int w : widths)
      if (w <= 0) fail(ErrorKind::Config, "encoder widths must be > 0");
    if (patch_size <= 0 || patch_size % downsample_factor() != 0)
      fail(ErrorKind::Config, "patch_size " + std::to_string(patch_size) + " is not divisible by downsampling factor " +
                                  std::to_string(downsample_factor()));
  }
};

/// Model parameters in a fixed creation order.
struct ParamSet {
  ModelConfig config;
  std::vector<ad::Parameter> params;

  const ad::Parameter& get(const std::string& name) const {
    for (const auto& p : params)
      if (p.name == name) return p;
    fail(ErrorKind::Shape, "no parameter named " + name);
  }
  ad::Parameter& get(const std::string& name) {
    return const_cast<ad::Parameter&>(static_cast<const ParamSet&>(*this).get(name));
  }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.size();
    return n;
  }

  bool all_finite() const {
    for (const auto& p : params)
      for (double v : p.value)
        if (!std::isfinite(v)) return false;
    return true;
  }
};

inline bool is_encoder_param(const std::string& name) { return name.rfind("enc", 0) == 0; }

/// Per-parameter gradients aligned with ParamSet::params.
struct Gradients {
  std::vector<std::vector<double>> values;

  static Gradients zeros_like(const ParamSet& ps) {
    Gradients g;
    for (const auto& p : ps.params) g.values.emplace_back(p.size(), 0.0);
    return g;
  }
};

namespace detail {

inline ad::Parameter make_param(std::string name, std::vector<std::size_t> dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return ad::Parameter{std::move(name), std::move(dims), std::vector<double>(n, 0.0), true};
}

inline int decoder_out_width(const ModelConfig& cfg, std::size_t block) {
  return cfg.widths[block == 0 ? 0 : block - 1];
}

}  // namespace detail

/// Creates the parameter layout with all values zero.
inline ParamSet make_param_layout(const ModelConfig& cfg) {
  cfg.validate();
  using detail::make_param;
  ParamSet ps;
  ps.config = cfg;
  const auto nb = cfg.widths.size();
  int cin = cfg.channels;
  for (std::size_t i = 0; i < nb; ++i) {
    const auto w = static_cast<std::size_t>(cfg.widths[i]);
    ps.params.push_back(make_param("enc" + std::to_string(i) + ".conv.w", {w, static_cast<std::size_t>(cin), 3, 3}));
    ps.params.push_back(make_param("enc" + std::to_string(i) + ".conv.b", {w}));
    cin = cfg.widths[i];
  }
  const auto m = static_cast<std::size_t>(cfg.latent_dim);
  const auto bn = cfg.bottleneck_size();
  ps.params.push_back(make_param("enc.latent.w", {m, bn}));
  ps.params.push_back(make_param("enc.latent.b", {m}));
  ps.params.push_back(make_param("dec.latent.w", {bn, m}));
  ps.params.push_back(make_param("dec.latent.b", {bn}));
  int up_channels = cfg.widths.back();
  for (std::size_t i = nb; i-- > 0;) {
    const auto in = static_cast<std::size_t>(up_channels + cfg.widths[i]);
    const auto out = static_cast<std::size_t>(detail::decoder_out_width(cfg, i));
    ps.params.push_back(make_param("dec" + std::to_string(i) + ".conv.w", {out, in, 3, 3}));
    ps.params.push_back(make_param("dec" + std::to_string(i) + ".conv.b", {out}));
    up_channels = static_cast<int>(out);
  }
  ps.params.push_back(
      make_param("out.conv.w", {static_cast<std::size_t>(cfg.channels), static_cast<std::size_t>(up_channels), 3, 3}));
  ps.params.push_back(make_param("out.conv.b", {static_cast<std::size_t>(cfg.channels)}));
  return ps;
}

/// Weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero.
inline ParamSet init_params(const ModelConfig& cfg) {
  ParamSet ps = make_param_layout(cfg);
  Rng rng(derive_seed(cfg.seed, 0x5041524dULL));
  for (auto& p : ps.params) {
    if (p.dims.size() == 1) continue;
    std::size_t fan_in = 1;
    for (std::size_t d = 1; d < p.dims.size(); ++d) fan_in *= p.dims[d];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : p.value) v = uniform(rng, -bound, bound);
  }
  return ps;
}

struct EncoderOutput {
  ad::Var latent;
  /// Post-activation block outputs before pooling, shallowest first.
  std::vector<ad::Var> skips;
};

namespace detail {

inline ad::Var activate(ad::Tape& tape, ad::Var x, Activation a) {
  return a == Activation::Relu ? ad::relu(tape, x) : x;
}

inline void check_finite(const ad::Tape& tape, ad::Var v, const std::string& layer) {
  if (!tape.value(v).all_finite()) fail(ErrorKind::Numeric, "non-finite activation in layer " + layer);
}

}  // namespace detail

/// z = h(x); the latent is the dense bottleneck output before any activation.
inline EncoderOutput encoder_forward(ad::Tape& tape, ad::Var x, const ParamSet& ps) {
  const auto& cfg = ps.config;
  if (tape.value(x).shape != cfg.input_shape())
    fail(ErrorKind::Shape, "encoder input shape " + tape.value(x).shape.str() + ", expected " + cfg.input_shape().str());
  EncoderOutput out;
  ad::Var h = x;
  for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
    const std::string name = "enc" + std::to_string(i);
    h = ad::conv3x3(tape, h, ps.get(name + ".conv.w"), ps.get(name + ".conv.b"));
    detail::check_finite(tape, h, name);
    h = detail::activate(tape, h, cfg.activation);
    out.skips.push_back(h);
    h = ad::avg_pool2(tape, h);
  }
  out.latent = ad::dense(tape, h, ps.get("enc.latent.w"), ps.get("enc.latent.b"));
  detail::check_finite(tape, out.latent, "enc.latent");
  return out;
}

inline EncoderOutput encoder_forward(ad::Tape& tape, const Tensor& x, const ParamSet& ps) {
  return encoder_forward(tape, tape.input(x), ps);
}

/// r = g(z) using the encoder's skip activations.
inline ad::Var decoder_forward(ad::Tape& tape, ad::Var z, std::span<const ad::Var> skips, const ParamSet& ps) {
  const auto& cfg = ps.config;
  if (tape.value(z).size() != static_cast<std::size_t>(cfg.latent_dim))
    fail(ErrorKind::Shape, "decoder latent length " + std::to_string(tape.value(z).size()) + ", expected " +
                               std::to_string(cfg.latent_dim));
  if (skips.size() != cfg.widths.size()) fail(ErrorKind::Shape, "decoder needs one skip per encoder block");
  const int side = cfg.bottleneck_side();
  ad::Var h = ad::dense(tape, z, ps.get("dec.latent.w"), ps.get("dec.latent.b"));
  detail::check_finite(tape, h, "dec.latent");
  h = detail::activate(tape, h, cfg.activation);
  h = ad::reshape(tape, h, Shape{cfg.widths.back(), side, side});
  for (std::size_t i = cfg.widths.size(); i-- > 0;) {
    const std::string name = "dec" + std::to_string(i);
    h = ad::upsample2(tape, h);
    h = ad::concat(tape, h, skips[i]);
    h = ad::conv3x3(tape, h, ps.get(name + ".conv.w"), ps.get(name + ".conv.b"));
    detail::check_finite(tape, h, name);
    h = detail::activate(tape, h, cfg.activation);
  }
  h = ad::conv3x3(tape, h, ps.get("out.conv.w"), ps.get("out.conv.b"));
  detail::check_finite(tape, h, "out");
  return h;
}

struct ForwardResult {
  ad::Var input;
  EncoderOutput encoded;
  ad::Var residual;
  /// x - r, unclipped.
  ad::Var estimate;
};

inline ForwardResult forward(ad::Tape& tape, const Tensor& x, const ParamSet& ps) {
  ForwardResult r;
  r.input = tape.input(x);
  r.encoded = encoder_forward(tape, r.input, ps);
  r.residual = decoder_forward(tape, r.encoded.latent, r.encoded.skips, ps);
  r.estimate = ad::sub(tape, r.input, r.residual);
  return r;
}

inline Tensor clip01(Tensor t) {
  for (double& v : t.values) v = std::clamp(v, 0.0, 1.0);
  return t;
}

/// Clean estimate x - g(h(x)), clipped to [0, 1] for emission.
inline Tensor derain(const Tensor& x, const ParamSet& ps) {
  ad::Tape tape;
  const auto r = forward(tape, x, ps);
  return clip01(tape.value(r.estimate));
}

inline std::vector<double> encode(const Tensor& x, const ParamSet& ps) {
  ad::Tape tape;
  const auto e = encoder_forward(tape, x, ps);
  return tape.value(e.latent).values;
}

/// Runs the tape backward from `seeds` and returns parameter gradients.
inline Gradients backward(ad::Tape& tape, std::span<const ad::Seed> seeds, const ParamSet& ps) {
  tape.backward(seeds);
  Gradients g = Gradients::zeros_like(ps);
  for (std::size_t i = 0; i < ps.params.size(); ++i)
    if (const auto* pg = tape.find_param_grad(ps.params[i])) g.values[i] = *pg;
  return g;
}

/// Adds tape gradients scaled by `scale` into `acc`.
inline void accumulate(Gradients& acc, const ad::Tape& tape, const ParamSet& ps, double scale = 1.0) {
  for (std::size_t i = 0; i < ps.params.size(); ++i) {
    const auto* pg = tape.find_param_grad(ps.params[i]);
    if (!pg) continue;
    auto& dst = acc.values[i];
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += scale * (*pg)[j];
  }
}

}  // namespace gpderain::model
