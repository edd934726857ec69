#pragma once

// Supervised (l1 + perceptual), unsupervised (latent GP) and total losses.
// Each loss returns its value together with the gradient seed that the
// trainer feeds into the tape.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gpderain/autodiff.hpp"
#include "gpderain/error.hpp"
#include "gpderain/gp.hpp"
#include "gpderain/rng.hpp"
#include "gpderain/tensor.hpp"

namespace gpderain::losses {

/// Fixed random stand-in for a pretrained perceptual network:
/// conv3x3(C->8) -> relu -> avgpool2 -> conv3x3(8->8) -> relu.
class FeatureExtractor {
 public:
  static constexpr int kFilters = 8;

  FeatureExtractor(int channels, std::uint64_t seed) : seed_(seed) {
    build(channels);
    Rng rng(derive_seed(seed, 0x46454154ULL));
    for (auto* p : {&w1_, &w2_}) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(p->dims[1] * 9));
      for (double& v : p->value) v = uniform(rng, -bound, bound);
    }
  }

  /// Extractor whose filters and biases are all zero.
  static FeatureExtractor zeros(int channels) {
    FeatureExtractor fx(channels, 0);
    for (auto* p : {&fx.w1_, &fx.b1_, &fx.w2_, &fx.b2_}) std::fill(p->value.begin(), p->value.end(), 0.0);
    return fx;
  }

  std::uint64_t seed() const { return seed_; }

  ad::Var forward(ad::Tape& tape, ad::Var x) const {
    ad::Var h = ad::conv3x3(tape, x, w1_, b1_);
    h = ad::relu(tape, h);
    if (tape.value(h).shape.h % 2 == 0 && tape.value(h).shape.w % 2 == 0) h = ad::avg_pool2(tape, h);
    h = ad::conv3x3(tape, h, w2_, b2_);
    return ad::relu(tape, h);
  }

  Tensor features(const Tensor& x) const {
    ad::Tape tape;
    return tape.value(forward(tape, tape.input(x)));
  }

 private:
  void build(int channels) {
    const auto f = static_cast<std::size_t>(kFilters);
    w1_ = {"fx1.w", {f, static_cast<std::size_t>(channels), 3, 3}, std::vector<double>(f * channels * 9), false};
    b1_ = {"fx1.b", {f}, std::vector<double>(f, 0.0), false};
    w2_ = {"fx2.w", {f, f, 3, 3}, std::vector<double>(f * f * 9), false};
    b2_ = {"fx2.b", {f}, std::vector<double>(f, 0.0), false};
  }

  std::uint64_t seed_;
  ad::Parameter w1_, b1_, w2_, b2_;
};

struct LossReport {
  double l1 = 0.0;
  double perceptual = 0.0;
  double unsup_fidelity = 0.0;
  double unsup_logvar_near = 0.0;
  double unsup_logvar_far = 0.0;
  /// l1 + lambda_p * perceptual
  double sup = 0.0;
  /// fidelity + logvar_near + logvar_far
  double unsup = 0.0;
  double lambda_p = 0.0;
  double lambda_unsup = 0.0;
  /// sup + lambda_unsup * unsup
  double total = 0.0;
  /// Number of log arguments that were floored at log_clamp.
  std::int64_t clamped_count = 0;
};

struct ValueAndSeed {
  double value = 0.0;
  std::vector<double> seed;
};

/// Mean absolute difference; seed is sign(pred - target) / n.
inline ValueAndSeed l1_loss(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "l1_loss");
  const double n = static_cast<double>(pred.size());
  ValueAndSeed out;
  out.seed.resize(pred.size());
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred.values[i] - target.values[i];
    s += std::abs(d);
    out.seed[i] = (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) / n;
  }
  out.value = s / n;
  return out;
}

/// Mean squared difference of extractor features. `seed` targets the
/// returned `features` node, so gradient flows through the extractor into pred.
struct PerceptualTerm {
  double value = 0.0;
  ad::Var features;
  std::vector<double> seed;
};

inline PerceptualTerm perceptual_loss(ad::Tape& tape, ad::Var pred, const Tensor& target, const FeatureExtractor& fx) {
  require_same_shape(tape.value(pred), target, "perceptual_loss");
  PerceptualTerm out;
  out.features = fx.forward(tape, pred);
  const Tensor target_features = fx.features(target);
  const auto& pf = tape.value(out.features).values;
  const double n = static_cast<double>(pf.size());
  out.seed.resize(pf.size());
  double s = 0.0;
  for (std::size_t i = 0; i < pf.size(); ++i) {
    const double d = pf[i] - target_features.values[i];
    s += d * d;
    out.seed[i] = 2.0 * d / n;
  }
  out.value = s / n;
  return out;
}

inline double perceptual_loss(const Tensor& pred, const Tensor& target, const FeatureExtractor& fx) {
  ad::Tape tape;
  return perceptual_loss(tape, tape.input(pred), target, fx).value;
}

inline void validate_lambda(double lambda, const char* what) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) fail(ErrorKind::Config, std::string(what) + " must be >= 0");
}

/// L_sup = L1 + lambda_p * Lp.
inline LossReport sup_loss(const Tensor& pred, const Tensor& target, const FeatureExtractor& fx, double lambda_p) {
  validate_lambda(lambda_p, "lambda_p");
  LossReport r;
  r.l1 = l1_loss(pred, target).value;
  r.perceptual = perceptual_loss(pred, target, fx);
  r.lambda_p = lambda_p;
  r.sup = r.l1 + lambda_p * r.perceptual;
  r.total = r.sup;
  return r;
}

/// Supervised objective recorded on a tape, with seeds for backward.
struct SupervisedObjective {
  LossReport report;
  std::vector<ad::Seed> seeds;
};

inline SupervisedObjective sup_objective(ad::Tape& tape, ad::Var pred, const Tensor& target,
                                         const FeatureExtractor& fx, double lambda_p, double scale = 1.0) {
  validate_lambda(lambda_p, "lambda_p");
  SupervisedObjective out;
  auto l1 = l1_loss(tape.value(pred), target);
  out.report.l1 = l1.value;
  out.report.lambda_p = lambda_p;
  for (double& g : l1.seed) g *= scale;
  out.seeds.push_back({pred, std::move(l1.seed)});
  if (lambda_p > 0.0) {
    auto p = perceptual_loss(tape, pred, target, fx);
    out.report.perceptual = p.value;
    for (double& g : p.seed) g *= lambda_p * scale;
    out.seeds.push_back({p.features, std::move(p.seed)});
  } else {
    out.report.perceptual = perceptual_loss(tape.value(pred), target, fx);
  }
  out.report.sup = out.report.l1 + lambda_p * out.report.perceptual;
  out.report.total = out.report.sup;
  return out;
}

struct UnsupervisedTerm {
  LossReport report;
  /// d(unsup)/d(z_pred) of the fidelity term; the pseudo ground truth is a constant.
  std::vector<double> z_seed;
};

/// ||z - mu||_2 + ln max(S_near, c) + ln max(1 - S_far, c). The far term is
/// skipped when `far_variance` is empty.
inline UnsupervisedTerm unsup_loss(std::span<const double> z_pred, const gp::GpPosterior& near,
                                   std::optional<double> far_variance, const gp::GpConfig& cfg) {
  if (z_pred.size() != near.mean.size())
    fail(ErrorKind::Shape, "latent length " + std::to_string(z_pred.size()) + " vs pseudo ground truth length " +
                               std::to_string(near.mean.size()));
  if (!std::isfinite(near.variance) || (far_variance && !std::isfinite(*far_variance)))
    fail(ErrorKind::Numeric, "non-finite posterior variance");
  UnsupervisedTerm out;
  out.z_seed.resize(z_pred.size());
  double sq = 0.0;
  for (std::size_t i = 0; i < z_pred.size(); ++i) {
    if (!std::isfinite(z_pred[i]) || !std::isfinite(near.mean[i])) fail(ErrorKind::Numeric, "non-finite latent entry");
    const double d = z_pred[i] - near.mean[i];
    out.z_seed[i] = d;
    sq += d * d;
  }
  const double norm = std::sqrt(sq);
  if (norm < 1e-12) {
    std::fill(out.z_seed.begin(), out.z_seed.end(), 0.0);
  } else {
    for (double& g : out.z_seed) g /= norm;
  }
  auto& r = out.report;
  r.unsup_fidelity = norm;
  if (near.variance < cfg.log_clamp) ++r.clamped_count;
  r.unsup_logvar_near = std::log(std::max(near.variance, cfg.log_clamp));
  if (far_variance) {
    const double arg = 1.0 - *far_variance;
    if (arg < cfg.log_clamp) ++r.clamped_count;
    r.unsup_logvar_far = std::log(std::max(arg, cfg.log_clamp));
  }
  r.unsup = r.unsup_fidelity + r.unsup_logvar_near + r.unsup_logvar_far;
  r.total = r.unsup;
  return out;
}

/// L_total = L_sup + lambda_unsup * L_unsup.
inline LossReport total_loss(const LossReport& sup, const LossReport& unsup, double lambda_unsup) {
  validate_lambda(lambda_unsup, "lambda_unsup");
  LossReport r;
  r.l1 = sup.l1;
  r.perceptual = sup.perceptual;
  r.lambda_p = sup.lambda_p;
  r.sup = sup.sup;
  r.unsup_fidelity = unsup.unsup_fidelity;
  r.unsup_logvar_near = unsup.unsup_logvar_near;
  r.unsup_logvar_far = unsup.unsup_logvar_far;
  r.unsup = unsup.unsup;
  r.lambda_unsup = lambda_unsup;
  r.total = r.sup + lambda_unsup * r.unsup;
  r.clamped_count = sup.clamped_count + unsup.clamped_count;
  return r;
}

/// Field-wise mean over a batch; clamp counts are summed and the composite
/// terms recomputed from the averaged parts.
inline LossReport batch_mean(std::span<const LossReport> reports) {
  LossReport r;
  if (reports.empty()) return r;
  const double n = static_cast<double>(reports.size());
  for (const auto& x : reports) {
    r.l1 += x.l1;
    r.perceptual += x.perceptual;
    r.unsup_fidelity += x.unsup_fidelity;
    r.unsup_logvar_near += x.unsup_logvar_near;
    r.unsup_logvar_far += x.unsup_logvar_far;
    r.clamped_count += x.clamped_count;
  }
  r.l1 /= n;
  r.perceptual /= n;
  r.unsup_fidelity /= n;
  r.unsup_logvar_near /= n;
  r.unsup_logvar_far /= n;
  r.lambda_p = reports.front().lambda_p;
  r.lambda_unsup = reports.front().lambda_unsup;
  r.sup = r.l1 + r.lambda_p * r.perceptual;
  r.unsup = r.unsup_fidelity + r.unsup_logvar_near + r.unsup_logvar_far;
  r.total = r.sup + r.lambda_unsup * r.unsup;
  return r;
}

inline constexpr const char* kMetricsCsvHeader =
    "step,phase,l1,perceptual,unsup_fidelity,logvar_near,logvar_far,total,clamped_count";

inline std::string csv_row(std::int64_t step, const std::string& phase, const LossReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%lld,%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%lld", static_cast<long long>(step),
                phase.c_str(), r.l1, r.perceptual, r.unsup_fidelity, r.unsup_logvar_near, r.unsup_logvar_far, r.total,
                static_cast<long long>(r.clamped_count));
  return buf;
}

}  // namespace gpderain::losses
