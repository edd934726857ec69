#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gpderain/error.hpp"
#include "gpderain/model.hpp"

namespace gpderain::optim {

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_params(const model::ParamSet& ps, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
    AdamState s;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.eps = eps;
    for (const auto& p : ps.params) {
      s.m.emplace_back(p.size(), 0.0);
      s.v.emplace_back(p.size(), 0.0);
    }
    return s;
  }
};

/// Which parameters an update touches; empty means all.
using ParamFilter = std::function<bool(const std::string& name)>;

/// Bias-corrected Adam. Gradients are validated before anything is written, so a
/// non-finite gradient leaves parameters and state untouched. The step counter
/// advances once per call, including for parameters excluded by `filter`.
inline void adam_step(model::ParamSet& ps, const model::Gradients& grads, AdamState& st, double lr,
                      const ParamFilter& filter = {}) {
  if (grads.values.size() != ps.params.size() || st.m.size() != ps.params.size() || st.v.size() != ps.params.size())
    fail(ErrorKind::Shape, "adam_step: parameter, gradient and moment counts disagree");
  for (std::size_t i = 0; i < ps.params.size(); ++i) {
    const auto n = ps.params[i].size();
    if (grads.values[i].size() != n || st.m[i].size() != n || st.v[i].size() != n)
      fail(ErrorKind::Shape, "adam_step: shape mismatch for " + ps.params[i].name);
    for (double g : grads.values[i])
      if (!std::isfinite(g)) fail(ErrorKind::Numeric, "non-finite gradient for " + ps.params[i].name);
  }
  st.t += 1;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
  for (std::size_t i = 0; i < ps.params.size(); ++i) {
    auto& p = ps.params[i];
    if (filter && !filter(p.name)) continue;
    auto& m = st.m[i];
    auto& v = st.v[i];
    const auto& g = grads.values[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = st.beta1 * m[j] + (1.0 - st.beta1) * g[j];
      v[j] = st.beta2 * v[j] + (1.0 - st.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p.value[j] -= lr * mhat / (std::sqrt(vhat) + st.eps);
    }
  }
}

/// Step decay: base * factor^floor(epoch / every).
inline double lr_at(std::int64_t epoch, double base_lr, double decay_factor, std::int64_t decay_every) {
  if (epoch < 0) fail(ErrorKind::Config, "epoch must be >= 0");
  if (decay_every <= 0) return base_lr;
  return base_lr * std::pow(decay_factor, static_cast<double>(epoch / decay_every));
}

}  // namespace gpderain::optim
