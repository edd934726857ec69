#pragma once

// Cosine-kernel Gaussian-process conditioning over a store of labeled latent
// vectors. An unlabeled latent is expressed through its nearest labeled
// neighbours; the posterior mean serves as its pseudo ground truth and the
// posterior variances over the nearest and farthest sets feed the
// unsupervised loss.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "gpderain/error.hpp"

namespace gpderain::gp {

struct LatentVector {
  std::vector<double> values;
  std::string source_id;

  std::size_t size() const { return values.size(); }
};

/// Labeled latents collected during one labeled pass. Immutable between refreshes.
struct LatentStore {
  std::vector<LatentVector> rows;
  std::int64_t epoch_tag = -1;

  std::size_t size() const { return rows.size(); }
  bool empty() const { return rows.empty(); }
  std::size_t dim() const { return rows.empty() ? 0 : rows.front().size(); }

  void validate() const {
    if (rows.empty()) fail(ErrorKind::Shape, "latent store is empty");
    const std::size_t m = rows.front().size();
    if (m == 0) fail(ErrorKind::Shape, "latent store rows have zero length");
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != m)
        fail(ErrorKind::Shape, "latent store row " + std::to_string(i) + " has length " +
                                   std::to_string(rows[i].size()) + ", expected " + std::to_string(m));
    }
  }
};

enum class NeighborKind { Nearest, Farthest };

struct NeighborSet {
  std::vector<std::size_t> indices;
  std::vector<double> similarities;
  NeighborKind kind = NeighborKind::Nearest;

  std::size_t size() const { return indices.size(); }
};

struct GpConfig {
  double sigma_eps_sq = 1.0;
  std::size_t n_nearest = 64;
  std::size_t n_farthest = 64;
  double log_clamp = 1e-6;

  void validate() const {
    if (!(sigma_eps_sq > 0.0) || !std::isfinite(sigma_eps_sq)) fail(ErrorKind::Config, "sigma_eps_sq must be > 0");
    if (n_nearest < 1) fail(ErrorKind::Config, "n_nearest must be >= 1");
    if (!(log_clamp > 0.0 && log_clamp < 1.0)) fail(ErrorKind::Config, "log_clamp must lie in (0, 1)");
  }
};

struct GpPosterior {
  std::vector<double> mean;
  double variance = 0.0;
  /// Variance before the non-negativity clamp.
  double raw_variance = 0.0;
  /// Row vector k_q [K + sigma^2 I]^{-1}; the effective combination coefficients.
  std::vector<double> weights;
};

struct PseudoGroundTruth {
  GpPosterior near;
  std::optional<double> far_variance;
  NeighborSet nearest;
  NeighborSet farthest;
};

inline double squared_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double checked_norm(std::span<const double> v, const std::string& what) {
  const double n = std::sqrt(squared_norm(v));
  if (!std::isfinite(n)) fail(ErrorKind::Numeric, what + " has non-finite entries");
  if (!(n > 0.0)) fail(ErrorKind::DegenerateVector, what + " has zero norm");
  return n;
}

namespace detail {

inline double cosine_with_norms(std::span<const double> a, double norm_a, std::span<const double> b, double norm_b) {
  return std::clamp(dot(a, b) / (norm_a * norm_b), -1.0, 1.0);
}

inline std::vector<double> row_norms(const LatentStore& store) {
  store.validate();
  std::vector<double> norms(store.size());
  for (std::size_t i = 0; i < store.size(); ++i)
    norms[i] = checked_norm(store.rows[i].values, "store row " + std::to_string(i));
  return norms;
}

}  // namespace detail

/// <a,b> / (|a| |b|), clamped into [-1, 1].
inline double cosine_kernel(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    fail(ErrorKind::Shape, "cosine kernel length mismatch: " + std::to_string(a.size()) + " vs " +
                               std::to_string(b.size()));
  const double na = checked_norm(a, "kernel argument");
  const double nb = checked_norm(b, "kernel argument");
  return detail::cosine_with_norms(a, na, b, nb);
}

inline double cosine_kernel(const LatentVector& a, const LatentVector& b) { return cosine_kernel(a.values, b.values); }

/// Gram matrix over the store rows; unit diagonal, exactly symmetric.
inline Eigen::MatrixXd kernel_matrix(const LatentStore& store) {
  const auto norms = detail::row_norms(store);
  const auto n = static_cast<Eigen::Index>(store.size());
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    k(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = detail::cosine_with_norms(store.rows[i].values, norms[i], store.rows[j].values, norms[j]);
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  return k;
}

inline std::vector<double> kernel_cross(const LatentVector& query, const LatentStore& store) {
  const auto norms = detail::row_norms(store);
  if (query.size() != store.dim())
    fail(ErrorKind::Shape, "query length " + std::to_string(query.size()) + " does not match store dimension " +
                               std::to_string(store.dim()));
  const double nq = checked_norm(query.values, "query latent");
  std::vector<double> out(store.size());
  for (std::size_t i = 0; i < store.size(); ++i)
    out[i] = detail::cosine_with_norms(query.values, nq, store.rows[i].values, norms[i]);
  return out;
}

namespace detail {

/// Store indices ordered by similarity descending, lower index first on ties.
inline std::vector<std::size_t> similarity_order(const std::vector<double>& sims) {
  std::vector<std::size_t> order(sims.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (sims[a] != sims[b]) return sims[a] > sims[b];
    return a < b;
  });
  return order;
}

inline NeighborSet take_neighbors(const std::vector<double>& sims, const std::vector<std::size_t>& order,
                                  std::size_t budget, NeighborKind kind) {
  NeighborSet set;
  set.kind = kind;
  const std::size_t count = std::min(budget, order.size());
  set.indices.reserve(count);
  for (std::size_t r = 0; r < count; ++r) {
    // Farthest is read from the tail of the same total order, so the two sets
    // never overlap when their budgets fit in the store.
    const std::size_t idx = kind == NeighborKind::Nearest ? order[r] : order[order.size() - 1 - r];
    set.indices.push_back(idx);
    set.similarities.push_back(sims[idx]);
  }
  return set;
}

}  // namespace detail

inline NeighborSet select_neighbors(const LatentVector& query, const LatentStore& store, const GpConfig& cfg,
                                    NeighborKind kind) {
  const auto sims = kernel_cross(query, store);
  const auto order = detail::similarity_order(sims);
  return detail::take_neighbors(sims, order, kind == NeighborKind::Nearest ? cfg.n_nearest : cfg.n_farthest, kind);
}

/// Conditions the query on the neighbour rows. Solves through an LLT factorization
/// of K + sigma^2 I; the inverse is never formed.
inline GpPosterior gp_condition(const LatentVector& query, const NeighborSet& neighbors, const LatentStore& store,
                                const GpConfig& cfg) {
  if (neighbors.indices.empty()) fail(ErrorKind::Shape, "gp_condition needs at least one neighbour");
  store.validate();
  const std::size_t m = store.dim();
  if (query.size() != m)
    fail(ErrorKind::Shape, "query length " + std::to_string(query.size()) + " does not match store dimension " +
                               std::to_string(m));
  const auto n = static_cast<Eigen::Index>(neighbors.size());

  const double nq = checked_norm(query.values, "query latent");
  std::vector<double> norms(neighbors.size());
  for (std::size_t a = 0; a < neighbors.size(); ++a) {
    const std::size_t idx = neighbors.indices[a];
    if (idx >= store.size()) fail(ErrorKind::Shape, "neighbour index " + std::to_string(idx) + " out of range");
    norms[a] = checked_norm(store.rows[idx].values, "store row " + std::to_string(idx));
  }

  Eigen::MatrixXd k(n, n);
  Eigen::VectorXd kq(n);
  for (Eigen::Index a = 0; a < n; ++a) {
    const auto& ra = store.rows[neighbors.indices[a]].values;
    kq(a) = detail::cosine_with_norms(query.values, nq, ra, norms[a]);
    k(a, a) = 1.0 + cfg.sigma_eps_sq;
    for (Eigen::Index b = a + 1; b < n; ++b) {
      const double v =
          detail::cosine_with_norms(ra, norms[a], store.rows[neighbors.indices[b]].values, norms[b]);
      k(a, b) = v;
      k(b, a) = v;
    }
  }
  if (!k.allFinite() || !kq.allFinite()) fail(ErrorKind::Numeric, "non-finite kernel values in gp_condition");

  Eigen::LLT<Eigen::MatrixXd> llt(k);
  if (llt.info() != Eigen::Success) throw IllConditionedError("kernel matrix factorization failed", k.diagonal().minCoeff());
  const Eigen::VectorXd w = llt.solve(kq);
  if (!w.allFinite()) throw IllConditionedError("kernel solve produced non-finite weights", k.diagonal().minCoeff());

  GpPosterior post;
  post.weights.assign(w.data(), w.data() + n);
  post.mean.assign(m, 0.0);
  for (Eigen::Index a = 0; a < n; ++a) {
    const auto& row = store.rows[neighbors.indices[a]].values;
    const double wa = w(a);
    for (std::size_t j = 0; j < m; ++j) post.mean[j] += wa * row[j];
  }
  // kappa(q, q) is exactly 1 for the cosine kernel.
  post.raw_variance = 1.0 - kq.dot(w) + cfg.sigma_eps_sq;
  post.variance = std::max(post.raw_variance, 0.0);
  return post;
}

/// Nearest-set posterior (mean is the pseudo ground truth) plus the farthest-set
/// variance. `far_variance` is empty when n_farthest is 0.
inline PseudoGroundTruth pseudo_gt(const LatentVector& query, const LatentStore& store, const GpConfig& cfg) {
  const auto sims = kernel_cross(query, store);
  const auto order = detail::similarity_order(sims);
  PseudoGroundTruth out;
  out.nearest = detail::take_neighbors(sims, order, cfg.n_nearest, NeighborKind::Nearest);
  out.farthest = detail::take_neighbors(sims, order, cfg.n_farthest, NeighborKind::Farthest);
  try {
    out.near = gp_condition(query, out.nearest, store, cfg);
  } catch (const IllConditionedError& e) {
    throw IllConditionedError("nearest set: ", e);
  } catch (const Error& e) {
    throw Error(e.kind(), std::string("nearest set: ") + e.detail());
  }
  if (!out.farthest.indices.empty()) {
    try {
      out.far_variance = gp_condition(query, out.farthest, store, cfg).variance;
    } catch (const IllConditionedError& e) {
      throw IllConditionedError("farthest set: ", e);
    } catch (const Error& e) {
      throw Error(e.kind(), std::string("farthest set: ") + e.detail());
    }
  }
  return out;
}

}  // namespace gpderain::gp
