#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include <gtest/gtest.h>

#include "gpderain/gp.hpp"
#include "gpderain/latent_store_io.hpp"
#include "test_util.hpp"

using namespace gpderain;
using namespace gpderain::gp;

namespace {

LatentVector lv(std::vector<double> v, std::string id = {}) { return {std::move(v), std::move(id)}; }

GpConfig cfg_with(std::size_t nn, std::size_t nf, double sigma = 1.0) {
  GpConfig c;
  c.n_nearest = nn;
  c.n_farthest = nf;
  c.sigma_eps_sq = sigma;
  return c;
}

}  // namespace

TEST(CosineKernel, AnalyticValues) {
  EXPECT_DOUBLE_EQ(cosine_kernel(lv({1, 0}), lv({0, 1})), 0.0);
  EXPECT_NEAR(cosine_kernel(lv({1, 1}), lv({1, 0})), 0.7071067811865475, 1e-15);
  EXPECT_NEAR(cosine_kernel(lv({3, -2, 5}), lv({3, -2, 5})), 1.0, 1e-15);
}

TEST(CosineKernel, Errors) {
  EXPECT_THROW(cosine_kernel(lv({0, 0}), lv({1, 0})), Error);
  try {
    cosine_kernel(lv({1, 0}), lv({1, 0, 0}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Shape);
  }
  try {
    cosine_kernel(lv({0, 0}), lv({1, 0}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DegenerateVector);
  }
}

TEST(CosineKernel, PropertiesOverRandomPairs) {
  Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t m = 1 + uniform_index(rng, 12);
    auto a = testutil::random_vector(rng, m), b = testutil::random_vector(rng, m);
    const double ab = cosine_kernel(a, b), ba = cosine_kernel(b, a);
    EXPECT_NEAR(ab, ba, 1e-12);
    EXPECT_GE(ab, -1.0);
    EXPECT_LE(ab, 1.0);
    const double c = uniform(rng, 0.01, 100.0);
    std::vector<double> ca(a);
    for (double& x : ca) x *= c;
    EXPECT_NEAR(cosine_kernel(a, ca), 1.0, 1e-12);
  }
}

TEST(KernelMatrix, SmallCases) {
  LatentStore one{{lv({2, 3})}};
  EXPECT_EQ(kernel_matrix(one).rows(), 1);
  EXPECT_DOUBLE_EQ(kernel_matrix(one)(0, 0), 1.0);
  LatentStore orth{{lv({1, 0}), lv({0, 5})}};
  const auto k = kernel_matrix(orth);
  EXPECT_DOUBLE_EQ(k(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(k(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(k(1, 0), 0.0);
  EXPECT_DOUBLE_EQ(k(1, 1), 1.0);
}

TEST(KernelMatrix, MatchesPairwiseLoop) {
  Rng rng(3);
  const auto store = testutil::random_store(rng, 8, 5);
  const auto k = kernel_matrix(store);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      EXPECT_NEAR(k(i, j), testutil::naive_cosine(store.rows[i].values, store.rows[j].values), 1e-12);
      EXPECT_EQ(k(i, j), k(j, i));
    }
}

TEST(KernelMatrix, DegenerateRowReportsIndex) {
  LatentStore s{{lv({1, 0}), lv({0, 0})}};
  try {
    kernel_matrix(s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DegenerateVector);
    EXPECT_NE(std::string(e.what()).find("row 1"), std::string::npos);
  }
}

TEST(KernelCross, Cases) {
  Rng rng(5);
  auto store = testutil::random_store(rng, 6, 4);
  const auto k = kernel_cross(store.rows[3], store);
  EXPECT_NEAR(k[3], 1.0, 1e-15);
  for (int i = 0; i < 6; ++i) EXPECT_NEAR(k[i], testutil::naive_cosine(store.rows[3].values, store.rows[i].values), 1e-12);

  LatentStore s{{lv({1, 0, 0}), lv({0, 2, 0})}};
  const auto z = kernel_cross(lv({0, 0, 1}), s);
  EXPECT_EQ(z, std::vector<double>({0.0, 0.0}));
}

TEST(SelectNeighbors, IdentityAndBudget) {
  Rng rng(7);
  auto store = testutil::random_store(rng, 4, 3);
  const auto nb = select_neighbors(store.rows[2], store, cfg_with(1, 1), NeighborKind::Nearest);
  ASSERT_EQ(nb.size(), 1u);
  EXPECT_EQ(nb.indices[0], 2u);
  const auto all = select_neighbors(store.rows[0], store, cfg_with(10, 10), NeighborKind::Nearest);
  EXPECT_EQ(all.size(), 4u);
  auto sorted = all.indices;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(sorted, std::vector<std::size_t>({0, 1, 2, 3}));
}

TEST(SelectNeighbors, MatchesFullSortOracle) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    auto store = testutil::random_store(rng, 64, 6);
    auto q = lv(testutil::random_vector(rng, 6));
    std::vector<std::pair<double, std::size_t>> all;
    for (std::size_t i = 0; i < store.size(); ++i)
      all.push_back({testutil::naive_cosine(q.values, store.rows[i].values), i});
    auto desc = all;
    std::sort(desc.begin(), desc.end(), [](auto a, auto b) { return a.first > b.first; });
    auto asc = all;
    std::sort(asc.begin(), asc.end(), [](auto a, auto b) { return a.first < b.first; });
    const auto near = select_neighbors(q, store, cfg_with(8, 8), NeighborKind::Nearest);
    const auto far = select_neighbors(q, store, cfg_with(8, 8), NeighborKind::Farthest);
    for (int r = 0; r < 8; ++r) {
      EXPECT_EQ(near.indices[r], desc[r].second);
      EXPECT_EQ(far.indices[r], asc[r].second);
      if (r > 0) {
        EXPECT_GE(near.similarities[r - 1], near.similarities[r]);
        EXPECT_LE(far.similarities[r - 1], far.similarities[r]);
      }
    }
  }
}

TEST(SelectNeighbors, TiesBreakByLowerIndexAndSetsStayDisjoint) {
  LatentStore s{{lv({1, 0}), lv({1, 0}), lv({1, 0}), lv({1, 0})}};
  const auto q = lv({1, 1});
  const auto near = select_neighbors(q, s, cfg_with(2, 2), NeighborKind::Nearest);
  const auto far = select_neighbors(q, s, cfg_with(2, 2), NeighborKind::Farthest);
  EXPECT_EQ(near.indices, std::vector<std::size_t>({0, 1}));
  EXPECT_EQ(far.indices, std::vector<std::size_t>({3, 2}));
}

TEST(SelectNeighbors, Deterministic) {
  Rng rng(9);
  auto store = testutil::random_store(rng, 50, 4);
  auto q = lv(testutil::random_vector(rng, 4));
  const auto a = select_neighbors(q, store, cfg_with(10, 10), NeighborKind::Nearest);
  const auto b = select_neighbors(q, store, cfg_with(10, 10), NeighborKind::Nearest);
  EXPECT_EQ(a.indices, b.indices);
}

TEST(GpCondition, SingleNeighborIdentical) {
  const std::vector<double> v{0.6, -0.8, 0.0};
  LatentStore s{{lv(v)}};
  NeighborSet nb{{0}, {1.0}, NeighborKind::Nearest};
  const auto post = gp_condition(lv(v), nb, s, cfg_with(1, 1));
  for (std::size_t j = 0; j < v.size(); ++j) EXPECT_NEAR(post.mean[j], 0.5 * v[j], 1e-15);
  EXPECT_NEAR(post.variance, 1.5, 1e-15);
  ASSERT_EQ(post.weights.size(), 1u);
  EXPECT_NEAR(post.weights[0], 0.5, 1e-15);
}

TEST(GpCondition, SingleNeighborOrthogonal) {
  LatentStore s{{lv({1, 0})}};
  NeighborSet nb{{0}, {0.0}, NeighborKind::Nearest};
  const auto post = gp_condition(lv({0, 3}), nb, s, cfg_with(1, 1));
  EXPECT_EQ(post.mean, std::vector<double>({0.0, 0.0}));
  EXPECT_DOUBLE_EQ(post.variance, 2.0);
}

TEST(GpCondition, MatchesDenseConditioningOracle) {
  Rng rng(21);
  for (int seed = 0; seed < 120; ++seed) {
    const std::size_t n = 1 + uniform_index(rng, 16);
    const std::size_t m = 1 + uniform_index(rng, 8);
    auto store = testutil::random_store(rng, n, m);
    auto q = lv(testutil::random_vector(rng, m));
    const double sigma = seed % 3 == 0 ? 1.0 : uniform(rng, 0.1, 2.0);
    auto cfg = cfg_with(n, 0, sigma);
    const auto nb = select_neighbors(q, store, cfg, NeighborKind::Nearest);
    const auto post = gp_condition(q, nb, store, cfg);
    std::vector<std::vector<double>> rows;
    for (auto i : nb.indices) rows.push_back(store.rows[i].values);
    const auto oracle = testutil::dense_condition(rows, q.values, sigma);
    EXPECT_NEAR(post.raw_variance, oracle.variance, 1e-8);
    for (std::size_t j = 0; j < m; ++j) EXPECT_NEAR(post.mean[j], oracle.mean[j], 1e-8);
  }
}

TEST(GpCondition, MeanIsWeightsTimesRows) {
  Rng rng(22);
  auto store = testutil::random_store(rng, 12, 5);
  auto q = lv(testutil::random_vector(rng, 5));
  const auto cfg = cfg_with(6, 0);
  const auto nb = select_neighbors(q, store, cfg, NeighborKind::Nearest);
  const auto post = gp_condition(q, nb, store, cfg);
  for (std::size_t j = 0; j < 5; ++j) {
    double s = 0.0;
    for (std::size_t a = 0; a < nb.size(); ++a) s += post.weights[a] * store.rows[nb.indices[a]].values[j];
    EXPECT_NEAR(post.mean[j], s, 1e-10 * std::max(1.0, std::abs(s)));
  }
  EXPECT_GE(post.variance, 0.0);
  EXPECT_GE(post.raw_variance, cfg.sigma_eps_sq - 1.0);
}

TEST(GpCondition, ClampsNegativeVariance) {
  // Tiny noise plus a query equal to a stored row drives the raw variance to ~sigma^2.
  LatentStore s{{lv({1, 0}), lv({1, 1e-3})}};
  NeighborSet nb{{0, 1}, {}, NeighborKind::Nearest};
  const auto post = gp_condition(lv({1, 0}), nb, s, cfg_with(2, 0, 1e-9));
  EXPECT_GE(post.variance, 0.0);
  EXPECT_EQ(post.variance, std::max(post.raw_variance, 0.0));
}

TEST(GpCondition, RejectsBadInputs) {
  LatentStore s{{lv({1, 0})}};
  EXPECT_THROW(gp_condition(lv({1, 0}), NeighborSet{}, s, cfg_with(1, 1)), Error);
  NeighborSet nb{{0}, {1.0}, NeighborKind::Nearest};
  EXPECT_THROW(gp_condition(lv({1, 0, 0}), nb, s, cfg_with(1, 1)), Error);
  try {
    gp_condition(lv({std::nan(""), 1.0}), nb, s, cfg_with(1, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Numeric);
  }
}

TEST(GpCondition, IllConditionedCarriesDiagonalMinimum) {
  // A negative noise variance bypasses config validation and breaks positive definiteness.
  LatentStore s{{lv({1, 0}), lv({0, 1})}};
  NeighborSet nb{{0, 1}, {}, NeighborKind::Nearest};
  GpConfig bad = cfg_with(2, 0);
  bad.sigma_eps_sq = -2.0;
  try {
    gp_condition(lv({1, 1}), nb, s, bad);
    FAIL();
  } catch (const IllConditionedError& e) {
    EXPECT_DOUBLE_EQ(e.diagonal_min(), -1.0);
  }
}

TEST(GpCondition, InterpolationTowardsStoredRowIsMonotone) {
  const std::vector<double> v{1, 0, 0, 0}, w{0, 1, 0, 0};
  LatentStore s{{lv(v), lv({0, 0, 1, 0}), lv({0, 0, 0, 1})}};
  const auto cfg = cfg_with(3, 0);
  double prev_weight = -1e9, prev_var = 1e9;
  for (int k = 1; k <= 9; ++k) {
    const double lam = 0.1 * k;
    std::vector<double> q(4);
    for (int j = 0; j < 4; ++j) q[j] = lam * v[j] + (1 - lam) * w[j];
    NeighborSet nb{{0, 1, 2}, {}, NeighborKind::Nearest};
    const auto post = gp_condition(lv(q), nb, s, cfg);
    EXPECT_GT(post.weights[0], prev_weight);
    EXPECT_LT(post.variance, prev_var);
    prev_weight = post.weights[0];
    prev_var = post.variance;
  }
}

TEST(PseudoGt, DegenerateStore) {
  const std::vector<double> v{0.0, 1.0};
  LatentStore s{{lv(v)}};
  const auto pg = pseudo_gt(lv(v), s, cfg_with(1, 1));
  EXPECT_NEAR(pg.near.mean[1], 0.5, 1e-15);
  EXPECT_NEAR(pg.near.variance, 1.5, 1e-15);
  ASSERT_TRUE(pg.far_variance.has_value());
  EXPECT_NEAR(*pg.far_variance, 1.5, 1e-15);
}

TEST(PseudoGt, OrthogonalQueryAndNoFarSet) {
  LatentStore s{{lv({1, 0, 0}), lv({0, 1, 0})}};
  const auto pg = pseudo_gt(lv({0, 0, 1}), s, cfg_with(2, 0));
  EXPECT_EQ(pg.near.mean, std::vector<double>({0.0, 0.0, 0.0}));
  EXPECT_DOUBLE_EQ(pg.near.variance, 2.0);
  EXPECT_FALSE(pg.far_variance.has_value());
}

TEST(PseudoGt, NearAndFarDisjointOnLargeStore) {
  Rng rng(30);
  auto store = testutil::random_store(rng, 128, 8);
  for (int t = 0; t < 10; ++t) {
    auto q = lv(testutil::random_vector(rng, 8));
    const auto pg = pseudo_gt(q, store, cfg_with(64, 64));
    std::vector<std::size_t> both = pg.nearest.indices;
    both.insert(both.end(), pg.farthest.indices.begin(), pg.farthest.indices.end());
    std::sort(both.begin(), both.end());
    EXPECT_EQ(std::adjacent_find(both.begin(), both.end()), both.end());
    std::vector<std::pair<double, std::size_t>> all;
    for (std::size_t i = 0; i < store.size(); ++i)
      all.push_back({testutil::naive_cosine(q.values, store.rows[i].values), i});
    std::sort(all.begin(), all.end(), [](auto a, auto b) { return a.first > b.first; });
    for (int r = 0; r < 64; ++r) EXPECT_EQ(pg.nearest.indices[r], all[r].second);
  }
}

TEST(PseudoGt, ErrorsNameTheFailingSet) {
  LatentStore s{{lv({1, 0}), lv({0, 1})}};
  GpConfig bad = cfg_with(1, 1);
  bad.sigma_eps_sq = -5.0;
  try {
    pseudo_gt(lv({1, 0.5}), s, bad);
    FAIL();
  } catch (const IllConditionedError& e) {
    EXPECT_NE(std::string(e.what()).find("nearest set"), std::string::npos);
  }
}

TEST(LatentStoreFile, RoundTripAndHeader) {
  Rng rng(31);
  auto store = testutil::random_store(rng, 5, 3);
  std::stringstream buf;
  write_latent_store(buf, store);
  const std::string bytes = buf.str();
  ASSERT_EQ(bytes.substr(0, 4), "GPLS");
  std::uint32_t version;
  std::uint64_t n, m;
  std::memcpy(&version, bytes.data() + 4, 4);
  std::memcpy(&n, bytes.data() + 8, 8);
  std::memcpy(&m, bytes.data() + 16, 8);
  EXPECT_EQ(version, 1u);
  EXPECT_EQ(n, 5u);
  EXPECT_EQ(m, 3u);
  double first;
  std::memcpy(&first, bytes.data() + 24, 8);
  EXPECT_EQ(first, store.rows[0].values[0]);
  const auto back = read_latent_store(buf);
  ASSERT_EQ(back.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(back.rows[i].values, store.rows[i].values);
    EXPECT_EQ(back.rows[i].source_id, store.rows[i].source_id);
  }
}

TEST(LatentStoreFile, RejectsTruncation) {
  Rng rng(32);
  auto store = testutil::random_store(rng, 3, 3);
  std::stringstream buf;
  write_latent_store(buf, store);
  std::stringstream cut(buf.str().substr(0, 40));
  EXPECT_THROW(read_latent_store(cut), Error);
}
