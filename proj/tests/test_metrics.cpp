#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "faultformer/errors.hpp"
#include "faultformer/metrics.hpp"
#include "oracles.hpp"

using namespace faultformer;

namespace {

struct Instance {
  std::vector<double> flat;
  std::vector<std::vector<double>> rows;
  std::vector<std::size_t> labels;
};

Instance random_instance(std::size_t n, std::size_t dim, std::size_t classes, std::uint64_t seed) {
  Instance inst;
  inst.flat = oracle::random_vector(n * dim, seed, -3.0, 3.0);
  for (std::size_t i = 0; i < n; ++i) {
    inst.rows.emplace_back(inst.flat.begin() + i * dim, inst.flat.begin() + (i + 1) * dim);
    inst.labels.push_back(i % classes);
  }
  std::mt19937_64 rng(seed);
  std::shuffle(inst.labels.begin(), inst.labels.end(), rng);
  return inst;
}

}  // namespace

TEST(Accuracy, HandCounts) {
  std::vector<std::size_t> y{0, 1, 2, 3};
  EXPECT_EQ(accuracy(y, y), 100.0);
  EXPECT_EQ(accuracy(std::vector<std::size_t>{1, 0}, std::vector<std::size_t>{0, 1}), 0.0);
  EXPECT_EQ(accuracy(std::vector<std::size_t>{0, 1, 1, 3}, y), 75.0);
  EXPECT_THROW(accuracy(std::vector<std::size_t>{}, std::vector<std::size_t>{}), ContractError);
}

TEST(Accuracy, RandomGuessingOverEighteenClasses) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::size_t> pick(0, 17);
  std::vector<std::size_t> pred(10000), labels(10000);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    pred[i] = pick(rng);
    labels[i] = pick(rng);
  }
  // 1/18 with a binomial standard error of about 0.23 points
  EXPECT_NEAR(accuracy(pred, labels), 100.0 / 18.0, 1.0);
}

TEST(Confusion, RowsAndTrace) {
  std::vector<std::size_t> labels{0, 0, 1, 1, 1, 2};
  std::vector<std::size_t> pred{0, 1, 1, 1, 2, 2};
  auto m = confusion_matrix(pred, labels, 3);
  EXPECT_EQ(m[0], (std::vector<std::size_t>{1, 1, 0}));
  EXPECT_EQ(m[1], (std::vector<std::size_t>{0, 2, 1}));
  EXPECT_EQ(m[2], (std::vector<std::size_t>{0, 0, 1}));
  EXPECT_DOUBLE_EQ(accuracy(pred, labels), 100.0 * (1 + 2 + 1) / 6.0);
  auto perfect = confusion_matrix(labels, labels, 3);
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 3; ++c) {
      if (r != c) EXPECT_EQ(perfect[r][c], 0u);
    }
  }
  EXPECT_THROW(confusion_matrix(std::vector<std::size_t>{3}, std::vector<std::size_t>{0}, 3), ContractError);
}

TEST(Scatter, MatchesBruteForceOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto inst = random_instance(30, 8, 3, seed);
    auto ref = oracle::brute_force_scatter(inst.rows, inst.labels, 3);
    auto m = scatter_metrics(inst.flat, 8, inst.labels);
    EXPECT_NEAR(m.trace_between, ref.trace_sb, 1e-12 * ref.trace_sb);
    EXPECT_NEAR(m.trace_within, ref.trace_sw, 1e-12 * ref.trace_sw);
    const double j1 = ref.trace_sb / ref.trace_sw;
    EXPECT_NEAR(m.j1, j1, 1e-12 * j1);
    EXPECT_NEAR(m.j2, (ref.trace_sw + ref.trace_sb) / ref.trace_sw, 1e-12);
    EXPECT_NEAR(m.j2_alt, (ref.trace_sw + ref.trace_sb) / ref.trace_sb, 1e-12 * m.j2_alt);
    EXPECT_EQ(m.j2, 1.0 + m.j1);
    EXPECT_FALSE(m.capped);
  }
}

TEST(Scatter, IdenticalSamples) {
  std::vector<double> f(12, 2.5);
  auto m = scatter_metrics(f, 3, std::vector<std::size_t>{0, 1, 0, 1});
  EXPECT_EQ(m.trace_between, 0.0);
  EXPECT_EQ(m.j1, 0.0);
  EXPECT_EQ(m.j2, 1.0);
}

TEST(Scatter, CollapsedClustersAreCapped) {
  std::vector<double> f{0, 0, 0, 0, 3, 4, 3, 4};
  auto m = scatter_metrics(f, 2, std::vector<std::size_t>{0, 0, 1, 1});
  EXPECT_TRUE(m.capped);
  EXPECT_EQ(m.trace_within, 0.0);
  EXPECT_DOUBLE_EQ(m.trace_between, 25.0);
  EXPECT_DOUBLE_EQ(m.j1, 25.0 / ScatterMetrics::kWithinFloor);
}

TEST(Scatter, InvariantToPermutationAndTranslation) {
  auto inst = random_instance(40, 6, 4, 21);
  auto base = scatter_metrics(inst.flat, 6, inst.labels);
  std::vector<double> permuted(inst.flat.size()), shifted(inst.flat.size());
  const std::size_t perm[] = {3, 0, 5, 1, 4, 2};
  for (std::size_t i = 0; i < 40; ++i) {
    for (std::size_t d = 0; d < 6; ++d) {
      permuted[i * 6 + d] = inst.flat[i * 6 + perm[d]];
      shifted[i * 6 + d] = inst.flat[i * 6 + d] + 10.0 * (d + 1);
    }
  }
  auto p = scatter_metrics(permuted, 6, inst.labels);
  auto s = scatter_metrics(shifted, 6, inst.labels);
  EXPECT_NEAR(p.j1, base.j1, 1e-12 * base.j1);
  EXPECT_NEAR(s.j1, base.j1, 1e-10 * base.j1);
}

TEST(Scatter, Contracts) {
  EXPECT_THROW(scatter_metrics(std::vector<double>{1, 2, 3}, 1, std::vector<std::size_t>{0, 0, 0}), ContractError);
  EXPECT_THROW(scatter_metrics(std::vector<double>{1, 2, 3}, 2, std::vector<std::size_t>{0, 1}), DimensionError);
}
