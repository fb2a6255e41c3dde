#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fedsim/metrics.hpp"

using namespace fedsim;

namespace {

AccuracyMatrix matrix(std::vector<std::vector<double>> rows) { return AccuracyMatrix{std::move(rows)}; }

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

TEST(PerClassAccuracy, PerfectClassifier) {
  const std::vector<int> y{0, 1, 2, 2, 1};
  EXPECT_EQ(per_class_accuracy(y, y, 3), (std::vector<double>{1.0, 1.0, 1.0}));
}

TEST(PerClassAccuracy, ConstantPredictor) {
  const std::vector<int> y{0, 1, 0, 1}, pred{0, 0, 0, 0};
  EXPECT_EQ(per_class_accuracy(pred, y, 2), (std::vector<double>{1.0, 0.0}));
}

TEST(PerClassAccuracy, HandCountedFixture) {
  const std::vector<int> y{0, 0, 0, 1, 1, 2, 2, 2, 2}, pred{0, 1, 0, 1, 2, 2, 0, 2, 1};
  // class 0: 2/3, class 1: 1/2, class 2: 2/4
  const auto acc = per_class_accuracy(pred, y, 3);
  EXPECT_EQ(acc[0], 2.0 / 3.0);
  EXPECT_EQ(acc[1], 0.5);
  EXPECT_EQ(acc[2], 0.5);
}

TEST(PerClassAccuracy, AbsentClassIsUndefined) {
  const std::vector<int> y{0, 2}, pred{0, 1};
  const auto acc = per_class_accuracy(pred, y, 3);
  EXPECT_TRUE(std::isnan(acc[1]));
  EXPECT_THROW(per_class_accuracy(std::vector<int>{}, std::vector<int>{}, 2), Error);
}

TEST(RoundForgetting, KnowledgeReplacement) {
  const auto a = matrix({{0.8, 0.2}, {0.6, 0.4}});
  EXPECT_DOUBLE_EQ(round_forgetting(a, 1), 0.1);
  EXPECT_DOUBLE_EQ(mean(a.rows[0]), mean(a.rows[1]));
}

TEST(RoundForgetting, NoChangeOrGainsGiveZero) {
  EXPECT_EQ(round_forgetting(matrix({{0.3, 0.7}, {0.3, 0.7}}), 1), 0.0);
  EXPECT_EQ(round_forgetting(matrix({{0.3, 0.7}, {0.5, 0.9}}), 1), 0.0);
}

TEST(RoundForgetting, RejectsOutOfRange) {
  const auto a = matrix({{0.3, 0.7}, {0.3, 0.7}});
  EXPECT_THROW(round_forgetting(a, 0), Error);
  EXPECT_THROW(round_forgetting(a, 2), Error);
}

TEST(RoundForgetting, SkipsUndefinedClasses) {
  const auto a = matrix({{0.8, kUndefined, 0.5}, {0.4, kUndefined, 0.5}});
  EXPECT_DOUBLE_EQ(round_forgetting(a, 1), 0.2);
}

TEST(RoundForgetting, PropertiesOverRandomTraces) {
  std::mt19937_64 gen(31);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t classes = 2 + gen() % 6;
    std::vector<double> before(classes), after(classes);
    bool drops = false;
    for (std::size_t c = 0; c < classes; ++c) {
      before[c] = u(gen);
      after[c] = gen() % 3 == 0 ? before[c] : u(gen);
      drops |= after[c] < before[c];
    }
    const double f = round_forgetting(matrix({before, after}), 1);
    EXPECT_GE(f, 0.0);
    EXPECT_EQ(f > 0.0, drops);

    std::vector<std::size_t> perm(classes);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), gen);
    std::vector<double> pb(classes), pa(classes);
    for (std::size_t c = 0; c < classes; ++c) {
      pb[c] = before[perm[c]];
      pa[c] = after[perm[c]];
    }
    EXPECT_NEAR(round_forgetting(matrix({pb, pa}), 1), f, 1e-15);
  }
}

TEST(RoundForgetting, SwapIsVisibleWhileMeanIsFlat) {
  for (double d : {0.05, 0.1, 0.3}) {
    const auto a = matrix({{0.5, 0.5, 0.5}, {0.5 - d, 0.5 + d, 0.5}});
    EXPECT_GT(round_forgetting(a, 1), 0.0);
    EXPECT_NEAR(mean(a.rows[1]) - mean(a.rows[0]), 0.0, 1e-15);
  }
}

TEST(AggregateForgetting, SingleClassTrace) {
  EXPECT_DOUBLE_EQ(aggregate_forgetting(matrix({{0.5}, {0.9}, {0.7}})), 0.2);
}

TEST(AggregateForgetting, ImprovingTraceIsNegative) {
  EXPECT_DOUBLE_EQ(aggregate_forgetting(matrix({{0.1}, {0.2}, {0.4}})), -0.2);
}

TEST(AggregateForgetting, AveragesClasses) {
  EXPECT_DOUBLE_EQ(aggregate_forgetting(matrix({{0.5, 0.1}, {0.9, 0.1}, {0.7, 0.1}})), 0.1);
}

TEST(AggregateForgetting, ConstantTraceIsZero) {
  EXPECT_EQ(aggregate_forgetting(matrix({{0.4, 0.6}, {0.4, 0.6}, {0.4, 0.6}, {0.4, 0.6}})), 0.0);
  EXPECT_THROW(aggregate_forgetting(matrix({{0.4, 0.6}})), Error);
}

TEST(Ecdf, DistinctValues) {
  const auto e = ecdf({3.0, 1.0, 2.0});
  ASSERT_EQ(e.size(), 3u);
  EXPECT_EQ(e[0], std::make_pair(1.0, 1.0 / 3.0));
  EXPECT_EQ(e[1], std::make_pair(2.0, 2.0 / 3.0));
  EXPECT_EQ(e[2], std::make_pair(3.0, 1.0));
}

TEST(Ecdf, EqualValuesSingleStep) {
  const auto e = ecdf({0.2, 0.2, 0.2, 0.2});
  ASSERT_EQ(e.size(), 1u);
  EXPECT_EQ(e[0], std::make_pair(0.2, 1.0));
  EXPECT_THROW(ecdf({}), Error);
}

TEST(Ecdf, MedianNearHalf) {
  std::mt19937_64 gen(32);
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> v(1001);
  for (auto& x : v) x = dist(gen);
  auto sorted = v;
  std::sort(sorted.begin(), sorted.end());
  const double median = sorted[500];
  const auto e = ecdf(v);
  const auto it = std::find_if(e.begin(), e.end(), [&](const auto& s) { return s.first == median; });
  ASSERT_NE(it, e.end());
  EXPECT_NEAR(it->second, 0.5, 0.001);
  EXPECT_EQ(e.back().second, 1.0);
  for (std::size_t i = 1; i < e.size(); ++i) {
    EXPECT_LT(e[i - 1].first, e[i].first);
    EXPECT_LT(e[i - 1].second, e[i].second);
  }
}

TEST(RoundsToTarget, FirstRoundReachingLevel) {
  const std::vector<double> trace{0.1, 0.3, 0.5};
  EXPECT_EQ(rounds_to_target(trace, 0.5, 0.95), 3u);
  EXPECT_EQ(rounds_to_target(trace, 0.5, 0.5), 2u);
  EXPECT_EQ(rounds_to_target(trace, 0.9, 0.95), std::nullopt);
}

TEST(RoundsToTarget, TableFixture) {
  std::vector<double> trace(20, 0.30);
  for (std::size_t t = 9; t < 20; ++t) trace[t] = 0.46;
  EXPECT_EQ(rounds_to_target(trace, 0.482, 0.95), 10u);
}

TEST(RoundsToTarget, RejectsBadInput) {
  const std::vector<double> trace{0.1};
  EXPECT_THROW(rounds_to_target(trace, 0.5, 0.0), Error);
  EXPECT_THROW(rounds_to_target(trace, 0.5, 1.1), Error);
  EXPECT_THROW(rounds_to_target(std::vector<double>{}, 0.5, 0.5), Error);
}

TEST(Decomposition, UnchangedClientsHaveNoLocalForgetting) {
  RoundRecord r;
  r.prev_global_acc = {0.7, 0.3};
  r.client_acc = {{0.7, 0.3}, {0.7, 0.3}};
  r.global_per_class_acc = {0.7, 0.3};
  const auto d = forgetting_decomposition(r);
  EXPECT_EQ(d.local, 0.0);
  EXPECT_EQ(d.aggregation, 0.0);
}

TEST(Decomposition, BestClientPerClassHasNoAggregationForgetting) {
  RoundRecord r;
  r.prev_global_acc = {0.5, 0.5};
  r.client_acc = {{0.9, 0.1}, {0.2, 0.8}};
  r.global_per_class_acc = {0.9, 0.8};
  EXPECT_EQ(forgetting_decomposition(r).aggregation, 0.0);
}

TEST(Decomposition, TwoClientHandFixture) {
  RoundRecord r;
  r.prev_global_acc = {0.6, 0.6};
  r.client_acc = {{0.9, 0.2}, {0.4, 0.8}};
  r.global_per_class_acc = {0.5, 0.5};
  // client 1 drops 0.4 on class 1, client 2 drops 0.2 on class 0:
  //   local = ((0.4)/2 + (0.2)/2) / 2 = 0.15
  // best per class [0.9, 0.8], global [0.5, 0.5]: aggregation = (0.4 + 0.3)/2 = 0.35
  const auto d = forgetting_decomposition(r);
  EXPECT_DOUBLE_EQ(d.local, 0.15);
  EXPECT_DOUBLE_EQ(d.aggregation, 0.35);
}

TEST(Decomposition, RejectsIncompleteRecord) {
  RoundRecord r;
  r.prev_global_acc = {0.5, 0.5};
  r.global_per_class_acc = {0.5, 0.5};
  EXPECT_THROW(forgetting_decomposition(r), Error);
  r.client_acc = {{0.5}};
  EXPECT_THROW(forgetting_decomposition(r), Error);
}
