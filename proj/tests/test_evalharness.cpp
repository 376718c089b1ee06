#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "hrapr/evalharness.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace hrapr;

namespace {

Pose at(double x) { return Pose(Vec3(x, 0, 0), Quat::Identity()); }

Pose rotated(double x, double deg) { return Pose(Vec3(x, 0, 0), axis_angle(Vec3::UnitZ(), deg * kDegToRad)); }

ScoredQuery sq(double score, double terr, double rdeg = 0.0) {
  ScoredQuery q;
  q.id = "q";
  q.score.value = score;
  q.predicted = rotated(terr, rdeg);
  q.gt = at(0);
  return q;
}

RefineTrace trace_of(std::vector<double> terrs) {
  RefineTrace t;
  for (const double e : terrs) t.rows.push_back({at(e), 0.0, e, 2.0 * e});
  t.steps_used = static_cast<int>(terrs.size()) - 1;
  return t;
}

}  // namespace

TEST(MedianErrors, SinglePair) {
  const std::vector<PosePair> p{{rotated(0.5, 3.0), at(0)}};
  const auto m = median_errors(std::span<const PosePair>(p));
  EXPECT_NEAR(m.trans_m, 0.5, 1e-15);
  EXPECT_NEAR(m.rot_deg, 3.0, 1e-9);
}

TEST(MedianErrors, OddAndEvenCounts) {
  std::vector<PoseError> e{{1, 0}, {3, 0}, {2, 0}};
  EXPECT_EQ(median_errors(e).trans_m, 2.0);
  e.push_back({10, 0});
  EXPECT_EQ(median_errors(e).trans_m, 2.5);
  EXPECT_THROW(median_errors(std::span<const PoseError>{}), Error);
}

TEST(MedianErrors, PropertyMatchesSortOracle) {
  std::mt19937_64 rng(50);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  std::uniform_int_distribution<int> len(1, 60);
  for (int i = 0; i < 500; ++i) {
    std::vector<double> v(static_cast<std::size_t>(len(rng)));
    for (auto& x : v) x = u(rng);
    ASSERT_EQ(median(v), oracle::median(v));
  }
}

TEST(Accuracy, AllExact) {
  const std::vector<PoseError> e(5, PoseError{0, 0});
  const auto a = accuracy_levels(e);
  ASSERT_TRUE(a);
  EXPECT_EQ(a->high, 100.0);
  EXPECT_EQ(a->medium, 100.0);
  EXPECT_EQ(a->low, 100.0);
}

TEST(Accuracy, FailsHighOnTranslationOnly) {
  const std::vector<PoseError> e{{0.3, 1.0}};
  const auto a = accuracy_levels(e);
  EXPECT_EQ(a->high, 0.0);
  EXPECT_EQ(a->medium, 100.0);
  EXPECT_EQ(a->low, 100.0);
  EXPECT_EQ(format_levels(a), "0.0/100.0/100.0");
}

TEST(Accuracy, BoundariesInclusiveAndBothConditionsRequired) {
  const std::vector<PoseError> e{{0.25, 2.0}, {0.1, 2.5}, {5.0, 10.0}, {5.01, 0.0}};
  const auto a = accuracy_levels(e);
  EXPECT_EQ(a->high, 25.0);
  EXPECT_EQ(a->medium, 50.0);
  EXPECT_EQ(a->low, 75.0);
}

TEST(Accuracy, EmptyIsUndefined) {
  EXPECT_FALSE(accuracy_levels({}));
  EXPECT_EQ(format_levels(std::nullopt), "undefined");
}

TEST(Accuracy, ThresholdsMustNest) {
  const std::array<AccuracyThreshold, 3> bad{{{1.0, 2.0}, {0.5, 5.0}, {5.0, 10.0}}};
  EXPECT_THROW(accuracy_levels(std::vector<PoseError>{{0, 0}}, bad), Error);
}

TEST(Accuracy, PropertyLevelsNest) {
  std::mt19937_64 rng(51);
  std::exponential_distribution<double> t(2.0), r(0.3);
  for (int i = 0; i < 200; ++i) {
    std::vector<PoseError> e(50);
    for (auto& x : e) x = {t(rng), r(rng)};
    const auto a = accuracy_levels(e);
    ASSERT_LE(a->high, a->medium);
    ASSERT_LE(a->medium, a->low);
    ASSERT_GE(a->high, 0.0);
    ASSERT_LE(a->low, 100.0);
  }
}

TEST(Sweep, GridZeroIsAnchor) {
  std::vector<ScoredQuery> s{sq(0.5, 1.0, 2.0), sq(0.7, 3.0, 4.0)};
  const std::vector<double> g{0.0};
  const auto p = threshold_sweep(s, g);
  ASSERT_EQ(p.size(), 1u);
  EXPECT_EQ(p[0].retained_ratio, 1.0);
  EXPECT_EQ(*p[0].norm_terr, 1.0);
  EXPECT_EQ(*p[0].norm_rerr, 1.0);
}

TEST(Sweep, HalfRetained) {
  std::vector<ScoredQuery> s{sq(0.99, 1.0), sq(0.90, 3.0)};
  const std::vector<double> g{0.95};
  const auto p = threshold_sweep(s, g);
  EXPECT_EQ(p[0].retained_ratio, 0.5);
  EXPECT_EQ(p[0].retained, 1u);
}

TEST(Sweep, UndefinedWhenNothingRetained) {
  std::vector<ScoredQuery> s{sq(0.5, 1.0), sq(0.6, 2.0)};
  const std::vector<double> g{0.0, 0.9};
  const auto p = threshold_sweep(s, g);
  EXPECT_FALSE(p[1].mean_terr);
  EXPECT_FALSE(p[1].norm_terr);
  EXPECT_EQ(p[1].retained_ratio, 0.0);
  const std::string csv = sweep_csv(p);
  EXPECT_NE(csv.find("0.9,0,nan,nan,nan,nan,nan,nan"), std::string::npos) << csv;
}

TEST(Sweep, Errors) {
  std::vector<ScoredQuery> s{sq(0.5, 1.0)};
  EXPECT_THROW(threshold_sweep(s, {}), Error);
  const std::vector<double> desc{0.9, 0.5};
  EXPECT_THROW(threshold_sweep(s, desc), Error);
  s[0].gt.reset();
  const std::vector<double> g{0.0};
  EXPECT_THROW(threshold_sweep(s, g), Error);
}

TEST(Sweep, PropertyNestedRetentionAndFullSetMedian) {
  std::mt19937_64 rng(52);
  std::uniform_real_distribution<double> u(-1.0, 1.0), e(0.0, 5.0);
  for (int round = 0; round < 50; ++round) {
    std::vector<ScoredQuery> s;
    for (int i = 0; i < 100; ++i) s.push_back(sq(u(rng), e(rng), 10 * e(rng)));
    const std::vector<double> g{-1.0, -0.5, 0.0, 0.3, 0.6, 0.9, 0.99};
    const auto p = threshold_sweep(s, g);
    for (std::size_t k = 1; k < p.size(); ++k) ASSERT_LE(p[k].retained_ratio, p[k - 1].retained_ratio);
    std::vector<PoseError> all;
    for (const auto& q : s) all.push_back(pose_error(q.predicted, *q.gt));
    const auto m = median_errors(all);
    ASSERT_EQ(*p[0].median_terr, m.trans_m);
    ASSERT_EQ(*p[0].median_rerr, m.rot_deg);
    ASSERT_EQ(*p[0].norm_terr, 1.0);
  }
}

TEST(Convergence, ConstantTraceIsFlat) {
  const std::vector<RefineTrace> t{trace_of({0.7, 0.7, 0.7})};
  const std::vector<bool> rel{true};
  const auto c = convergence_curves(t, rel);
  ASSERT_EQ(c.hs.size(), 3u);
  EXPECT_TRUE(c.ls.empty());
  for (const auto& p : c.hs) EXPECT_EQ(p.mean_terr, 0.7);
}

TEST(Convergence, CarriesShortTracesForward) {
  std::vector<double> a(11), b(51);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = 1.0 - 0.05 * static_cast<double>(i);
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = 2.0 - 0.02 * static_cast<double>(i);
  const std::vector<RefineTrace> t{trace_of(a), trace_of(b)};
  const std::vector<bool> rel{false, false};
  const auto c = convergence_curves(t, rel);
  ASSERT_EQ(c.ls.size(), 51u);
  EXPECT_DOUBLE_EQ(c.ls[50].mean_terr, 0.5 * (a.back() + b.back()));
  EXPECT_DOUBLE_EQ(c.ls[20].mean_terr, 0.5 * (a.back() + b[20]));
  EXPECT_DOUBLE_EQ(c.ls[20].mean_rerr, 2.0 * c.ls[20].mean_terr);
}

TEST(Convergence, RequiresErrorsAndLabels) {
  RefineTrace t = trace_of({1.0});
  t.rows[0].trans_err_m.reset();
  const std::vector<RefineTrace> ts{t};
  EXPECT_THROW(convergence_curves(ts, std::vector<bool>{true}), Error);
  EXPECT_THROW(convergence_curves(ts, std::vector<bool>{}), Error);
}

TEST(Convergence, CsvLayout) {
  const std::vector<RefineTrace> t{trace_of({1.0, 0.5}), trace_of({2.0})};
  const auto c = convergence_curves(t, std::vector<bool>{true, false});
  EXPECT_EQ(convergence_csv(c), "iter,class,mean_terr,mean_rerr\n0,hs,1,2\n1,hs,0.5,1\n0,ls,2,4\n");
}

TEST(Overhead, Examples) {
  EXPECT_EQ(overhead_from_fraction(0.0, 10, 50).reduction_pct, 0.0);
  const auto all = overhead_from_fraction(1.0, 10, 50);
  EXPECT_EQ(all.avg_steps, 10.0);
  EXPECT_EQ(all.reduction_pct, 80.0);
}

TEST(Overhead, AbstractReductions) {
  // Average steps of 36.3 (indoor) and 42.4 (outdoor) against a uniform 50.
  EXPECT_NEAR(overhead_from_average(36.3, 50).reduction_pct, 27.4, 1e-9);
  EXPECT_NEAR(overhead_from_average(42.4, 50).reduction_pct, 15.2, 1e-9);
}

TEST(Overhead, ReportFromScheduledQueries) {
  std::vector<ScoredQuery> s(4);
  s[0].reliable = true;
  s[0].steps = 10;
  for (int i = 1; i < 4; ++i) s[static_cast<std::size_t>(i)].steps = 50;
  const auto r = overhead_report(s, GatingPolicy::indoor());
  EXPECT_DOUBLE_EQ(r.avg_steps, 40.0);
  EXPECT_DOUBLE_EQ(r.reduction_pct, 20.0);
  GatingPolicy f = GatingPolicy::indoor();
  f.mode = GatingMode::filter;
  EXPECT_THROW(overhead_report(s, f), Error);
}

TEST(Overhead, PropertyMatchesFormula) {
  std::mt19937_64 rng(53);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> steps(0, 100);
  for (int i = 0; i < 1000; ++i) {
    const double r = u(rng);
    int hs = steps(rng), ls = steps(rng);
    if (hs > ls) std::swap(hs, ls);
    const auto rep = overhead_from_fraction(r, hs, ls);
    ASSERT_NEAR(rep.avg_steps, r * hs + (1 - r) * ls, 1e-12);
    if (ls > 0) {
      ASSERT_GE(rep.reduction_pct, 0.0);
      ASSERT_LT(rep.reduction_pct, 100.0 + 1e-12);
      if (r > 0 && hs < ls) ASSERT_GT(rep.reduction_pct, 0.0);
    }
  }
}

TEST(Spearman, KnownValues) {
  const std::vector<double> x{1, 2, 3, 4, 5};
  const std::vector<double> up{2, 4, 6, 8, 10}, down{5, 4, 3, 2, 1};
  EXPECT_NEAR(spearman(x, up), 1.0, 1e-12);
  EXPECT_NEAR(spearman(x, down), -1.0, 1e-12);
  const std::vector<double> tied{1, 1, 2, 2, 3};
  EXPECT_EQ(average_ranks(tied), (std::vector<double>{1.5, 1.5, 3.5, 3.5, 5}));
  EXPECT_THROW(spearman(std::vector<double>{1}, std::vector<double>{1}), Error);
}
