#include <catch2/catch_amalgamated.hpp>

#include "lmboost/metrics.hpp"
#include "lmboost/rng.hpp"

using namespace lmboost;

namespace {

RetrievalRecord record(std::int64_t truth, std::vector<std::int64_t> candidates) {
  RetrievalRecord r;
  r.true_landmark = truth;
  double score = static_cast<double>(candidates.size());
  for (const auto lid : candidates) r.ranked.emplace_back(lid, score--);
  return r;
}

std::vector<RetrievalRecord> random_records(Rng& rng, std::size_t n) {
  std::vector<RetrievalRecord> records;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::int64_t> candidates;
    for (int c = 0; c < 8; ++c) candidates.push_back(static_cast<std::int64_t>(c));
    shuffle(candidates, rng);
    candidates.resize(1 + uniform_below(rng, 7));
    records.push_back(record(static_cast<std::int64_t>(uniform_below(rng, 10)), candidates));
  }
  return records;
}

}  // namespace

TEST_CASE("precision_at_1 counts exact head matches", "[metrics]") {
  SECTION("all heads correct") {
    std::vector<RetrievalRecord> records = {record(1, {1, 2}), record(5, {5})};
    CHECK(precision_at_1(records) == 1.0);
  }
  SECTION("no head correct") {
    std::vector<RetrievalRecord> records = {record(1, {2, 1}), record(5, {-1, 5})};
    CHECK(precision_at_1(records) == 0.0);
  }
  SECTION("mixed set matches a hand count") {
    std::vector<RetrievalRecord> records = {record(1, {1}),    record(2, {3, 2}),
                                            record(3, {3, 1}), record(4, {}),
                                            record(5, {5, 4}), record(6, {0, 6})};
    CHECK(precision_at_1(records) == Catch::Approx(3.0 / 6.0));
  }
  SECTION("empty input is an error") {
    CHECK_THROWS_AS(precision_at_1({}), MetricError);
  }
}

TEST_CASE("mean_reciprocal_rank averages 1/rank", "[metrics]") {
  SECTION("rank one everywhere") {
    std::vector<RetrievalRecord> records = {record(1, {1, 9}), record(2, {2})};
    CHECK(mean_reciprocal_rank(records) == 1.0);
  }
  SECTION("single record at rank four") {
    std::vector<RetrievalRecord> records = {record(7, {1, 2, 3, 7})};
    CHECK(mean_reciprocal_rank(records) == Catch::Approx(0.25));
  }
  SECTION("absent true class contributes zero") {
    std::vector<RetrievalRecord> records = {record(7, {1, 2}), record(3, {3})};
    CHECK(mean_reciprocal_rank(records) == Catch::Approx(0.5));
  }
  SECTION("MRR >= precision@1 on random record sets") {
    Rng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
      const auto records = random_records(rng, 40);
      CHECK(mean_reciprocal_rank(records) >= precision_at_1(records) - 1e-12);
    }
  }
  SECTION("empty input is an error") {
    CHECK_THROWS_AS(mean_reciprocal_rank({}), MetricError);
  }
}

TEST_CASE("miss_rate_curve sweeps candidate budgets", "[metrics]") {
  SECTION("perfect retrieval has zero miss rate and zero false positives") {
    std::vector<RetrievalRecord> records = {record(1, {1, 2, 3}), record(2, {2, 9})};
    const auto curve = miss_rate_curve(records, {1, 2, 5});
    for (const auto& p : curve) {
      CHECK(p.miss_rate == 0.0);
      CHECK(p.false_positives_per_query == 0.0);
    }
  }
  SECTION("true class at rank two misses only budget one") {
    std::vector<RetrievalRecord> records = {record(1, {9, 1}), record(2, {8, 2})};
    const auto curve = miss_rate_curve(records, {1, 2});
    CHECK(curve[0].miss_rate == 1.0);
    CHECK(curve[0].false_positives_per_query == 1.0);
    CHECK(curve[1].miss_rate == 0.0);
    CHECK(curve[1].false_positives_per_query == 1.0);
  }
  SECTION("random records match direct enumeration") {
    Rng rng(23);
    const auto records = random_records(rng, 60);
    const std::vector<std::int32_t> budgets = {1, 2, 5};
    const auto curve = miss_rate_curve(records, budgets);
    for (std::size_t bi = 0; bi < budgets.size(); ++bi) {
      double misses = 0, fp = 0;
      for (const auto& r : records) {
        std::size_t rank = 0;
        for (std::size_t i = 0; i < r.ranked.size(); ++i)
          if (r.ranked[i].first == r.true_landmark) {
            rank = i + 1;
            break;
          }
        if (rank == 0 || rank > static_cast<std::size_t>(budgets[bi])) {
          misses += 1;
          fp += budgets[bi];
        } else {
          fp += static_cast<double>(rank - 1);
        }
      }
      CHECK(curve[bi].miss_rate == Catch::Approx(misses / records.size()));
      CHECK(curve[bi].false_positives_per_query == Catch::Approx(fp / records.size()));
    }
  }
  SECTION("miss rate is non-increasing in the budget") {
    Rng rng(31);
    const auto records = random_records(rng, 80);
    const auto curve = miss_rate_curve(records, {1, 2, 5, 10, 20, 50});
    for (std::size_t i = 1; i < curve.size(); ++i)
      CHECK(curve[i].miss_rate <= curve[i - 1].miss_rate + 1e-12);
  }
  SECTION("non-increasing budgets are rejected") {
    CHECK_THROWS_AS(miss_rate_curve({}, {2, 2}), ConfigError);
  }
}

namespace {

PoseRecord pose_record(double t_err, double r_err_deg, std::int32_t inliers, bool returned) {
  PoseRecord r;
  r.truth = Pose{};
  if (returned) {
    Pose est;
    est.translation = {t_err, 0, 0};
    est.rotation =
        Eigen::AngleAxisd(r_err_deg * M_PI / 180.0, Eigen::Vector3d::UnitZ()).toRotationMatrix();
    r.estimate = est;
  }
  r.inliers = inliers;
  return r;
}

}  // namespace

TEST_CASE("pose_pr_auc sweeps confidence and integrates precision", "[metrics]") {
  SECTION("all poses exact and returned gives AUC 1") {
    std::vector<PoseRecord> records;
    for (int i = 0; i < 5; ++i) records.push_back(pose_record(0, 0, 10 + i, true));
    const PrCurve curve = pose_pr_auc(records);
    CHECK(curve.auc == Catch::Approx(1.0));
    CHECK(curve.points.front().recall == 0.0);
    CHECK(curve.points.front().precision == 1.0);
    CHECK(curve.points.back().recall == Catch::Approx(1.0));
  }
  SECTION("no returned pose gives the (0, 1) endpoint only") {
    std::vector<PoseRecord> records = {pose_record(0, 0, 0, false)};
    const PrCurve curve = pose_pr_auc(records);
    CHECK(curve.auc == 0.0);
    REQUIRE(curve.points.size() == 1);
    CHECK(curve.points[0].precision == 1.0);
    CHECK(curve.points[0].recall == 0.0);
  }
  SECTION("hand-computed mixed set") {
    // confidences 30 (correct), 20 (wrong), 10 (correct); 4 frames total
    std::vector<PoseRecord> records = {
        pose_record(0.05, 1.0, 30, true),   // within thresholds
        pose_record(0.50, 0.0, 20, true),   // translation too far
        pose_record(0.10, 2.0, 10, true),   // within
        pose_record(0, 0, 0, false),        // not returned
    };
    const PrCurve curve = pose_pr_auc(records);
    // sweep: conf>=30: p=1, r=1/4; conf>=20: p=1/2, r=1/4; conf>=10: p=2/3, r=1/2
    REQUIRE(curve.points.size() == 4);
    CHECK(curve.points[1].precision == Catch::Approx(1.0));
    CHECK(curve.points[1].recall == Catch::Approx(0.25));
    CHECK(curve.points[2].precision == Catch::Approx(0.5));
    CHECK(curve.points[2].recall == Catch::Approx(0.25));
    CHECK(curve.points[3].precision == Catch::Approx(2.0 / 3.0));
    CHECK(curve.points[3].recall == Catch::Approx(0.5));
    const double expected_auc = 0.25 * 1.0 + 0.25 * (0.5 + 2.0 / 3.0) / 2.0;
    CHECK(curve.auc == Catch::Approx(expected_auc));
  }
  SECTION("recall is non-decreasing along the sweep") {
    Rng rng(47);
    std::vector<PoseRecord> records;
    for (int i = 0; i < 50; ++i)
      records.push_back(pose_record(uniform_real(rng, 0, 0.5), uniform_real(rng, 0, 10),
                                    static_cast<std::int32_t>(uniform_below(rng, 20)),
                                    uniform01(rng) < 0.8));
    const PrCurve curve = pose_pr_auc(records);
    for (std::size_t i = 1; i < curve.points.size(); ++i)
      CHECK(curve.points[i].recall >= curve.points[i - 1].recall - 1e-12);
  }
}

TEST_CASE("runtime_inlier_report averages per matcher", "[metrics]") {
  SECTION("a single record reports itself") {
    PoseRecord r;
    r.match_ms = 12.5;
    r.inlier_ratio = 0.75;
    const auto rows = runtime_inlier_report({{"hamming", {r}}});
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].mean_match_ms == 12.5);
    CHECK(rows[0].mean_inlier_ratio == 0.75);
  }
  SECTION("identical record sets give identical rows") {
    PoseRecord a, b;
    a.match_ms = 4;
    a.inlier_ratio = 0.5;
    b.match_ms = 8;
    b.inlier_ratio = 0.7;
    const auto rows = runtime_inlier_report({{"x", {a, b}}, {"y", {a, b}}});
    CHECK(rows[0].mean_match_ms == rows[1].mean_match_ms);
    CHECK(rows[0].mean_inlier_ratio == rows[1].mean_inlier_ratio);
  }
  SECTION("means equal independent recomputation") {
    Rng rng(3);
    std::vector<PoseRecord> records;
    double sum_ms = 0, sum_ratio = 0;
    for (int i = 0; i < 20; ++i) {
      PoseRecord r;
      r.match_ms = uniform_real(rng, 1, 50);
      r.inlier_ratio = uniform01(rng);
      sum_ms += r.match_ms;
      sum_ratio += r.inlier_ratio;
      records.push_back(r);
    }
    const auto rows = runtime_inlier_report({{"boost", records}});
    CHECK(rows[0].mean_match_ms == Catch::Approx(sum_ms / 20));
    CHECK(rows[0].mean_inlier_ratio == Catch::Approx(sum_ratio / 20));
  }
  SECTION("a matcher without records is an error") {
    CHECK_THROWS_AS(runtime_inlier_report({{"empty", {}}}), MetricError);
  }
}
