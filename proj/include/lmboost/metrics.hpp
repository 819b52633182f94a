#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lmboost/errors.hpp"
#include "lmboost/geometry.hpp"

namespace lmboost {

/// One query keypoint's retrieval outcome. Candidates are landmark ids
/// (background/no-match = -1), best first.
struct RetrievalRecord {
  std::int64_t frame_id = 0;
  std::int32_t keypoint_index = 0;
  std::int64_t true_landmark = -1;
  std::vector<std::pair<std::int64_t, double>> ranked;  // (landmark, score)
  std::int32_t evaluated_classes = 0;
  double match_ms = 0;
};

/// One query frame's localization outcome.
struct PoseRecord {
  std::int64_t frame_id = 0;
  std::optional<Pose> estimate;
  Pose truth;
  std::int32_t inliers = 0;
  std::int32_t total_correspondences = 0;
  double inlier_ratio = 0;
  double match_ms = 0;
  double ransac_ms = 0;

  double confidence() const { return static_cast<double>(inliers); }
};

/// Rank (1-based) of the true landmark in the candidate list, 0 if absent.
inline std::size_t true_rank(const RetrievalRecord& r) {
  for (std::size_t i = 0; i < r.ranked.size(); ++i)
    if (r.ranked[i].first == r.true_landmark) return i + 1;
  return 0;
}

/// Fraction of records whose first candidate is the true landmark.
/// Background-headed records count as misses.
inline double precision_at_1(const std::vector<RetrievalRecord>& records) {
  if (records.empty()) throw MetricError("precision_at_1: empty record set");
  std::size_t correct = 0;
  for (const auto& r : records)
    if (!r.ranked.empty() && r.ranked[0].first == r.true_landmark) ++correct;
  return static_cast<double>(correct) / static_cast<double>(records.size());
}

/// Mean of 1/rank of the true landmark; absent candidates contribute 0.
inline double mean_reciprocal_rank(const std::vector<RetrievalRecord>& records) {
  if (records.empty()) throw MetricError("mean_reciprocal_rank: empty record set");
  double sum = 0;
  for (const auto& r : records) {
    const std::size_t rank = true_rank(r);
    if (rank > 0) sum += 1.0 / static_cast<double>(rank);
  }
  return sum / static_cast<double>(records.size());
}

struct MissRatePoint {
  std::int32_t budget = 0;
  double false_positives_per_query = 0;
  double miss_rate = 0;
};

/// Caltech-style miss rate vs false positives per query over a grid of
/// candidate budgets. At budget k a query misses when the true landmark is
/// absent from the top k; its false-positive count is the number of
/// non-true candidates ranked above the true one, or k on a miss.
inline std::vector<MissRatePoint> miss_rate_curve(const std::vector<RetrievalRecord>& records,
                                                  const std::vector<std::int32_t>& budgets) {
  for (std::size_t i = 1; i < budgets.size(); ++i)
    if (budgets[i] <= budgets[i - 1])
      throw ConfigError("miss_rate_curve: budgets must be strictly increasing");
  std::vector<MissRatePoint> curve;
  for (const std::int32_t k : budgets) {
    MissRatePoint point;
    point.budget = k;
    if (records.empty()) {
      curve.push_back(point);
      continue;
    }
    double fp = 0;
    std::size_t misses = 0;
    for (const auto& r : records) {
      const std::size_t rank = true_rank(r);
      if (rank == 0 || rank > static_cast<std::size_t>(k)) {
        ++misses;
        fp += static_cast<double>(k);
      } else {
        fp += static_cast<double>(rank - 1);
      }
    }
    point.false_positives_per_query = fp / static_cast<double>(records.size());
    point.miss_rate = static_cast<double>(misses) / static_cast<double>(records.size());
    curve.push_back(point);
  }
  return curve;
}

struct PrPoint {
  double threshold = 0;  // confidence cut
  double precision = 1;
  double recall = 0;
};

struct PrCurve {
  std::vector<PrPoint> points;  // recall non-decreasing along the sweep
  double auc = 0;
};

struct PoseErrorThresholds {
  double translation = 0.2;  // meters
  double rotation = 5.0;     // degrees
};

/// Precision-recall over a confidence sweep: a returned pose is correct iff
/// both errors are within the thresholds; precision of an empty return set is
/// 1 by convention. AUC integrates precision over recall by trapezoid.
inline PrCurve pose_pr_auc(const std::vector<PoseRecord>& records,
                           const PoseErrorThresholds& thresholds = {}) {
  PrCurve curve;
  const double total = static_cast<double>(records.size());
  if (records.empty()) return curve;

  struct Entry {
    double confidence;
    bool correct;
  };
  std::vector<Entry> entries;
  for (const auto& r : records) {
    if (!r.estimate) continue;
    const auto [t_err, r_err] = pose_error(*r.estimate, r.truth);
    entries.push_back(
        {r.confidence(), t_err <= thresholds.translation && r_err <= thresholds.rotation});
  }
  std::sort(entries.begin(), entries.end(),
            [](const Entry& a, const Entry& b) { return a.confidence > b.confidence; });

  curve.points.push_back({entries.empty() ? 0.0 : entries[0].confidence + 1.0, 1.0, 0.0});
  std::size_t returned = 0, correct = 0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    ++returned;
    if (entries[i].correct) ++correct;
    if (i + 1 < entries.size() && entries[i + 1].confidence == entries[i].confidence)
      continue;  // sweep moves between distinct confidence values
    curve.points.push_back({entries[i].confidence,
                            static_cast<double>(correct) / static_cast<double>(returned),
                            static_cast<double>(correct) / total});
  }
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    const auto& lo = curve.points[i - 1];
    const auto& hi = curve.points[i];
    curve.auc += (hi.recall - lo.recall) * (hi.precision + lo.precision) / 2.0;
  }
  return curve;
}

struct RuntimeRow {
  std::string matcher;
  double mean_match_ms = 0;
  double mean_inlier_ratio = 0;
  std::size_t frames = 0;
};

/// Per-matcher mean runtime and inlier ratio (the scatter itself is dumped by
/// the experiment runner).
inline std::vector<RuntimeRow> runtime_inlier_report(
    const std::vector<std::pair<std::string, std::vector<PoseRecord>>>& per_matcher) {
  std::vector<RuntimeRow> rows;
  for (const auto& [matcher, records] : per_matcher) {
    if (records.empty()) throw MetricError("runtime_inlier_report: no records for " + matcher);
    RuntimeRow row;
    row.matcher = matcher;
    row.frames = records.size();
    for (const auto& r : records) {
      row.mean_match_ms += r.match_ms;
      row.mean_inlier_ratio += r.inlier_ratio;
    }
    row.mean_match_ms /= static_cast<double>(records.size());
    row.mean_inlier_ratio /= static_cast<double>(records.size());
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace lmboost
