#pragma once

#include <algorithm>
#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "lmboost/boosting.hpp"
#include "lmboost/context.hpp"
#include "lmboost/map.hpp"
#include "lmboost/rng.hpp"
#include "lmboost/vocabulary.hpp"

namespace lmboost {

/// Classifier output for one query keypoint: classes ordered by (score desc,
/// class asc), each class at most once.
struct RankedCandidates {
  std::vector<std::pair<std::int32_t, double>> ranked;
  std::int32_t evaluated_classes = 0;

  std::int32_t head_class() const { return ranked.empty() ? -1 : ranked[0].first; }
};

/// A scored keypoint-to-landmark match, ready for pose estimation.
struct Correspondence2D3D {
  std::int64_t frame_id = 0;
  std::int32_t keypoint_index = 0;
  std::int64_t landmark_id = 0;
  double score = 0;
  std::string matcher;
};

/// H(v, c): naive per-learner summation, the reference evaluation path.
inline double score(const BoostedModel& model, const FeatureVector& v, std::int32_t cls) {
  double h = 0;
  for (const auto& learner : model.learners)
    h += learner.evaluate(v.value_at(learner.feature), cls);
  return h;
}

/// Reusable classifier evaluator. Scores decompose as
///   H(v, c) = sum_m k_m(c) + sum_{m : c in S_m} (stump_m(v) - 0)
/// because stored constants of sharing classes are zero; the constant part is
/// precomputed once per model. Restricted evaluation performs the identical
/// per-class operation sequence, so scores are bit-identical to the full one.
class ScoreEvaluator {
 public:
  explicit ScoreEvaluator(const BoostedModel& model)
      : model_(model), constant_part_(static_cast<std::size_t>(model.num_classes()), 0.0) {
    for (const auto& learner : model.learners)
      for (std::int32_t c = 0; c < model.num_classes(); ++c)
        constant_part_[static_cast<std::size_t>(c)] +=
            learner.class_constants[static_cast<std::size_t>(c)];
    scores_.resize(constant_part_.size());
    restricted_.assign(constant_part_.size(), 0);
  }

  /// Scores every class into an internal buffer; returns a view.
  const std::vector<double>& evaluate_all(const FeatureVector& v) {
    scores_ = constant_part_;
    for (const auto& learner : model_.learners) {
      const double value = v.value_at(learner.feature);
      const double h = (value > learner.threshold ? learner.a : 0.0) + learner.b;
      for (const std::int32_t c : learner.sharing)
        scores_[static_cast<std::size_t>(c)] += h;
    }
    return scores_;
  }

  /// Scores only `candidates`; other entries of the buffer are unspecified.
  const std::vector<double>& evaluate_subset(const FeatureVector& v,
                                             const std::vector<std::int32_t>& candidates) {
    for (const std::int32_t c : candidates) {
      scores_[static_cast<std::size_t>(c)] = constant_part_[static_cast<std::size_t>(c)];
      restricted_[static_cast<std::size_t>(c)] = 1;
    }
    for (const auto& learner : model_.learners) {
      const double value = v.value_at(learner.feature);
      const double h = (value > learner.threshold ? learner.a : 0.0) + learner.b;
      for (const std::int32_t c : learner.sharing)
        if (restricted_[static_cast<std::size_t>(c)])
          scores_[static_cast<std::size_t>(c)] += h;
    }
    for (const std::int32_t c : candidates) restricted_[static_cast<std::size_t>(c)] = 0;
    return scores_;
  }

  /// Score of `cls` from the most recent evaluate call (the class must have
  /// been evaluated by it).
  double last_score(std::int32_t cls) const { return scores_[static_cast<std::size_t>(cls)]; }

  const BoostedModel& model() const { return model_; }

 private:
  const BoostedModel& model_;
  std::vector<double> constant_part_;
  std::vector<double> scores_;
  std::vector<std::uint8_t> restricted_;
};

namespace detail {

inline RankedCandidates rank_classes(const std::vector<double>& scores,
                                     const std::vector<std::int32_t>* candidates,
                                     std::int32_t num_classes, std::int32_t top_k) {
  RankedCandidates out;
  if (candidates) {
    out.evaluated_classes = static_cast<std::int32_t>(candidates->size());
    out.ranked.reserve(candidates->size());
    for (const std::int32_t c : *candidates)
      out.ranked.emplace_back(c, scores[static_cast<std::size_t>(c)]);
  } else {
    out.evaluated_classes = num_classes;
    out.ranked.reserve(static_cast<std::size_t>(num_classes));
    for (std::int32_t c = 0; c < num_classes; ++c)
      out.ranked.emplace_back(c, scores[static_cast<std::size_t>(c)]);
  }
  std::sort(out.ranked.begin(), out.ranked.end(), [](const auto& x, const auto& y) {
    if (x.second != y.second) return x.second > y.second;
    return x.first < y.first;
  });
  if (out.ranked.size() > static_cast<std::size_t>(top_k))
    out.ranked.resize(static_cast<std::size_t>(top_k));
  return out;
}

}  // namespace detail

/// Ranks every class (background included) for a query feature vector.
inline RankedCandidates classify(const BoostedModel& model, const FeatureVector& v,
                                 std::int32_t top_k) {
  if (top_k < 1) throw ConfigError("classify: top_k must be >= 1");
  ScoreEvaluator evaluator(model);
  return detail::rank_classes(evaluator.evaluate_all(v), nullptr, model.num_classes(), top_k);
}

inline RankedCandidates classify(ScoreEvaluator& evaluator, const FeatureVector& v,
                                 std::int32_t top_k) {
  return detail::rank_classes(evaluator.evaluate_all(v), nullptr,
                              evaluator.model().num_classes(), top_k);
}

/// Identical to classify restricted to the query word's candidate classes
/// (plus background); evaluated scores are bit-identical to the full pass.
inline RankedCandidates classify_with_inverted_file(ScoreEvaluator& evaluator,
                                                    const FeatureVector& v,
                                                    const BinaryDescriptor& raw_descriptor,
                                                    const InvertedFile& inv,
                                                    std::int32_t top_k) {
  const BoostedModel& model = evaluator.model();
  if (inv.map_fingerprint != model.map_fingerprint)
    throw Error("classify_with_inverted_file: inverted file was built from a different map");
  const std::vector<std::int32_t> candidates =
      candidate_classes(raw_descriptor, model.vocab, inv);
  return detail::rank_classes(evaluator.evaluate_subset(v, candidates), &candidates,
                              model.num_classes(), top_k);
}

inline RankedCandidates classify_with_inverted_file(const BoostedModel& model,
                                                    const FeatureVector& v,
                                                    const BinaryDescriptor& raw_descriptor,
                                                    const InvertedFile& inv,
                                                    std::int32_t top_k) {
  ScoreEvaluator evaluator(model);
  return classify_with_inverted_file(evaluator, v, raw_descriptor, inv, top_k);
}

struct MatchOptions {
  std::int32_t top_k = 10;
  double accept_margin = 0.0;  // head score must exceed background by this
};

/// Runs the classifier over every keypoint of a frame and emits 2D-3D
/// correspondences for the head class. A background head or a head not
/// clearing the margin over the background score drops the keypoint.
inline std::vector<Correspondence2D3D> match_frame(const Frame& frame,
                                                   const BoostedModel& model,
                                                   const InvertedFile* inv,
                                                   const CameraIntrinsics& cam,
                                                   const MatchOptions& options = {}) {
  if (!frame.keypoints.empty() &&
      frame.keypoints[0].descriptor.size_bits() != model.descriptor_bits)
    throw Error("match_frame: descriptor bit count differs from the model");
  std::vector<Correspondence2D3D> out;
  if (frame.keypoints.empty()) return out;

  FrameFeatureBuilder builder(frame, model.bank, model.vocab, cam, model.reference_scale);
  if (builder.degenerate_gravity())
    std::cerr << "match_frame: frame " << frame.frame_id
              << ": gravity is parallel to the optical axis, assuming zero roll\n";
  ScoreEvaluator evaluator(model);
  const std::string tag = inv ? "boost-inv" : "boost";

  for (std::size_t i = 0; i < frame.keypoints.size(); ++i) {
    const FeatureVector v = builder.build(static_cast<std::int32_t>(i));
    RankedCandidates ranked =
        inv ? classify_with_inverted_file(evaluator, v, v.descriptor, *inv, options.top_k)
            : classify(evaluator, v, options.top_k);
    if (ranked.ranked.empty()) continue;
    const auto [head, head_score] = ranked.ranked[0];
    if (head == 0) continue;  // could not be matched to any known landmark
    // The background may have fallen off the truncated list; its score is
    // still in the evaluator buffer (class 0 is evaluated in both paths).
    const double background_score = evaluator.last_score(0);
    if (!(head_score > background_score + options.accept_margin)) continue;
    Correspondence2D3D c;
    c.frame_id = frame.frame_id;
    c.keypoint_index = static_cast<std::int32_t>(i);
    c.landmark_id = model.classes.landmark_of(head);
    c.score = head_score;
    c.matcher = tag;
    out.push_back(std::move(c));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Baseline matchers
// ---------------------------------------------------------------------------

/// Flat database of all landmark observations for exact descriptor search.
struct DescriptorDatabase {
  std::vector<BinaryDescriptor> descriptors;
  std::vector<std::int64_t> landmark_ids;

  static DescriptorDatabase build(const SfMMap& map) {
    DescriptorDatabase db;
    for (const auto& f : map.frames)
      for (const auto& kp : f.keypoints)
        if (kp.landmark_id) {
          db.descriptors.push_back(kp.descriptor);
          db.landmark_ids.push_back(*kp.landmark_id);
        }
    return db;
  }

  std::size_t size() const { return descriptors.size(); }
};

/// Ranked landmarks for one query of a baseline matcher (best distance per
/// landmark, ascending; ties by landmark id).
struct RankedLandmarks {
  std::vector<std::pair<std::int64_t, double>> ranked;  // (landmark, distance)
};

namespace detail {

inline RankedLandmarks rank_landmarks(std::vector<std::pair<double, std::int64_t>>& hits,
                                      std::int32_t top_k) {
  std::sort(hits.begin(), hits.end());
  RankedLandmarks out;
  std::vector<std::int64_t> seen;
  for (const auto& [d, lid] : hits) {
    if (std::find(seen.begin(), seen.end(), lid) != seen.end()) continue;
    seen.push_back(lid);
    out.ranked.emplace_back(lid, d);
    if (out.ranked.size() == static_cast<std::size_t>(top_k)) break;
  }
  return out;
}

}  // namespace detail

/// Exact Hamming nearest-neighbor search over all database descriptors.
inline std::vector<RankedLandmarks> match_hamming_baseline(const Frame& frame,
                                                           const DescriptorDatabase& db,
                                                           std::int32_t top_k) {
  std::vector<RankedLandmarks> out;
  out.reserve(frame.keypoints.size());
  std::vector<std::pair<double, std::int64_t>> hits;
  for (const auto& kp : frame.keypoints) {
    hits.clear();
    hits.reserve(db.size());
    for (std::size_t i = 0; i < db.size(); ++i)
      hits.emplace_back(static_cast<double>(hamming_distance(kp.descriptor, db.descriptors[i])),
                        db.landmark_ids[i]);
    out.push_back(detail::rank_landmarks(hits, top_k));
  }
  return out;
}

/// Seeded random signed projection of +-1-mapped bits into 16 dimensions,
/// rows orthonormalized, fixed at database build time.
struct ProjectedDatabase {
  static constexpr int kDim = 16;
  Eigen::MatrixXd projection;  // kDim x descriptor_bits
  Eigen::MatrixXd points;      // kDim x n
  std::vector<std::int64_t> landmark_ids;

  static Eigen::MatrixXd make_projection(std::uint32_t descriptor_bits, std::uint64_t seed) {
    Rng rng(seed);
    Eigen::MatrixXd p(kDim, descriptor_bits);
    for (int r = 0; r < kDim; ++r)
      for (std::uint32_t c = 0; c < descriptor_bits; ++c)
        p(r, c) = (rng() & 1) ? 1.0 : -1.0;
    // Gram-Schmidt on the rows.
    for (int r = 0; r < kDim; ++r) {
      for (int q = 0; q < r; ++q) p.row(r) -= p.row(r).dot(p.row(q)) * p.row(q);
      const double n = p.row(r).norm();
      if (n < 1e-12) throw Error("projected baseline: degenerate projection row");
      p.row(r) /= n;
    }
    return p;
  }

  Eigen::VectorXd project(const BinaryDescriptor& d) const {
    Eigen::VectorXd x(projection.cols());
    for (int b = 0; b < x.size(); ++b)
      x(b) = d.get(static_cast<std::uint32_t>(b)) ? 1.0 : -1.0;
    return projection * x;
  }

  static ProjectedDatabase build(const SfMMap& map, std::uint64_t seed) {
    ProjectedDatabase db;
    db.projection = make_projection(map.descriptor_bits, seed);
    const DescriptorDatabase flat = DescriptorDatabase::build(map);
    db.points.resize(kDim, static_cast<Eigen::Index>(flat.size()));
    for (std::size_t i = 0; i < flat.size(); ++i)
      db.points.col(static_cast<Eigen::Index>(i)) = db.project(flat.descriptors[i]);
    db.landmark_ids = flat.landmark_ids;
    return db;
  }

  std::size_t size() const { return landmark_ids.size(); }
};

/// Exact Euclidean nearest-neighbor search in the projected space.
inline std::vector<RankedLandmarks> match_projected_baseline(const Frame& frame,
                                                             const ProjectedDatabase& db,
                                                             std::int32_t top_k) {
  std::vector<RankedLandmarks> out;
  out.reserve(frame.keypoints.size());
  std::vector<std::pair<double, std::int64_t>> hits;
  for (const auto& kp : frame.keypoints) {
    const Eigen::VectorXd q = db.project(kp.descriptor);
    hits.clear();
    hits.reserve(db.size());
    for (std::size_t i = 0; i < db.size(); ++i)
      hits.emplace_back((db.points.col(static_cast<Eigen::Index>(i)) - q).norm(),
                        db.landmark_ids[i]);
    out.push_back(detail::rank_landmarks(hits, top_k));
  }
  return out;
}

/// Head-of-list correspondences for a baseline matcher.
inline std::vector<Correspondence2D3D> baseline_correspondences(
    const Frame& frame, const std::vector<RankedLandmarks>& ranked,
    const std::string& matcher) {
  std::vector<Correspondence2D3D> out;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    if (ranked[i].ranked.empty()) continue;
    Correspondence2D3D c;
    c.frame_id = frame.frame_id;
    c.keypoint_index = static_cast<std::int32_t>(i);
    c.landmark_id = ranked[i].ranked[0].first;
    c.score = -ranked[i].ranked[0].second;  // higher is better
    c.matcher = matcher;
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace lmboost
