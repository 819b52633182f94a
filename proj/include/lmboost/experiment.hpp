#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lmboost/boosting.hpp"
#include "lmboost/errors.hpp"
#include "lmboost/map.hpp"
#include "lmboost/matching.hpp"
#include "lmboost/metrics.hpp"
#include "lmboost/model_io.hpp"
#include "lmboost/pose.hpp"
#include "lmboost/synthworld.hpp"
#include "lmboost/vocabulary.hpp"

namespace lmboost {

/// Declarative experiment description; see docs/experiment_spec.md.
struct ExperimentSpec {
  std::string name = "experiment";
  std::uint64_t seed = 1;
  WorldConfig world;
  std::uint32_t vocab_k = 16;
  std::uint32_t vocab_max_iters = 25;
  std::size_t region_count = 300;
  RegionConfig region_config;
  TrainConfig train;
  std::optional<std::string> model_path;  // consume a pretrained model instead
  std::vector<std::string> matchers = {"boost", "boost-inv", "hamming", "projected"};
  std::int32_t top_k = 10;
  std::vector<std::int32_t> budgets = {1, 2, 5, 10, 20, 50};
  double accept_margin = 0.0;
  RansacConfig ransac;
  double ransac_threshold_px = 2.0;
  bool localize = true;
};

inline ExperimentSpec parse_experiment_spec(const nlohmann::json& j) {
  ExperimentSpec spec;
  try {
    if (j.contains("name")) spec.name = j.at("name").get<std::string>();
    if (j.contains("seed")) spec.seed = j.at("seed").get<std::uint64_t>();
    spec.world.seed = spec.seed;
    if (j.contains("world")) from_json_config(j.at("world"), spec.world);
    if (j.contains("vocabulary")) {
      const auto& v = j.at("vocabulary");
      if (v.contains("k")) spec.vocab_k = v.at("k").get<std::uint32_t>();
      if (v.contains("max_iters")) spec.vocab_max_iters = v.at("max_iters").get<std::uint32_t>();
    }
    if (j.contains("regions")) {
      const auto& r = j.at("regions");
      if (r.contains("count")) spec.region_count = r.at("count").get<std::size_t>();
      auto get = [&r](const char* key, double& field) {
        if (r.contains(key)) field = r.at(key).get<double>();
      };
      get("area_min", spec.region_config.area_min);
      get("area_max", spec.region_config.area_max);
      get("aspect_min", spec.region_config.aspect_min);
      get("aspect_max", spec.region_config.aspect_max);
      get("offset_radius", spec.region_config.offset_radius);
    }
    spec.train.seed = spec.seed;
    if (j.contains("train")) {
      const auto& t = j.at("train");
      auto geti = [&t](const char* key, std::int32_t& field) {
        if (t.contains(key)) field = t.at(key).get<std::int32_t>();
      };
      auto getd = [&t](const char* key, double& field) {
        if (t.contains(key)) field = t.at(key).get<double>();
      };
      geti("rounds", spec.train.rounds);
      geti("features_per_round", spec.train.features_per_round);
      geti("threshold_cap", spec.train.threshold_cap);
      getd("negative_ratio", spec.train.negative_ratio);
      geti("negative_cap", spec.train.negative_cap);
      geti("mining_period", spec.train.mining_period);
      getd("mining_growth", spec.train.mining_growth);
      geti("landmark_budget", spec.train.landmark_budget);
      geti("background_cap", spec.train.background_cap);
      getd("holdout_fraction", spec.train.holdout_fraction);
      getd("exclusion_radius", spec.train.exclusion_radius);
      geti("exhaustive_sharing_limit", spec.train.exhaustive_sharing_limit);
      if (t.contains("include_descriptor"))
        spec.train.include_descriptor = t.at("include_descriptor").get<bool>();
      if (t.contains("seed")) spec.train.seed = t.at("seed").get<std::uint64_t>();
    }
    if (j.contains("model_path")) spec.model_path = j.at("model_path").get<std::string>();
    if (j.contains("matchers"))
      spec.matchers = j.at("matchers").get<std::vector<std::string>>();
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      if (e.contains("top_k")) spec.top_k = e.at("top_k").get<std::int32_t>();
      if (e.contains("budgets"))
        spec.budgets = e.at("budgets").get<std::vector<std::int32_t>>();
      if (e.contains("accept_margin"))
        spec.accept_margin = e.at("accept_margin").get<double>();
      if (e.contains("localize")) spec.localize = e.at("localize").get<bool>();
      if (e.contains("ransac")) {
        const auto& r = e.at("ransac");
        if (r.contains("max_iterations"))
          spec.ransac.max_iterations = r.at("max_iterations").get<std::int32_t>();
        if (r.contains("inlier_threshold_px"))
          spec.ransac_threshold_px = r.at("inlier_threshold_px").get<double>();
        if (r.contains("min_inliers"))
          spec.ransac.min_inliers = r.at("min_inliers").get<std::int32_t>();
        if (r.contains("confidence"))
          spec.ransac.confidence = r.at("confidence").get<double>();
      }
    }
    for (const auto& m : spec.matchers)
      if (m != "boost" && m != "boost-inv" && m != "hamming" && m != "projected")
        throw ConfigError("unknown matcher '" + m + "'");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("experiment spec: ") + e.what());
  }
  return spec;
}

inline ExperimentSpec load_experiment_spec(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open experiment spec '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return parse_experiment_spec(j);
}

struct MatcherSummary {
  std::string matcher;
  std::size_t tracked_queries = 0;
  std::size_t untracked_queries = 0;
  double precision_at_1 = 0;
  double mrr = 0;
  double mean_evaluated_classes = 0;
  double untracked_background_rate = 0;  // classifier matchers only
  double pose_auc = 0;
  std::size_t localized_frames = 0;
};

struct ExperimentResult {
  std::filesystem::path out_dir;
  std::vector<MatcherSummary> summaries;
  std::vector<RoundLog> training_log;
  std::int32_t num_classes = 0;

  const MatcherSummary& summary(const std::string& matcher) const {
    for (const auto& s : summaries)
      if (s.matcher == matcher) return s;
    throw Error("no summary for matcher '" + matcher + "'");
  }
};

namespace detail {

inline void write_csv_double(std::ostream& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  out << buf;
}

class ExperimentRunner {
 public:
  ExperimentRunner(const ExperimentSpec& spec, std::filesystem::path out_dir)
      : spec_(spec), out_(std::move(out_dir)) {}

  ExperimentResult run() {
    namespace fs = std::filesystem;
    fs::create_directories(out_ / "artifacts");
    fs::create_directories(out_ / "reports");
    fs::create_directories(out_ / "timings");

    stage_ = "synth";
    world_ = generate_world(spec_.world);
    save_map(world_.train_map, (out_ / "artifacts" / "train_map.jsonl").string());
    save_map(world_.eval_map, (out_ / "artifacts" / "eval_map.jsonl").string());
    save_ground_truth(world_, (out_ / "artifacts" / "ground_truth.csv").string());

    stage_ = "vocab";
    {
      // The vocabulary is trained on a shadow world with a derived seed: same
      // descriptor statistics, unrelated content.
      WorldConfig shadow = spec_.world;
      shadow.seed = derive_seed(spec_.seed, "vocab-world");
      shadow.eval_frames = 1;
      const GeneratedWorld unrelated = generate_world(shadow);
      std::vector<BinaryDescriptor> pool;
      for (const auto& f : unrelated.train_map.frames)
        for (const auto& kp : f.keypoints) pool.push_back(kp.descriptor);
      vocab_ = train_vocabulary(pool, spec_.vocab_k, derive_seed(spec_.seed, "vocab"),
                                spec_.vocab_max_iters);
      save_vocabulary(vocab_, (out_ / "artifacts" / "vocabulary.txt").string());
    }

    stage_ = "regions";
    bank_ = generate_regions(spec_.region_count, spec_.region_config,
                             derive_seed(spec_.seed, "regions"));

    stage_ = "train";
    const bool needs_model = std::any_of(
        spec_.matchers.begin(), spec_.matchers.end(),
        [](const std::string& m) { return m == "boost" || m == "boost-inv"; });
    if (needs_model) {
      if (spec_.model_path) {
        if (!fs::exists(*spec_.model_path))
          throw StageError("train", "model file '" + *spec_.model_path + "' does not exist");
        model_ = load_model(*spec_.model_path);
      } else {
        const TrainingData data =
            build_training_set(world_.train_map, bank_, vocab_, spec_.train);
        model_ = train(spec_.train, data, bank_, vocab_, &training_log_);
      }
      save_model(*model_, (out_ / "artifacts" / "model.json").string());
      write_training_log();
      inverted_ = build_inverted_file(world_.train_map, vocab_, model_->classes);
    }

    ransac_ = spec_.ransac;
    ransac_.inlier_threshold =
        pixel_threshold_to_normalized(spec_.ransac_threshold_px, spec_.world.camera);

    ExperimentResult result;
    result.out_dir = out_;
    result.training_log = training_log_;
    result.num_classes = model_ ? model_->num_classes() : 0;
    std::vector<std::pair<std::string, std::vector<PoseRecord>>> pose_sets;
    for (const auto& matcher : spec_.matchers) {
      stage_ = "match";
      MatcherSummary summary = evaluate_matcher(matcher);
      if (spec_.localize) {
        stage_ = "localize";
        std::vector<PoseRecord> poses = localize_matcher(matcher);
        stage_ = "eval";
        const PrCurve curve = pose_pr_auc(poses);
        summary.pose_auc = curve.auc;
        for (const auto& r : poses)
          if (r.estimate) ++summary.localized_frames;
        write_pose_reports(matcher, poses, curve);
        pose_sets.emplace_back(matcher, std::move(poses));
      }
      result.summaries.push_back(std::move(summary));
    }

    stage_ = "report";
    if (!pose_sets.empty()) write_runtime_report(pose_sets);
    write_summary(result);
    return result;
  }

  const std::string& stage() const { return stage_; }

 private:
  using Clock = std::chrono::steady_clock;

  static double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
  }

  /// Ranked landmark lists per keypoint for one eval frame.
  std::vector<std::vector<std::pair<std::int64_t, double>>> rank_frame(
      const std::string& matcher, const Frame& frame, ScoreEvaluator* evaluator,
      const DescriptorDatabase* hamming_db, const ProjectedDatabase* projected_db,
      std::int32_t top_k, std::vector<std::int32_t>* evaluated) {
    std::vector<std::vector<std::pair<std::int64_t, double>>> out(frame.keypoints.size());
    if (matcher == "hamming") {
      const auto ranked = match_hamming_baseline(frame, *hamming_db, top_k);
      for (std::size_t i = 0; i < ranked.size(); ++i)
        for (const auto& [lid, d] : ranked[i].ranked) out[i].emplace_back(lid, -d);
      return out;
    }
    if (matcher == "projected") {
      const auto ranked = match_projected_baseline(frame, *projected_db, top_k);
      for (std::size_t i = 0; i < ranked.size(); ++i)
        for (const auto& [lid, d] : ranked[i].ranked) out[i].emplace_back(lid, -d);
      return out;
    }
    const bool use_inverted = matcher == "boost-inv";
    FrameFeatureBuilder builder(frame, model_->bank, model_->vocab,
                                world_.eval_map.camera_of(frame), model_->reference_scale);
    for (std::size_t i = 0; i < frame.keypoints.size(); ++i) {
      const FeatureVector v = builder.build(static_cast<std::int32_t>(i));
      const RankedCandidates ranked =
          use_inverted ? classify_with_inverted_file(*evaluator, v, v.descriptor,
                                                     *inverted_, top_k)
                       : classify(*evaluator, v, top_k);
      if (evaluated) evaluated->push_back(ranked.evaluated_classes);
      for (const auto& [cls, score] : ranked.ranked)
        out[i].emplace_back(cls == 0 ? -1 : model_->classes.landmark_of(cls), score);
    }
    return out;
  }

  MatcherSummary evaluate_matcher(const std::string& matcher) {
    const std::int32_t top_k =
        std::max(spec_.top_k, spec_.budgets.empty() ? 1 : spec_.budgets.back());

    std::optional<ScoreEvaluator> evaluator;
    std::optional<DescriptorDatabase> hamming_db;
    std::optional<ProjectedDatabase> projected_db;
    if (matcher == "hamming") {
      hamming_db = DescriptorDatabase::build(world_.train_map);
    } else if (matcher == "projected") {
      projected_db =
          ProjectedDatabase::build(world_.train_map, derive_seed(spec_.seed, "projection"));
    } else {
      if (!model_) throw StageError("match", "matcher '" + matcher + "' needs a model");
      evaluator.emplace(*model_);
    }

    std::vector<RetrievalRecord> tracked;
    std::vector<RetrievalRecord> untracked;
    std::size_t untracked_background_heads = 0;
    double evaluated_sum = 0;
    std::size_t evaluated_n = 0;

    std::ofstream ranked_csv(out_ / "reports" / ("ranked_" + matcher + ".csv"),
                             std::ios::binary);
    ranked_csv << "frame_id,keypoint_index,true_landmark,rank,landmark_id,score\n";
    std::ofstream corr_csv(out_ / "reports" / ("correspondences_" + matcher + ".csv"),
                           std::ios::binary);
    corr_csv << "frame_id,keypoint_index,landmark_id,score,matcher\n";
    std::ofstream times_csv(out_ / "timings" / ("query_times_" + matcher + ".csv"),
                            std::ios::binary);
    times_csv << "frame_id,keypoints,match_ms\n";

    for (std::size_t fi = 0; fi < world_.eval_map.frames.size(); ++fi) {
      const Frame& frame = world_.eval_map.frames[fi];
      const auto& truth = world_.eval_true_landmarks[fi];
      std::vector<std::int32_t> evaluated;
      const auto t0 = Clock::now();
      const auto ranked = rank_frame(matcher, frame, evaluator ? &*evaluator : nullptr,
                                     hamming_db ? &*hamming_db : nullptr,
                                     projected_db ? &*projected_db : nullptr, top_k,
                                     &evaluated);
      const double frame_ms = ms_since(t0);
      times_csv << frame.frame_id << ',' << frame.keypoints.size() << ',';
      write_csv_double(times_csv, frame_ms);
      times_csv << '\n';

      for (std::size_t i = 0; i < ranked.size(); ++i) {
        RetrievalRecord record;
        record.frame_id = frame.frame_id;
        record.keypoint_index = static_cast<std::int32_t>(i);
        record.true_landmark = truth[i];
        record.ranked = ranked[i];
        if (!evaluated.empty()) {
          record.evaluated_classes = evaluated[i];
          evaluated_sum += evaluated[i];
          ++evaluated_n;
        }
        for (std::size_t r = 0; r < record.ranked.size(); ++r) {
          ranked_csv << record.frame_id << ',' << record.keypoint_index << ','
                     << record.true_landmark << ',' << (r + 1) << ','
                     << record.ranked[r].first << ',';
          write_csv_double(ranked_csv, record.ranked[r].second);
          ranked_csv << '\n';
        }
        // Correspondence dump: head match, classifier background gate applied.
        if (!record.ranked.empty() && record.ranked[0].first >= 0) {
          corr_csv << record.frame_id << ',' << record.keypoint_index << ','
                   << record.ranked[0].first << ',';
          write_csv_double(corr_csv, record.ranked[0].second);
          corr_csv << ',' << matcher << '\n';
        }
        if (record.true_landmark >= 0) {
          tracked.push_back(std::move(record));
        } else {
          if (!record.ranked.empty() && record.ranked[0].first == -1)
            ++untracked_background_heads;
          untracked.push_back(std::move(record));
        }
      }
    }

    MatcherSummary summary;
    summary.matcher = matcher;
    summary.tracked_queries = tracked.size();
    summary.untracked_queries = untracked.size();
    summary.precision_at_1 = tracked.empty() ? 0 : precision_at_1(tracked);
    summary.mrr = tracked.empty() ? 0 : mean_reciprocal_rank(tracked);
    summary.mean_evaluated_classes =
        evaluated_n > 0 ? evaluated_sum / static_cast<double>(evaluated_n) : 0;
    summary.untracked_background_rate =
        untracked.empty() ? 0
                          : static_cast<double>(untracked_background_heads) /
                                static_cast<double>(untracked.size());

    std::ofstream miss_csv(out_ / "reports" / ("miss_rate_" + matcher + ".csv"),
                           std::ios::binary);
    miss_csv << "budget,false_positives_per_query,miss_rate\n";
    for (const auto& p : miss_rate_curve(tracked, spec_.budgets)) {
      miss_csv << p.budget << ',';
      write_csv_double(miss_csv, p.false_positives_per_query);
      miss_csv << ',';
      write_csv_double(miss_csv, p.miss_rate);
      miss_csv << '\n';
    }
    return summary;
  }

  std::vector<Correspondence2D3D> matcher_correspondences(const std::string& matcher,
                                                          const Frame& frame,
                                                          ScoreEvaluator* /*unused*/,
                                                          const DescriptorDatabase* hamming_db,
                                                          const ProjectedDatabase* projected_db) {
    if (matcher == "hamming")
      return baseline_correspondences(frame, match_hamming_baseline(frame, *hamming_db, 1),
                                      matcher);
    if (matcher == "projected")
      return baseline_correspondences(frame, match_projected_baseline(frame, *projected_db, 1),
                                      matcher);
    MatchOptions options;
    options.top_k = spec_.top_k;
    options.accept_margin = spec_.accept_margin;
    return match_frame(frame, *model_, matcher == "boost-inv" ? &*inverted_ : nullptr,
                       world_.eval_map.camera_of(frame), options);
  }

  std::vector<PoseRecord> localize_matcher(const std::string& matcher) {
    std::optional<DescriptorDatabase> hamming_db;
    std::optional<ProjectedDatabase> projected_db;
    if (matcher == "hamming") hamming_db = DescriptorDatabase::build(world_.train_map);
    if (matcher == "projected")
      projected_db =
          ProjectedDatabase::build(world_.train_map, derive_seed(spec_.seed, "projection"));

    std::vector<PoseRecord> records;
    for (const Frame& frame : world_.eval_map.frames) {
      PoseRecord record;
      record.frame_id = frame.frame_id;
      record.truth = frame.pose_world_from_camera;

      const auto t0 = Clock::now();
      const auto matches =
          matcher_correspondences(matcher, frame, nullptr, hamming_db ? &*hamming_db : nullptr,
                                  projected_db ? &*projected_db : nullptr);
      record.match_ms = ms_since(t0);
      record.total_correspondences = static_cast<std::int32_t>(matches.size());

      const auto t1 = Clock::now();
      if (matches.size() >= 3) {
        RansacConfig cfg = ransac_;
        cfg.seed = derive_seed(derive_seed(spec_.seed, "ransac"),
                               static_cast<std::uint64_t>(frame.frame_id));
        const auto pnp = to_pnp_correspondences(matches, frame,
                                                world_.eval_map.camera_of(frame),
                                                world_.train_map);
        const RansacResult result = pnp_ransac(pnp, cfg);
        record.inliers = static_cast<std::int32_t>(result.inliers.size());
        record.inlier_ratio = result.inlier_ratio;
        if (result.pose) record.estimate = *result.pose;
      }
      record.ransac_ms = ms_since(t1);
      records.push_back(std::move(record));
    }
    return records;
  }

  void write_pose_reports(const std::string& matcher, const std::vector<PoseRecord>& records,
                          const PrCurve& curve) {
    std::ofstream poses(out_ / "reports" / ("poses_" + matcher + ".csv"), std::ios::binary);
    poses << "frame_id,success,tx,ty,tz,qw,qx,qy,qz,inliers,total,inlier_ratio\n";
    poses.precision(17);
    for (const auto& r : records) {
      poses << r.frame_id << ',' << (r.estimate ? 1 : 0) << ',';
      if (r.estimate) {
        const auto q = r.estimate->quaternion();
        const auto& t = r.estimate->translation;
        poses << t.x() << ',' << t.y() << ',' << t.z() << ',' << q.w() << ',' << q.x() << ','
              << q.y() << ',' << q.z();
      } else {
        poses << "0,0,0,1,0,0,0";
      }
      poses << ',' << r.inliers << ',' << r.total_correspondences << ',';
      write_csv_double(poses, r.inlier_ratio);
      poses << '\n';
    }

    std::ofstream times(out_ / "timings" / ("pose_times_" + matcher + ".csv"),
                        std::ios::binary);
    times << "frame_id,match_ms,ransac_ms,inlier_ratio\n";
    for (const auto& r : records) {
      times << r.frame_id << ',';
      write_csv_double(times, r.match_ms);
      times << ',';
      write_csv_double(times, r.ransac_ms);
      times << ',';
      write_csv_double(times, r.inlier_ratio);
      times << '\n';
    }

    std::ofstream pr(out_ / "reports" / ("pose_pr_" + matcher + ".csv"), std::ios::binary);
    pr << "threshold,precision,recall\n";
    for (const auto& p : curve.points) {
      write_csv_double(pr, p.threshold);
      pr << ',';
      write_csv_double(pr, p.precision);
      pr << ',';
      write_csv_double(pr, p.recall);
      pr << '\n';
    }
  }

  void write_runtime_report(
      const std::vector<std::pair<std::string, std::vector<PoseRecord>>>& pose_sets) {
    std::ofstream out(out_ / "timings" / "runtime_report.csv", std::ios::binary);
    out << "matcher,frames,mean_match_ms,mean_inlier_ratio\n";
    for (const auto& row : runtime_inlier_report(pose_sets)) {
      out << row.matcher << ',' << row.frames << ',';
      write_csv_double(out, row.mean_match_ms);
      out << ',';
      write_csv_double(out, row.mean_inlier_ratio);
      out << '\n';
    }
  }

  void write_training_log() {
    std::ofstream out(out_ / "reports" / "training_log.csv", std::ios::binary);
    out << "round,J,heldout_precision_at_1,sharing_set_size,chosen_feature_kind\n";
    for (const auto& row : training_log_) {
      out << row.round << ',';
      write_csv_double(out, row.cost);
      out << ',';
      write_csv_double(out, row.heldout_precision_at_1);
      out << ',' << row.sharing_set_size << ','
          << (row.feature_kind == 'c' ? "context" : "descriptor") << '\n';
    }
  }

  void write_summary(const ExperimentResult& result) {
    std::ofstream retrieval(out_ / "reports" / "retrieval_summary.csv", std::ios::binary);
    retrieval << "matcher,tracked_queries,precision_at_1,mrr,mean_evaluated_classes,"
                 "untracked_queries,untracked_background_rate\n";
    for (const auto& s : result.summaries) {
      retrieval << s.matcher << ',' << s.tracked_queries << ',';
      write_csv_double(retrieval, s.precision_at_1);
      retrieval << ',';
      write_csv_double(retrieval, s.mrr);
      retrieval << ',';
      write_csv_double(retrieval, s.mean_evaluated_classes);
      retrieval << ',' << s.untracked_queries << ',';
      write_csv_double(retrieval, s.untracked_background_rate);
      retrieval << '\n';
    }

    std::ofstream pose_summary(out_ / "reports" / "pose_summary.csv", std::ios::binary);
    pose_summary << "matcher,pose_auc,localized_frames\n";
    for (const auto& s : result.summaries) {
      pose_summary << s.matcher << ',';
      write_csv_double(pose_summary, s.pose_auc);
      pose_summary << ',' << s.localized_frames << '\n';
    }

    std::ofstream summary(out_ / "reports" / "summary.txt", std::ios::binary);
    summary << "experiment: " << spec_.name << "\n";
    summary << "seed: " << spec_.seed << "\n";
    summary << "world: landmarks=" << spec_.world.landmark_count
            << " rooms=" << spec_.world.rooms
            << " aliasing=" << spec_.world.aliasing_factor
            << " bit_flip=" << spec_.world.bit_flip_prob
            << " train_frames=" << spec_.world.train_frames
            << " eval_frames=" << spec_.world.eval_frames << "\n";
    summary << "vocabulary: k=" << spec_.vocab_k << "\n";
    summary << "regions: " << spec_.region_count << "\n";
    if (model_)
      summary << "model: classes=" << model_->num_classes()
              << " learners=" << model_->learners.size()
              << " feature_dim=" << model_->feature_dim() << "\n";
    for (const auto& s : result.summaries) {
      summary << s.matcher << ": precision@1=";
      write_csv_double(summary, s.precision_at_1);
      summary << " mrr=";
      write_csv_double(summary, s.mrr);
      if (s.mean_evaluated_classes > 0) {
        summary << " mean_evaluated_classes=";
        write_csv_double(summary, s.mean_evaluated_classes);
      }
      if (spec_.localize) {
        summary << " pose_auc=";
        write_csv_double(summary, s.pose_auc);
        summary << " localized=" << s.localized_frames << "/"
                << spec_.world.eval_frames;
      }
      summary << "\n";
    }
  }

  ExperimentSpec spec_;
  std::filesystem::path out_;
  std::string stage_ = "spec";
  GeneratedWorld world_;
  Vocabulary vocab_;
  RegionBank bank_;
  std::optional<BoostedModel> model_;
  std::optional<InvertedFile> inverted_;
  std::vector<RoundLog> training_log_;
  RansacConfig ransac_;
};

}  // namespace detail

/// Runs the whole pipeline described by a spec file: synth -> vocab ->
/// regions -> train -> match -> localize -> metrics. Every report except the
/// files under timings/ is byte-identical across reruns with the same spec.
inline ExperimentResult run_experiment(const ExperimentSpec& spec,
                                       const std::string& out_dir) {
  detail::ExperimentRunner runner(spec, out_dir);
  try {
    return runner.run();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(runner.stage(), e.what());
  }
}

inline ExperimentResult run_experiment_file(const std::string& spec_path,
                                            const std::string& out_dir) {
  return run_experiment(load_experiment_spec(spec_path), out_dir);
}

}  // namespace lmboost
