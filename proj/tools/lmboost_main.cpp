// lmboost command-line interface: synthetic world generation, vocabulary and
// model training, matching, localization and metric evaluation.
//
// Exit codes: 0 success, 1 stage failure, 2 bad spec/arguments.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "lmboost/boosting.hpp"
#include "lmboost/context.hpp"
#include "lmboost/errors.hpp"
#include "lmboost/experiment.hpp"
#include "lmboost/map.hpp"
#include "lmboost/matching.hpp"
#include "lmboost/metrics.hpp"
#include "lmboost/model_io.hpp"
#include "lmboost/pose.hpp"
#include "lmboost/synthworld.hpp"
#include "lmboost/vocabulary.hpp"

namespace {

using namespace lmboost;

std::vector<BinaryDescriptor> load_descriptor_pool(const std::string& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw IoError("cannot open '" + path + "'");
  char first = 0;
  probe.get(first);
  probe.close();
  std::vector<BinaryDescriptor> pool;
  if (first == '{') {  // map file: pool all keypoint descriptors
    const SfMMap map = load_map(path);
    for (const auto& f : map.frames)
      for (const auto& kp : f.keypoints) pool.push_back(kp.descriptor);
    return pool;
  }
  std::ifstream in(path, std::ios::binary);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    pool.push_back(BinaryDescriptor::from_hex(line, static_cast<std::uint32_t>(line.size() * 4)));
  }
  return pool;
}

int cmd_synth(const std::string& config_path, std::uint64_t seed, const std::string& out_dir) {
  WorldConfig cfg;
  if (!config_path.empty()) {
    std::ifstream in(config_path, std::ios::binary);
    if (!in) throw ConfigError("cannot open world config '" + config_path + "'");
    nlohmann::json j;
    in >> j;
    from_json_config(j, cfg);
  }
  cfg.seed = seed;
  std::filesystem::create_directories(out_dir);
  const GeneratedWorld world = generate_world(cfg);
  save_map(world.train_map, out_dir + "/train_map.jsonl");
  save_map(world.eval_map, out_dir + "/eval_map.jsonl");
  save_ground_truth(world, out_dir + "/ground_truth.csv");
  std::cout << "world: " << world.train_map.landmarks.size() << " landmarks, "
            << world.train_map.frames.size() << " train frames, "
            << world.eval_map.frames.size() << " eval frames -> " << out_dir << "\n";
  return 0;
}

int cmd_train_vocab(const std::string& input, const std::string& output, std::uint32_t k,
                    std::uint64_t seed, std::uint32_t max_iters) {
  const auto pool = load_descriptor_pool(input);
  const Vocabulary vocab = train_vocabulary(pool, k, seed, max_iters);
  save_vocabulary(vocab, output);
  std::cout << "vocabulary: k=" << vocab.k() << " bits=" << vocab.descriptor_bits << " from "
            << pool.size() << " descriptors -> " << output << "\n";
  return 0;
}

int cmd_gen_regions(std::size_t count, std::uint64_t seed, const RegionConfig& config,
                    const std::string& output) {
  const RegionBank bank = generate_regions(count, config, seed);
  save_region_bank(bank, output);
  std::cout << "regions: " << bank.size() << " -> " << output << "\n";
  return 0;
}

int cmd_train(const std::string& map_path, const std::string& vocab_path,
              const std::string& regions_path, const std::string& output,
              const TrainConfig& config, const std::string& log_path) {
  const SfMMap map = load_map(map_path);
  const Vocabulary vocab = load_vocabulary(vocab_path);
  const RegionBank bank = load_region_bank(regions_path);
  const TrainingData data = build_training_set(map, bank, vocab, config);
  std::vector<RoundLog> log;
  const BoostedModel model = train(config, data, bank, vocab, &log);
  save_model(model, output);
  if (!log_path.empty()) {
    std::ofstream out(log_path, std::ios::binary);
    out << "round,J,heldout_precision_at_1,sharing_set_size,chosen_feature_kind\n";
    for (const auto& row : log)
      out << row.round << ',' << row.cost << ',' << row.heldout_precision_at_1 << ','
          << row.sharing_set_size << ','
          << (row.feature_kind == 'c' ? "context" : "descriptor") << '\n';
  }
  std::cout << "model: " << model.num_classes() - 1 << " landmark classes, "
            << model.learners.size() << " learners -> " << output << "\n";
  return 0;
}

int cmd_match(const std::string& model_path, const std::string& map_path,
              const std::string& query_path, const std::string& matcher,
              const std::string& out_path, std::int32_t top_k, double margin) {
  const SfMMap map = load_map(map_path);
  const SfMMap query = load_map(query_path);
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + out_path + "' for writing");
  out << "frame_id,keypoint_index,landmark_id,score,matcher\n";
  out.precision(9);

  auto dump = [&](const std::vector<Correspondence2D3D>& matches) {
    for (const auto& m : matches)
      out << m.frame_id << ',' << m.keypoint_index << ',' << m.landmark_id << ',' << m.score
          << ',' << m.matcher << '\n';
  };

  if (matcher == "hamming") {
    const auto db = DescriptorDatabase::build(map);
    for (const auto& frame : query.frames)
      dump(baseline_correspondences(frame, match_hamming_baseline(frame, db, top_k), matcher));
  } else if (matcher == "projected") {
    const auto db = ProjectedDatabase::build(map, 1);
    for (const auto& frame : query.frames)
      dump(baseline_correspondences(frame, match_projected_baseline(frame, db, top_k), matcher));
  } else if (matcher == "boost" || matcher == "boost-inv") {
    if (model_path.empty()) throw ConfigError("matcher '" + matcher + "' requires --model");
    const BoostedModel model = load_model(model_path);
    std::optional<InvertedFile> inv;
    if (matcher == "boost-inv") inv = build_inverted_file(map, model.vocab, model.classes);
    MatchOptions options;
    options.top_k = top_k;
    options.accept_margin = margin;
    for (const auto& frame : query.frames)
      dump(match_frame(frame, model, inv ? &*inv : nullptr, query.camera_of(frame), options));
  } else {
    throw ConfigError("unknown matcher '" + matcher + "'");
  }
  std::cout << "correspondences -> " << out_path << "\n";
  return 0;
}

int cmd_localize(const std::string& model_path, const std::string& map_path,
                 const std::string& query_path, const std::string& matcher,
                 const std::string& out_path, double threshold_px, std::int32_t max_iters,
                 std::int32_t min_inliers, std::uint64_t seed, double margin) {
  const SfMMap map = load_map(map_path);
  const SfMMap query = load_map(query_path);

  std::optional<BoostedModel> model;
  std::optional<InvertedFile> inv;
  std::optional<DescriptorDatabase> hamming_db;
  std::optional<ProjectedDatabase> projected_db;
  if (matcher == "boost" || matcher == "boost-inv") {
    if (model_path.empty()) throw ConfigError("matcher '" + matcher + "' requires --model");
    model = load_model(model_path);
    if (matcher == "boost-inv") inv = build_inverted_file(map, model->vocab, model->classes);
  } else if (matcher == "hamming") {
    hamming_db = DescriptorDatabase::build(map);
  } else if (matcher == "projected") {
    projected_db = ProjectedDatabase::build(map, 1);
  } else {
    throw ConfigError("unknown matcher '" + matcher + "'");
  }

  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + out_path + "' for writing");
  out << "frame_id,success,tx,ty,tz,qw,qx,qy,qz,inliers,total,inlier_ratio,match_ms,"
         "ransac_ms\n";
  out.precision(17);

  for (const auto& frame : query.frames) {
    const auto& cam = query.camera_of(frame);
    RansacConfig cfg;
    cfg.max_iterations = max_iters;
    cfg.min_inliers = min_inliers;
    cfg.inlier_threshold = pixel_threshold_to_normalized(threshold_px, cam);
    cfg.seed = derive_seed(seed, static_cast<std::uint64_t>(frame.frame_id));

    const auto t0 = std::chrono::steady_clock::now();
    std::vector<Correspondence2D3D> matches;
    if (model) {
      MatchOptions options;
      options.accept_margin = margin;
      matches = match_frame(frame, *model, inv ? &*inv : nullptr, cam, options);
    } else if (hamming_db) {
      matches =
          baseline_correspondences(frame, match_hamming_baseline(frame, *hamming_db, 1), matcher);
    } else {
      matches = baseline_correspondences(frame, match_projected_baseline(frame, *projected_db, 1),
                                         matcher);
    }
    const auto t1 = std::chrono::steady_clock::now();

    RansacResult result;
    if (matches.size() >= 3)
      result = pnp_ransac(to_pnp_correspondences(matches, frame, cam, map), cfg);
    const auto t2 = std::chrono::steady_clock::now();

    out << frame.frame_id << ',' << (result.pose ? 1 : 0) << ',';
    if (result.pose) {
      const auto q = result.pose->quaternion();
      const auto& t = result.pose->translation;
      out << t.x() << ',' << t.y() << ',' << t.z() << ',' << q.w() << ',' << q.x() << ','
          << q.y() << ',' << q.z();
    } else {
      out << "0,0,0,1,0,0,0";
    }
    out << ',' << result.inliers.size() << ',' << matches.size() << ',' << result.inlier_ratio
        << ',' << std::chrono::duration<double, std::milli>(t1 - t0).count() << ','
        << std::chrono::duration<double, std::milli>(t2 - t1).count() << '\n';
  }
  std::cout << "poses -> " << out_path << "\n";
  return 0;
}

// Recomputes retrieval and pose metrics from dumped CSVs plus ground truth.
int cmd_eval(const std::string& ranked_path, const std::string& poses_path,
             const std::string& truth_path, const std::string& out_dir,
             const std::vector<std::int32_t>& budgets) {
  std::filesystem::create_directories(out_dir);
  const GroundTruth truth = load_ground_truth(truth_path);

  if (!ranked_path.empty()) {
    std::ifstream in(ranked_path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + ranked_path + "'");
    std::string line;
    std::getline(in, line);  // header
    std::map<std::pair<std::int64_t, std::int32_t>, RetrievalRecord> by_query;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::istringstream ls(line);
      std::string field;
      std::vector<std::string> fields;
      while (std::getline(ls, field, ',')) fields.push_back(field);
      RetrievalRecord& r = by_query[{std::stoll(fields.at(0)),
                                     static_cast<std::int32_t>(std::stol(fields.at(1)))}];
      r.frame_id = std::stoll(fields.at(0));
      r.keypoint_index = static_cast<std::int32_t>(std::stol(fields.at(1)));
      r.true_landmark = std::stoll(fields.at(2));
      r.ranked.emplace_back(std::stoll(fields.at(4)), std::stod(fields.at(5)));
    }
    std::vector<RetrievalRecord> tracked;
    for (auto& [key, record] : by_query) {
      (void)key;
      if (record.true_landmark >= 0) tracked.push_back(std::move(record));
    }
    std::ofstream out(out_dir + "/retrieval_metrics.csv", std::ios::binary);
    out << "tracked_queries,precision_at_1,mrr\n";
    out.precision(9);
    out << tracked.size() << ',' << precision_at_1(tracked) << ','
        << mean_reciprocal_rank(tracked) << '\n';
    std::ofstream miss(out_dir + "/miss_rate.csv", std::ios::binary);
    miss << "budget,false_positives_per_query,miss_rate\n";
    miss.precision(9);
    for (const auto& p : miss_rate_curve(tracked, budgets))
      miss << p.budget << ',' << p.false_positives_per_query << ',' << p.miss_rate << '\n';
  }

  if (!poses_path.empty()) {
    std::ifstream in(poses_path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + poses_path + "'");
    std::string line;
    std::getline(in, line);
    std::vector<PoseRecord> records;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::istringstream ls(line);
      std::string field;
      std::vector<std::string> fields;
      while (std::getline(ls, field, ',')) fields.push_back(field);
      PoseRecord r;
      r.frame_id = std::stoll(fields.at(0));
      const auto it = truth.poses.find(r.frame_id);
      if (it == truth.poses.end())
        throw ParseError("no ground-truth pose for frame " + std::to_string(r.frame_id));
      r.truth = it->second;
      if (std::stol(fields.at(1)) == 1) {
        Pose pose;
        pose.translation = Eigen::Vector3d(std::stod(fields.at(2)), std::stod(fields.at(3)),
                                           std::stod(fields.at(4)));
        const Eigen::Quaterniond q(std::stod(fields.at(5)), std::stod(fields.at(6)),
                                   std::stod(fields.at(7)), std::stod(fields.at(8)));
        pose.rotation = q.normalized().toRotationMatrix();
        r.estimate = pose;
      }
      r.inliers = static_cast<std::int32_t>(std::stol(fields.at(9)));
      r.total_correspondences = static_cast<std::int32_t>(std::stol(fields.at(10)));
      r.inlier_ratio = std::stod(fields.at(11));
      records.push_back(std::move(r));
    }
    const PrCurve curve = pose_pr_auc(records);
    std::ofstream out(out_dir + "/pose_metrics.csv", std::ios::binary);
    out << "frames,auc\n";
    out.precision(9);
    out << records.size() << ',' << curve.auc << '\n';
    std::ofstream pr(out_dir + "/pose_pr.csv", std::ios::binary);
    pr << "threshold,precision,recall\n";
    pr.precision(9);
    for (const auto& p : curve.points)
      pr << p.threshold << ',' << p.precision << ',' << p.recall << '\n';
  }
  std::cout << "metrics -> " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"boosted landmark classification for visual localization"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic world");
  std::string synth_config;
  std::uint64_t synth_seed = 1;
  std::string synth_out = "world";
  synth->add_option("--config", synth_config, "world config JSON");
  synth->add_option("--seed", synth_seed, "generation seed");
  synth->add_option("--out", synth_out, "output directory")->required();

  // train-vocab
  auto* tv = app.add_subcommand("train-vocab", "train a visual vocabulary");
  std::string tv_input, tv_output;
  std::uint32_t tv_k = 16, tv_iters = 25;
  std::uint64_t tv_seed = 1;
  tv->add_option("--input", tv_input, "map file or hex descriptor lines")->required();
  tv->add_option("--output", tv_output, "vocabulary file")->required();
  tv->add_option("--k", tv_k, "word count");
  tv->add_option("--seed", tv_seed, "seed");
  tv->add_option("--max-iters", tv_iters, "k-medians iteration cap");

  // gen-regions
  auto* gr = app.add_subcommand("gen-regions", "generate a context region bank");
  std::size_t gr_count = 1000;
  std::uint64_t gr_seed = 1;
  RegionConfig gr_config;
  std::string gr_out;
  gr->add_option("--count", gr_count, "region count");
  gr->add_option("--seed", gr_seed, "seed");
  gr->add_option("--area-min", gr_config.area_min, "min region area");
  gr->add_option("--area-max", gr_config.area_max, "max region area");
  gr->add_option("--aspect-min", gr_config.aspect_min, "min aspect ratio");
  gr->add_option("--aspect-max", gr_config.aspect_max, "max aspect ratio");
  gr->add_option("--offset-radius", gr_config.offset_radius, "center offset disc radius");
  gr->add_option("--out", gr_out, "region bank file")->required();

  // train
  auto* tr = app.add_subcommand("train", "train the boosted classifier");
  std::string tr_map, tr_vocab, tr_regions, tr_out, tr_log;
  TrainConfig tr_config;
  tr->add_option("--map", tr_map, "training map")->required();
  tr->add_option("--vocab", tr_vocab, "vocabulary file")->required();
  tr->add_option("--regions", tr_regions, "region bank file")->required();
  tr->add_option("--out", tr_out, "model file")->required();
  tr->add_option("--log", tr_log, "training log CSV");
  tr->add_option("--rounds", tr_config.rounds, "boosting rounds");
  tr->add_option("--features-per-round", tr_config.features_per_round,
                 "candidate features per round");
  tr->add_option("--landmark-budget", tr_config.landmark_budget, "classifier class budget");
  tr->add_option("--background-cap", tr_config.background_cap, "background sample cap");
  tr->add_option("--negative-ratio", tr_config.negative_ratio, "negatives per positive");
  tr->add_option("--negative-cap", tr_config.negative_cap, "negative set cap");
  tr->add_option("--mining-period", tr_config.mining_period, "hard negative mining period");
  tr->add_option("--exclusion-radius", tr_config.exclusion_radius,
                 "negative exclusion radius (m)");
  tr->add_option("--seed", tr_config.seed, "training seed");
  bool tr_no_descriptor = false;
  tr->add_flag("--context-only", tr_no_descriptor, "train on context features only");

  // match
  auto* ma = app.add_subcommand("match", "match query frames against a map");
  std::string ma_model, ma_map, ma_query, ma_matcher = "boost", ma_out = "matches.csv";
  std::int32_t ma_topk = 10;
  double ma_margin = 0.0;
  ma->add_option("--model", ma_model, "trained model (boost matchers)");
  ma->add_option("--map", ma_map, "database map")->required();
  ma->add_option("--query", ma_query, "query map")->required();
  ma->add_option("--matcher", ma_matcher, "boost|boost-inv|hamming|projected");
  ma->add_option("--out", ma_out, "correspondence CSV");
  ma->add_option("--top-k", ma_topk, "candidates per query");
  ma->add_option("--margin", ma_margin, "accept margin over background score");

  // localize
  auto* lo = app.add_subcommand("localize", "match and estimate 6-DoF poses");
  std::string lo_model, lo_map, lo_query, lo_matcher = "boost", lo_out = "poses.csv";
  double lo_threshold_px = 2.0, lo_margin = 0.0;
  std::int32_t lo_iters = 500, lo_min_inliers = 6;
  std::uint64_t lo_seed = 1;
  lo->add_option("--model", lo_model, "trained model (boost matchers)");
  lo->add_option("--map", lo_map, "database map")->required();
  lo->add_option("--query", lo_query, "query map")->required();
  lo->add_option("--matcher", lo_matcher, "boost|boost-inv|hamming|projected");
  lo->add_option("--out", lo_out, "pose CSV");
  lo->add_option("--inlier-px", lo_threshold_px, "RANSAC inlier threshold (pixels)");
  lo->add_option("--max-iterations", lo_iters, "RANSAC iteration cap");
  lo->add_option("--min-inliers", lo_min_inliers, "minimum consensus size");
  lo->add_option("--seed", lo_seed, "RANSAC seed");
  lo->add_option("--margin", lo_margin, "accept margin over background score");

  // eval
  auto* ev = app.add_subcommand("eval", "recompute metrics from dumped CSVs");
  std::string ev_ranked, ev_poses, ev_truth, ev_out = "metrics";
  std::vector<std::int32_t> ev_budgets = {1, 2, 5, 10, 20, 50};
  ev->add_option("--ranked", ev_ranked, "ranked candidates CSV");
  ev->add_option("--poses", ev_poses, "pose CSV");
  ev->add_option("--truth", ev_truth, "ground truth CSV")->required();
  ev->add_option("--out", ev_out, "output directory");
  ev->add_option("--budgets", ev_budgets, "miss-rate candidate budgets");

  // run
  auto* ru = app.add_subcommand("run", "run a full experiment spec");
  std::string ru_spec, ru_out = "experiment";
  ru->add_option("--spec", ru_spec, "experiment spec JSON")->required();
  ru->add_option("--out", ru_out, "report directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(synth_config, synth_seed, synth_out);
    if (tv->parsed()) return cmd_train_vocab(tv_input, tv_output, tv_k, tv_seed, tv_iters);
    if (gr->parsed()) return cmd_gen_regions(gr_count, gr_seed, gr_config, gr_out);
    if (tr->parsed()) {
      tr_config.include_descriptor = !tr_no_descriptor;
      return cmd_train(tr_map, tr_vocab, tr_regions, tr_out, tr_config, tr_log);
    }
    if (ma->parsed())
      return cmd_match(ma_model, ma_map, ma_query, ma_matcher, ma_out, ma_topk, ma_margin);
    if (lo->parsed())
      return cmd_localize(lo_model, lo_map, lo_query, lo_matcher, lo_out, lo_threshold_px,
                          lo_iters, lo_min_inliers, lo_seed, lo_margin);
    if (ev->parsed()) return cmd_eval(ev_ranked, ev_poses, ev_truth, ev_out, ev_budgets);
    if (ru->parsed()) {
      run_experiment_file(ru_spec, ru_out);
      std::cout << "experiment -> " << ru_out << "\n";
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const StageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
