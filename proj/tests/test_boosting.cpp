#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "lmboost/boosting.hpp"
#include "lmboost/matching.hpp"
#include "lmboost/model_io.hpp"
#include "lmboost/synthworld.hpp"
#include "support/oracles.hpp"

using namespace lmboost;

namespace {

TrainingSample make_sample(std::vector<std::pair<std::uint32_t, float>> context,
                           std::uint32_t num_features, std::int32_t class_id = 0) {
  TrainingSample s;
  s.features.context = std::move(context);
  s.features.num_regions = num_features;
  s.features.words = 1;
  s.features.descriptor = BinaryDescriptor(0);
  s.class_id = class_id;
  return s;
}

/// Map of `n_landmarks` landmarks, each observed in `obs_per_landmark`
/// frames, plus a few untracked keypoints per frame.
SfMMap grid_map(std::int32_t n_landmarks, std::int32_t obs_per_landmark,
                std::int32_t untracked_per_frame, std::uint64_t seed) {
  SfMMap map;
  map.descriptor_bits = 64;
  map.cameras = {{200.0, 200.0, 320.0, 240.0, 640, 480}};
  Rng rng(seed);
  std::vector<BinaryDescriptor> canon;
  for (std::int32_t l = 0; l < n_landmarks; ++l)
    canon.push_back(random_descriptor(64, rng));

  for (std::int32_t t = 0; t < obs_per_landmark; ++t) {
    Frame f;
    f.frame_id = t;
    f.camera_id = 0;
    f.gravity_in_camera = {0, 1, 0};
    for (std::int32_t l = 0; l < n_landmarks; ++l) {
      Keypoint kp;
      kp.u = 40.0 + 37.0 * l + 3.0 * t;
      kp.v = 30.0 + 23.0 * ((l * 7) % 17) + 2.0 * t;
      kp.u = std::fmod(kp.u, 600.0) + 10;
      kp.v = std::fmod(kp.v, 440.0) + 10;
      kp.scale = 4.0 + (l % 5);
      kp.descriptor = canon[static_cast<std::size_t>(l)];
      kp.landmark_id = l;
      f.keypoints.push_back(kp);
    }
    for (std::int32_t u = 0; u < untracked_per_frame; ++u) {
      Keypoint kp;
      kp.u = uniform_real(rng, 0, 639);
      kp.v = uniform_real(rng, 0, 479);
      kp.scale = 3.0;
      kp.descriptor = random_descriptor(64, rng);
      f.keypoints.push_back(kp);
    }
    map.frames.push_back(std::move(f));
  }
  for (std::int32_t l = 0; l < n_landmarks; ++l) {
    Landmark lm;
    lm.landmark_id = l;
    lm.position_world = {static_cast<double>(l) * 2.0, 0, 0};
    for (std::int32_t t = 0; t < obs_per_landmark; ++t) lm.observations.push_back({t, l});
    map.landmarks.push_back(std::move(lm));
  }
  map.rebuild_indices();
  map.validate();
  return map;
}

Vocabulary vocab_for(const SfMMap& map, std::uint32_t k, std::uint64_t seed) {
  std::vector<BinaryDescriptor> pool;
  Rng rng(seed);
  for (std::size_t i = 0; i < 50u * k; ++i)
    pool.push_back(random_descriptor(map.descriptor_bits, rng));
  return train_vocabulary(pool, k, seed);
}

}  // namespace

TEST_CASE("build_training_set ranks landmarks by observation count", "[boosting]") {
  // 3 landmarks x 5 observations, budget 2 -> 2 classes, 10 positive samples
  const SfMMap map = grid_map(3, 5, 0, 1);
  const Vocabulary vocab = vocab_for(map, 4, 2);
  const RegionBank bank = generate_regions(16, RegionConfig{}, 3);
  TrainConfig cfg;
  cfg.landmark_budget = 2;
  const TrainingData data = build_training_set(map, bank, vocab, cfg);
  CHECK(data.classes.num_classes() == 3);  // background + 2
  CHECK(data.samples.size() == 10);
  for (const auto& s : data.samples) CHECK(s.class_id > 0);

  SECTION("budget beyond the landmark count uses all landmarks") {
    TrainConfig big = cfg;
    big.landmark_budget = 50;
    const TrainingData all = build_training_set(map, bank, vocab, big);
    CHECK(all.classes.num_classes() == 4);
    CHECK(all.samples.size() == 15);
  }
  SECTION("positive features match an independent rebuild") {
    for (const auto& s : data.samples) {
      const Frame* f = map.find_frame(s.frame_id);
      const FeatureVector expected = build_feature_vector(
          s.keypoint_index, *f, bank, vocab, map.camera_of(*f), data.reference_scale);
      REQUIRE(s.features.context == expected.context);
      REQUIRE(s.features.descriptor == expected.descriptor);
    }
  }
  SECTION("untracked keypoints become background samples up to the cap") {
    const SfMMap noisy = grid_map(3, 5, 4, 7);
    TrainConfig bg = cfg;
    bg.background_cap = 6;
    const TrainingData data_bg = build_training_set(noisy, bank, vocab, bg);
    std::size_t background = 0;
    for (const auto& s : data_bg.samples)
      if (s.class_id == 0) ++background;
    CHECK(background == 6);
  }
}

TEST_CASE("bootstrap_negatives filters by word and metric radius", "[boosting]") {
  const SfMMap map = grid_map(6, 4, 6, 11);
  const Vocabulary vocab = vocab_for(map, 4, 5);
  const RegionBank bank = generate_regions(8, RegionConfig{}, 3);
  TrainConfig cfg;
  cfg.landmark_budget = 6;
  TrainingData data = build_training_set(map, bank, vocab, cfg);

  SECTION("result matches a brute-force filter when the pool is small") {
    Rng rng(3);
    const auto& positives = [&] {
      std::vector<std::int32_t> pos;
      for (std::size_t i = 0; i < data.samples.size(); ++i)
        if (data.samples[i].class_id == 1) pos.push_back(static_cast<std::int32_t>(i));
      return pos;
    }();
    const auto negatives =
        bootstrap_negatives(data, 1, positives, 0.5, data.samples.size(), rng);

    std::set<std::uint32_t> own_words;
    for (const std::int32_t s : positives)
      own_words.insert(data.sample_word[static_cast<std::size_t>(s)]);
    std::vector<std::int32_t> expected;
    for (std::size_t i = 0; i < data.samples.size(); ++i) {
      const auto& s = data.samples[i];
      if (s.class_id == 1) continue;
      if (s.class_id > 0 &&
          (data.class_positions[static_cast<std::size_t>(s.class_id)] -
           data.class_positions[1])
                  .norm() <= 0.5)
        continue;
      if (own_words.count(data.sample_word[i]))
        expected.push_back(static_cast<std::int32_t>(i));
    }
    // target above pool size: the pool itself plus random top-up; the pool
    // must be a subset of the result
    for (const std::int32_t e : expected)
      CHECK(std::find(negatives.begin(), negatives.end(), e) != negatives.end());
  }
  SECTION("nearby duplicate landmarks are excluded") {
    // landmark positions are 2m apart; use a radius that swallows a neighbor
    Rng rng(3);
    std::vector<std::int32_t> positives;
    for (std::size_t i = 0; i < data.samples.size(); ++i)
      if (data.samples[i].class_id == 2) positives.push_back(static_cast<std::int32_t>(i));
    const auto negatives =
        bootstrap_negatives(data, 2, positives, 2.5, data.samples.size(), rng);
    for (const std::int32_t n : negatives) {
      const auto& s = data.samples[static_cast<std::size_t>(n)];
      if (s.class_id > 0) {
        const double dist = (data.class_positions[static_cast<std::size_t>(s.class_id)] -
                             data.class_positions[2])
                                .norm();
        CHECK(dist > 2.5);
      }
    }
  }
  SECTION("disjoint words leave only random top-up") {
    // class whose positives quantize to words no other sample uses: craft by
    // giving it a target of 3 and checking the result size
    Rng rng(9);
    std::vector<std::int32_t> positives;
    for (std::size_t i = 0; i < data.samples.size(); ++i)
      if (data.samples[i].class_id == 3) positives.push_back(static_cast<std::int32_t>(i));
    const auto negatives = bootstrap_negatives(data, 3, positives, 0.5, 3, rng);
    CHECK(negatives.size() == 3);
    for (const std::int32_t n : negatives)
      CHECK(data.samples[static_cast<std::size_t>(n)].class_id != 3);
  }
}

TEST_CASE("fit_stump solves the weighted least squares stump", "[boosting]") {
  SECTION("hand-computed two-sample instance") {
    std::vector<TrainingSample> samples;
    samples.push_back(make_sample({{0, 1.0f}}, 1));
    samples.push_back(make_sample({}, 1));  // v = 0
    TrainerState state;
    state.pairs.resize(1);
    state.pairs[0].sample = {0, 1};
    state.pairs[0].weight = {1.0, 1.0};
    state.pairs[0].z = {1, -1};
    const StumpFit fit = fit_stump(state, samples, 0, 0.5, {0});
    CHECK(fit.b == Catch::Approx(-1.0));
    CHECK(fit.a == Catch::Approx(2.0));
    CHECK(fit.loss == Catch::Approx(0.0).margin(1e-12));
  }
  SECTION("all samples on one side with z=+1") {
    std::vector<TrainingSample> samples;
    samples.push_back(make_sample({{0, 0.8f}}, 1));
    samples.push_back(make_sample({{0, 0.9f}}, 1));
    TrainerState state;
    state.pairs.resize(1);
    state.pairs[0].sample = {0, 1};
    state.pairs[0].weight = {1.0, 1.0};
    state.pairs[0].z = {1, 1};
    const StumpFit fit = fit_stump(state, samples, 0, 0.5, {0});
    CHECK(fit.a + fit.b == Catch::Approx(1.0));  // above side value 1
    CHECK(fit.b == 0.0);                         // empty below side pinned to 0
  }
  SECTION("random instances are stationary points of the loss") {
    Rng rng(71);
    for (int trial = 0; trial < 100; ++trial) {
      auto inst = testing::random_small_instance(rng);
      const std::uint32_t f = static_cast<std::uint32_t>(uniform_below(rng, inst.num_features));
      const auto thetas = testing::threshold_candidates(inst.state, inst.samples, f);
      if (thetas.empty()) continue;
      const double theta = thetas[uniform_below(rng, thetas.size())];
      std::vector<std::int32_t> sharing;
      for (std::int32_t c = 0; c < inst.state.num_classes(); ++c) sharing.push_back(c);
      const StumpFit fit = fit_stump(inst.state, inst.samples, f, theta, sharing);

      // grid cross-check around the optimum: no (a, b) perturbation beats it
      for (const double da : {-1e-4, 0.0, 1e-4}) {
        for (const double db : {-1e-4, 0.0, 1e-4}) {
          double loss = 0;
          for (const std::int32_t c : sharing) {
            const auto& p = inst.state.pairs[static_cast<std::size_t>(c)];
            for (std::size_t i = 0; i < p.size(); ++i) {
              const double v =
                  inst.samples[static_cast<std::size_t>(p.sample[i])].features.value_at(f);
              const double h = (v > theta ? fit.a + da : 0.0) + fit.b + db;
              loss += p.weight[i] * (p.z[i] - h) * (p.z[i] - h);
            }
          }
          REQUIRE(loss >= fit.loss - 1e-9);
        }
      }
    }
  }
}

TEST_CASE("fit_class_constant is the weighted mean of z", "[boosting]") {
  TrainerState state;
  state.pairs.resize(1);
  SECTION("all-positive class") {
    state.pairs[0].sample = {0, 1, 2};
    state.pairs[0].weight = {0.2, 0.5, 0.3};
    state.pairs[0].z = {1, 1, 1};
    CHECK(fit_class_constant(state, 0) == Catch::Approx(1.0));
  }
  SECTION("balanced positives and negatives with unit weights") {
    state.pairs[0].sample = {0, 1, 2, 3};
    state.pairs[0].weight = {1, 1, 1, 1};
    state.pairs[0].z = {1, 1, -1, -1};
    CHECK(fit_class_constant(state, 0) == Catch::Approx(0.0));
  }
  SECTION("random weights match the direct mean") {
    Rng rng(5);
    for (int t = 0; t < 50; ++t) {
      state.pairs[0].sample.clear();
      state.pairs[0].weight.clear();
      state.pairs[0].z.clear();
      double w_sum = 0, wz_sum = 0;
      const std::size_t n = 1 + uniform_below(rng, 10);
      for (std::size_t i = 0; i < n; ++i) {
        const double w = uniform_real(rng, 0.01, 2.0);
        const std::int8_t z = uniform01(rng) < 0.5 ? 1 : -1;
        state.pairs[0].sample.push_back(static_cast<std::int32_t>(i));
        state.pairs[0].weight.push_back(w);
        state.pairs[0].z.push_back(z);
        w_sum += w;
        wz_sum += w * z;
      }
      CHECK(fit_class_constant(state, 0) == Catch::Approx(wz_sum / w_sum));
    }
  }
}

TEST_CASE("init_sharing_set orders classes by above-threshold response", "[boosting]") {
  SECTION("the responsive class comes first") {
    std::vector<TrainingSample> samples;
    samples.push_back(make_sample({{0, 1.0f}}, 1));  // above
    samples.push_back(make_sample({}, 1));           // below
    TrainerState state;
    state.pairs.resize(2);
    // class 0: positive above, negative below -> b_0 = +1
    state.pairs[0].sample = {0, 1};
    state.pairs[0].weight = {1, 1};
    state.pairs[0].z = {1, -1};
    // class 1: negative above -> b_1 = -1
    state.pairs[1].sample = {0, 1};
    state.pairs[1].weight = {1, 1};
    state.pairs[1].z = {-1, 1};
    const auto order = init_sharing_set(state, samples, 0, 0.5);
    CHECK(order == std::vector<std::int32_t>{0, 1});
  }
  SECTION("identical statistics fall back to class index order") {
    std::vector<TrainingSample> samples;
    samples.push_back(make_sample({{0, 1.0f}}, 1));
    TrainerState state;
    state.pairs.resize(3);
    for (int c = 0; c < 3; ++c) {
      state.pairs[static_cast<std::size_t>(c)].sample = {0};
      state.pairs[static_cast<std::size_t>(c)].weight = {1};
      state.pairs[static_cast<std::size_t>(c)].z = {1};
    }
    const auto order = init_sharing_set(state, samples, 0, 0.5);
    CHECK(order == std::vector<std::int32_t>{0, 1, 2});
  }
  SECTION("refined prefix selection matches greedy in >= 90% of trials") {
    Rng rng(2023);
    int wins = 0;
    const int trials = 100;
    for (int t = 0; t < trials; ++t) {
      auto inst = testing::random_small_instance(rng, 6, 20, 3);
      const std::uint32_t f = static_cast<std::uint32_t>(uniform_below(rng, inst.num_features));
      const auto thetas = testing::threshold_candidates(inst.state, inst.samples, f);
      if (thetas.empty()) {
        ++wins;  // nothing to select; trivially tied
        continue;
      }
      const double theta = thetas[uniform_below(rng, thetas.size())];

      // exhaustive limit 0 forces the production prefix+refinement path
      const auto [sharing, cost] =
          select_sharing_set_at(inst.state, inst.samples, f, theta, 0);
      (void)cost;
      const double selected = testing::direct_loss(inst.state, inst.samples, f, theta, sharing);
      const double best_greedy =
          testing::greedy_best_loss(inst.state, inst.samples, f, theta);
      if (selected <= best_greedy + 1e-12) ++wins;
    }
    CHECK(wins >= 90);
  }
}

TEST_CASE("incremental_update_b matches from-scratch refits", "[boosting]") {
  SECTION("adding a zero-weight class changes nothing") {
    RunningWeightedMean running{0.8, 2.0};
    const double before = running.value();
    CHECK(incremental_update_b(running, 0.7, 0.0) == Catch::Approx(before));
  }
  SECTION("adding the only class to an empty set gives its own mean") {
    RunningWeightedMean running;
    CHECK(incremental_update_b(running, -0.4, 1.7) == Catch::Approx(-0.4));
  }
  SECTION("arbitrary insertion sequences equal fresh fits within 1e-9") {
    Rng rng(311);
    for (int trial = 0; trial < 200; ++trial) {
      auto inst = testing::random_small_instance(rng, 6, 18, 3);
      const std::uint32_t f = static_cast<std::uint32_t>(uniform_below(rng, inst.num_features));
      const auto thetas = testing::threshold_candidates(inst.state, inst.samples, f);
      if (thetas.empty()) continue;
      const double theta = thetas[uniform_below(rng, thetas.size())];

      // random growth sequence over the classes
      std::vector<std::int32_t> order;
      for (std::int32_t c = 0; c < inst.state.num_classes(); ++c) order.push_back(c);
      shuffle(order, rng);

      RunningWeightedMean above, below;
      std::vector<std::int32_t> grown;
      for (const std::int32_t c : order) {
        grown.push_back(c);
        // per-class side statistics
        double wa = 0, wza = 0, wb = 0, wzb = 0;
        const auto& p = inst.state.pairs[static_cast<std::size_t>(c)];
        for (std::size_t i = 0; i < p.size(); ++i) {
          const double v =
              inst.samples[static_cast<std::size_t>(p.sample[i])].features.value_at(f);
          if (v > theta) {
            wa += p.weight[i];
            wza += p.weight[i] * p.z[i];
          } else {
            wb += p.weight[i];
            wzb += p.weight[i] * p.z[i];
          }
        }
        const double inc_above = incremental_update_b(above, wa > 0 ? wza / wa : 0.0, wa);
        const double inc_below = incremental_update_b(below, wb > 0 ? wzb / wb : 0.0, wb);

        std::vector<std::int32_t> sorted = grown;
        std::sort(sorted.begin(), sorted.end());
        const StumpFit fresh = fit_stump(inst.state, inst.samples, f, theta, sorted);
        REQUIRE(std::abs(inc_below - fresh.b) < 1e-9);
        REQUIRE(std::abs(inc_above - (fresh.a + fresh.b)) < 1e-9);
      }
    }
  }
}

TEST_CASE("boost_round picks the separating feature and bounds the loss", "[boosting]") {
  SECTION("perfectly separable single feature drives the loss to zero") {
    std::vector<TrainingSample> samples;
    for (int i = 0; i < 6; ++i) {
      std::vector<std::pair<std::uint32_t, float>> ctx;
      if (i < 3) ctx = {{1, 1.0f}};  // positives light up feature 1
      samples.push_back(make_sample(std::move(ctx), 3));
    }
    TrainerState state;
    state.pairs.resize(1);
    state.pairs[0].sample = {0, 1, 2, 3, 4, 5};
    state.pairs[0].weight = {1, 1, 1, 1, 1, 1};
    state.pairs[0].z = {1, 1, 1, -1, -1, -1};
    state.rng.seed(1);
    const FeatureColumns columns = build_feature_columns(samples);
    RoundOptions opt;
    opt.features_per_round = 3;
    const RoundResult round = boost_round(state, samples, columns, opt);
    CHECK(round.learner.feature == 1);
    CHECK(round.wse == Catch::Approx(0.0).margin(1e-12));
    CHECK(state.learners.size() == 1);
  }
  SECTION("the chosen loss never exceeds the zero learner's loss") {
    Rng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
      auto inst = testing::random_small_instance(rng);
      inst.state.rng.seed(trial);
      const FeatureColumns columns = build_feature_columns(inst.samples);
      RoundOptions opt;
      opt.features_per_round = static_cast<std::int32_t>(inst.num_features);
      const RoundResult round = boost_round(inst.state, inst.samples, columns, opt);
      double zero_loss = 0;
      for (const auto& p : inst.state.pairs)
        for (const double w : p.weight) zero_loss += w;
      REQUIRE(round.wse <= zero_loss + 1e-12);
    }
  }
  SECTION("small instances attain the exhaustive-enumeration minimum") {
    Rng rng(4242);
    for (int trial = 0; trial < 30; ++trial) {
      auto inst = testing::random_small_instance(rng);
      inst.state.rng.seed(trial);
      const FeatureColumns columns = build_feature_columns(inst.samples);
      RoundOptions opt;
      opt.features_per_round = static_cast<std::int32_t>(inst.num_features);
      const double oracle = testing::enumerate_best_loss(inst.state, inst.samples,
                                                         inst.num_features);
      const RoundResult round = boost_round(inst.state, inst.samples, columns, opt);
      REQUIRE(round.wse <= oracle + 1e-9);
    }
  }
}

TEST_CASE("update_weights applies the multiplicative rule", "[boosting]") {
  std::vector<TrainingSample> samples;
  samples.push_back(make_sample({{0, 1.0f}}, 1));
  samples.push_back(make_sample({{0, 1.0f}}, 1));
  TrainerState state;
  state.pairs.resize(1);
  state.pairs[0].sample = {0, 1};
  state.pairs[0].weight = {1.0, 1.0};
  state.pairs[0].z = {1, -1};
  state.training_cost = 1.0;

  SECTION("the zero learner leaves weights unchanged") {
    WeakLearner zero;
    zero.sharing = {0};
    zero.class_constants = {0.0};
    const double ratio = update_weights(state, samples, zero);
    CHECK(ratio == Catch::Approx(1.0));
    CHECK(state.pairs[0].weight[0] == Catch::Approx(1.0));
    CHECK(state.pairs[0].weight[1] == Catch::Approx(1.0));
  }
  SECTION("a missed pair ends up e^2 heavier than a correct pair") {
    WeakLearner learner;
    learner.feature = 0;
    learner.threshold = 0.5;
    learner.a = 1.0;
    learner.b = 0.0;  // h = +1 above threshold
    learner.sharing = {0};
    learner.class_constants = {0.0};
    update_weights(state, samples, learner);
    // pair 0 (z=+1) scored correctly, pair 1 (z=-1) missed
    CHECK(state.pairs[0].weight[1] / state.pairs[0].weight[0] ==
          Catch::Approx(std::exp(2.0)));
  }
  SECTION("weights stay positive and finite over 1000 rounds") {
    Rng rng(88);
    auto inst = testing::random_small_instance(rng, 3, 12, 4);
    inst.state.rng.seed(9);
    inst.state.training_cost = static_cast<double>(inst.state.num_classes());
    const FeatureColumns columns = build_feature_columns(inst.samples);
    RoundOptions opt;
    opt.features_per_round = static_cast<std::int32_t>(inst.num_features);
    double last_cost = inst.state.training_cost;
    for (int round = 0; round < 1000; ++round) {
      const RoundResult r = boost_round(inst.state, inst.samples, columns, opt);
      update_weights(inst.state, inst.samples, r.learner);
      REQUIRE(inst.state.training_cost <= last_cost + 1e-12);
      last_cost = inst.state.training_cost;
      for (const auto& p : inst.state.pairs)
        for (const double w : p.weight) {
          REQUIRE(w > 0);
          REQUIRE(std::isfinite(w));
        }
    }
  }
}

TEST_CASE("mine_hard_negatives grows negative sets from misclassified samples", "[boosting]") {
  // class 0 = victim: positives light feature 0; its negatives are flat.
  // class 1 = confusable duplicate with the same signature, initially absent
  // from the victim's negative set.
  std::vector<TrainingSample> samples;
  for (int i = 0; i < 4; ++i) samples.push_back(make_sample({{0, 1.0f}}, 2, 0));  // victim pos
  for (int i = 0; i < 8; ++i) samples.push_back(make_sample({}, 2, 0));           // flat
  for (int i = 0; i < 3; ++i) samples.push_back(make_sample({{0, 1.0f}}, 2, 1));  // duplicates

  SampleSets sets(2);
  sets.positives[0] = {0, 1, 2, 3};
  sets.negatives[0] = {4, 5, 6, 7, 8, 9, 10, 11};
  sets.positives[1] = {12, 13, 14};
  sets.negatives[1] = {4, 5, 6, 7};

  TrainerState state;
  state.init_from_sets(sets, samples.size(), 3);
  const FeatureColumns columns = build_feature_columns(samples);
  RoundOptions opt;
  opt.features_per_round = 2;

  MiningContext ctx;
  ctx.growth = 0.25;

  SECTION("no learners, no scores above zero, nothing mined") {
    const std::size_t added = mine_hard_negatives(state, samples, sets, ctx);
    CHECK(added == 0);
  }
  SECTION("duplicates enter the victim's negatives within two passes") {
    for (int round = 0; round < 4; ++round) {
      const RoundResult r = boost_round(state, samples, columns, opt);
      update_weights(state, samples, r.learner);
    }
    const std::size_t before = sets.negatives[0].size();
    const std::size_t added1 = mine_hard_negatives(state, samples, sets, ctx);
    CHECK(added1 > 0);
    CHECK(sets.negatives[0].size() - before <= before / 4);  // growth cap

    mine_hard_negatives(state, samples, sets, ctx);
    std::size_t duplicates_in = 0;
    for (const std::int32_t s : sets.negatives[0])
      if (s >= 12) ++duplicates_in;
    CHECK(duplicates_in >= 3);  // all duplicate samples mined
  }
}

TEST_CASE("train produces working deterministic models", "[boosting]") {
  const SfMMap map = grid_map(12, 8, 3, 13);
  const Vocabulary vocab = vocab_for(map, 4, 5);
  const RegionBank bank = generate_regions(24, RegionConfig{}, 3);
  TrainConfig cfg;
  cfg.rounds = 40;
  cfg.features_per_round = 32;
  cfg.landmark_budget = 12;
  cfg.background_cap = 20;
  cfg.mining_period = 15;
  cfg.holdout_fraction = 0.2;
  cfg.seed = 31;

  SECTION("zero rounds give the zero classifier") {
    TrainConfig zero = cfg;
    zero.rounds = 0;
    const TrainingData data = build_training_set(map, bank, vocab, zero);
    const BoostedModel model = train(zero, data, bank, vocab);
    CHECK(model.learners.empty());
    CHECK(score(model, data.samples[0].features, 1) == 0.0);
  }
  SECTION("training cost is non-increasing and logged per round") {
    const TrainingData data = build_training_set(map, bank, vocab, cfg);
    std::vector<RoundLog> log;
    const BoostedModel model = train(cfg, data, bank, vocab, &log);
    REQUIRE(log.size() == 40);
    for (std::size_t i = 1; i < log.size(); ++i) CHECK(log[i].cost <= log[i - 1].cost + 1e-12);
    CHECK(model.learners.size() == 40);
    for (const auto& l : model.learners) {
      CHECK(!l.sharing.empty());
      CHECK(l.feature < model.feature_dim());
    }
  }
  SECTION("identical config and seed give bit-identical model files") {
    const TrainingData data1 = build_training_set(map, bank, vocab, cfg);
    const TrainingData data2 = build_training_set(map, bank, vocab, cfg);
    const BoostedModel m1 = train(cfg, data1, bank, vocab);
    const BoostedModel m2 = train(cfg, data2, bank, vocab);
    const auto p1 = std::filesystem::temp_directory_path() / "lmboost_m1.json";
    const auto p2 = std::filesystem::temp_directory_path() / "lmboost_m2.json";
    save_model(m1, p1.string());
    save_model(m2, p2.string());
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    const std::string s1((std::istreambuf_iterator<char>(f1)), {});
    const std::string s2((std::istreambuf_iterator<char>(f2)), {});
    CHECK(s1 == s2);
    CHECK(!s1.empty());
    std::filesystem::remove(p1);
    std::filesystem::remove(p2);
  }
  SECTION("model files round-trip through save/load") {
    const TrainingData data = build_training_set(map, bank, vocab, cfg);
    const BoostedModel model = train(cfg, data, bank, vocab);
    const auto path = std::filesystem::temp_directory_path() / "lmboost_model.json";
    save_model(model, path.string());
    const BoostedModel loaded = load_model(path.string());
    REQUIRE(loaded.learners.size() == model.learners.size());
    for (std::size_t i = 0; i < model.learners.size(); ++i) {
      CHECK(loaded.learners[i].feature == model.learners[i].feature);
      CHECK(loaded.learners[i].threshold == model.learners[i].threshold);
      CHECK(loaded.learners[i].a == model.learners[i].a);
      CHECK(loaded.learners[i].b == model.learners[i].b);
      CHECK(loaded.learners[i].sharing == model.learners[i].sharing);
      CHECK(loaded.learners[i].class_constants == model.learners[i].class_constants);
    }
    CHECK(loaded.reference_scale == model.reference_scale);
    CHECK(loaded.classes.class_to_landmark == model.classes.class_to_landmark);
    std::filesystem::remove(path);
  }
}
