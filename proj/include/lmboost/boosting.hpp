#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "lmboost/context.hpp"
#include "lmboost/errors.hpp"
#include "lmboost/map.hpp"
#include "lmboost/rng.hpp"
#include "lmboost/vocabulary.hpp"

namespace lmboost {

/// One observation of a landmark (or an untracked keypoint for class 0),
/// turned into a classifier input.
struct TrainingSample {
  FeatureVector features;
  std::int32_t class_id = 0;  // 0 = background
  std::int64_t frame_id = 0;
  std::int32_t keypoint_index = 0;
};

/// Positive and negative sample index sets per class.
struct SampleSets {
  std::vector<std::vector<std::int32_t>> positives;
  std::vector<std::vector<std::int32_t>> negatives;

  explicit SampleSets(std::int32_t num_classes = 0)
      : positives(num_classes), negatives(num_classes) {}
};

/// Shared decision stump: classes in the sharing set get a step function on
/// one feature dimension, every other class gets its own constant.
struct WeakLearner {
  std::uint32_t feature = 0;
  double threshold = 0;
  double a = 0, b = 0;
  std::vector<std::int32_t> sharing;        // sorted ascending
  std::vector<double> class_constants;      // size C; entries of sharing classes are 0

  bool shares(std::int32_t cls) const {
    return std::binary_search(sharing.begin(), sharing.end(), cls);
  }

  double evaluate(double feature_value, std::int32_t cls) const {
    if (shares(cls)) return (feature_value > threshold ? a : 0.0) + b;
    return class_constants[static_cast<std::size_t>(cls)];
  }
};

struct TrainConfig {
  std::int32_t rounds = 500;
  std::int32_t features_per_round = 500;
  std::int32_t threshold_cap = 64;
  double negative_ratio = 10.0;
  std::int32_t negative_cap = 500;
  std::int32_t mining_period = 100;       // 0 disables mining
  double mining_growth = 0.25;
  std::int32_t landmark_budget = 7500;
  std::int32_t background_cap = 1000;
  double holdout_fraction = 0.1;
  double exclusion_radius = 0.5;          // meters
  bool include_descriptor = true;         // false: sample context features only
  std::int32_t exhaustive_sharing_limit = 8;
  std::uint64_t seed = 1;
};

/// Mutable training-time state: one weight per active (sample, class) pair.
struct TrainerState {
  struct ClassPairs {
    std::vector<std::int32_t> sample;
    std::vector<double> weight;
    std::vector<std::int8_t> z;  // +1 positive, -1 negative

    std::size_t size() const { return sample.size(); }
  };

  std::vector<ClassPairs> pairs;  // indexed by class
  std::vector<WeakLearner> learners;
  double training_cost = 0;       // telescoped exponential loss, logged as J
  std::int32_t round = 0;
  Rng rng{0};

  // CSR view: for each sample, its (class, pair index) entries.
  std::vector<std::int32_t> csr_offsets;
  std::vector<std::pair<std::int32_t, std::int32_t>> csr_entries;
  bool csr_dirty = true;

  std::int32_t num_classes() const { return static_cast<std::int32_t>(pairs.size()); }

  void init_from_sets(const SampleSets& sets, std::size_t num_samples,
                      std::uint64_t seed) {
    pairs.assign(sets.positives.size(), {});
    for (std::size_t c = 0; c < pairs.size(); ++c) {
      auto& p = pairs[c];
      const std::size_t n = sets.positives[c].size() + sets.negatives[c].size();
      p.sample.reserve(n);
      p.weight.reserve(n);
      p.z.reserve(n);
      const double w0 = n > 0 ? 1.0 / static_cast<double>(n) : 0.0;
      for (const std::int32_t s : sets.positives[c]) {
        p.sample.push_back(s);
        p.weight.push_back(w0);
        p.z.push_back(1);
      }
      for (const std::int32_t s : sets.negatives[c]) {
        p.sample.push_back(s);
        p.weight.push_back(w0);
        p.z.push_back(-1);
      }
    }
    training_cost = 0;
    for (const auto& p : pairs)
      if (!p.sample.empty()) training_cost += 1.0;
    round = 0;
    rng.seed(seed);
    csr_dirty = true;
    rebuild_csr(num_samples);
  }

  void rebuild_csr(std::size_t num_samples) {
    csr_offsets.assign(num_samples + 1, 0);
    std::size_t total = 0;
    for (const auto& p : pairs) total += p.size();
    csr_entries.resize(total);
    for (const auto& p : pairs)
      for (const std::int32_t s : p.sample) ++csr_offsets[static_cast<std::size_t>(s) + 1];
    for (std::size_t i = 1; i < csr_offsets.size(); ++i) csr_offsets[i] += csr_offsets[i - 1];
    std::vector<std::int32_t> cursor(csr_offsets.begin(), csr_offsets.end() - 1);
    for (std::int32_t c = 0; c < num_classes(); ++c) {
      const auto& p = pairs[static_cast<std::size_t>(c)];
      for (std::size_t i = 0; i < p.size(); ++i) {
        const std::int32_t s = p.sample[i];
        csr_entries[static_cast<std::size_t>(cursor[static_cast<std::size_t>(s)]++)] = {
            c, static_cast<std::int32_t>(i)};
      }
    }
    csr_dirty = false;
  }

  double total_weight() const {
    double w = 0;
    for (const auto& p : pairs)
      for (const double x : p.weight) w += x;
    return w;
  }
};

/// The trained matcher: M shared stumps plus everything needed to rebuild
/// query feature vectors (region bank, vocabulary, reference scale).
struct BoostedModel {
  std::vector<WeakLearner> learners;
  ClassTable classes;
  RegionBank bank;
  Vocabulary vocab;
  double reference_scale = 1.0;
  std::uint32_t descriptor_bits = 384;
  TrainConfig config;
  std::uint64_t map_fingerprint = 0;

  std::int32_t num_classes() const { return classes.num_classes(); }
  std::uint32_t context_dim() const {
    return static_cast<std::uint32_t>(bank.size()) * vocab.k();
  }
  std::uint32_t feature_dim() const { return context_dim() + descriptor_bits; }
};

// ---------------------------------------------------------------------------
// Training-set construction
// ---------------------------------------------------------------------------

struct TrainingData {
  std::vector<TrainingSample> samples;
  ClassTable classes;
  double reference_scale = 1.0;
  std::uint64_t map_fingerprint = 0;
  std::vector<Eigen::Vector3d> class_positions;  // [0] unused
  std::vector<std::uint32_t> sample_word;        // quantized raw descriptor
};

inline double median_keypoint_scale(const SfMMap& map) {
  std::vector<double> scales;
  scales.reserve(map.total_keypoints());
  for (const auto& f : map.frames)
    for (const auto& kp : f.keypoints) scales.push_back(kp.scale);
  if (scales.empty()) return 1.0;
  const std::size_t mid = (scales.size() - 1) / 2;
  std::nth_element(scales.begin(), scales.begin() + static_cast<std::ptrdiff_t>(mid),
                   scales.end());
  return scales[mid];
}

/// Ranks landmarks by observation count, assigns classes 1..K to the top
/// `landmark_budget`, and builds one sample per observation plus subsampled
/// background samples from untracked keypoints.
inline TrainingData build_training_set(const SfMMap& map, const RegionBank& bank,
                                       const Vocabulary& vocab, const TrainConfig& config) {
  TrainingData data;
  data.reference_scale = median_keypoint_scale(map);
  data.map_fingerprint = map.fingerprint();

  std::vector<const Landmark*> ranked;
  ranked.reserve(map.landmarks.size());
  for (const auto& lm : map.landmarks) ranked.push_back(&lm);
  std::sort(ranked.begin(), ranked.end(), [](const Landmark* a, const Landmark* b) {
    if (a->observations.size() != b->observations.size())
      return a->observations.size() > b->observations.size();
    return a->landmark_id < b->landmark_id;
  });
  std::size_t budget = static_cast<std::size_t>(std::max(config.landmark_budget, 0));
  if (budget > ranked.size()) {
    std::cerr << "build_training_set: budget " << budget << " exceeds landmark count "
              << ranked.size() << ", using all landmarks\n";
    budget = ranked.size();
  }
  ranked.resize(budget);

  data.class_positions.resize(budget + 1, Eigen::Vector3d::Zero());
  for (const Landmark* lm : ranked) {
    const std::int32_t cls = data.classes.add(lm->landmark_id);
    data.class_positions[static_cast<std::size_t>(cls)] = lm->position_world;
  }

  // Pick background keypoints up front so feature vectors are built in one
  // deterministic pass over frames.
  std::vector<std::pair<std::int64_t, std::int32_t>> untracked;
  for (const auto& f : map.frames)
    for (std::size_t i = 0; i < f.keypoints.size(); ++i)
      if (!f.keypoints[i].landmark_id)
        untracked.emplace_back(f.frame_id, static_cast<std::int32_t>(i));
  if (untracked.size() > static_cast<std::size_t>(config.background_cap)) {
    Rng rng(derive_seed(config.seed, "background"));
    shuffle(untracked, rng);
    untracked.resize(static_cast<std::size_t>(config.background_cap));
    std::sort(untracked.begin(), untracked.end());
  }
  std::size_t next_untracked = 0;

  for (const auto& f : map.frames) {
    // Does this frame contribute any sample?
    bool wanted = false;
    for (const auto& kp : f.keypoints)
      if (kp.landmark_id && data.classes.class_of(*kp.landmark_id) > 0) wanted = true;
    std::size_t untracked_begin = next_untracked;
    while (next_untracked < untracked.size() && untracked[next_untracked].first == f.frame_id)
      ++next_untracked;
    if (untracked_begin != next_untracked) wanted = true;
    if (!wanted) continue;

    FrameFeatureBuilder builder(f, bank, vocab, map.camera_of(f), data.reference_scale);
    for (std::size_t i = 0; i < f.keypoints.size(); ++i) {
      const auto& kp = f.keypoints[i];
      std::int32_t cls = -1;
      if (kp.landmark_id) {
        cls = data.classes.class_of(*kp.landmark_id);
        if (cls <= 0) continue;
      } else {
        const auto key = std::make_pair(f.frame_id, static_cast<std::int32_t>(i));
        if (!std::binary_search(untracked.begin(), untracked.end(), key)) continue;
        cls = 0;
      }
      TrainingSample s;
      s.features = builder.build(static_cast<std::int32_t>(i));
      s.class_id = cls;
      s.frame_id = f.frame_id;
      s.keypoint_index = static_cast<std::int32_t>(i);
      data.sample_word.push_back(quantize(s.features.descriptor, vocab));
      data.samples.push_back(std::move(s));
    }
  }
  return data;
}

/// Negatives for class c: samples of other classes whose raw descriptor
/// quantizes to a word used by c's positives, excluding landmarks within the
/// metric exclusion radius, topped up with random eligible samples.
inline std::vector<std::int32_t> bootstrap_negatives(
    const TrainingData& data, std::int32_t cls,
    const std::vector<std::int32_t>& positives, double exclusion_radius,
    std::size_t target, Rng& rng,
    const std::vector<std::uint8_t>* eligible = nullptr) {
  std::vector<std::uint8_t> word_used;
  for (const std::int32_t s : positives) {
    const std::uint32_t w = data.sample_word[static_cast<std::size_t>(s)];
    if (word_used.size() <= w) word_used.resize(w + 1, 0);
    word_used[w] = 1;
  }
  const Eigen::Vector3d own_position =
      cls > 0 ? data.class_positions[static_cast<std::size_t>(cls)] : Eigen::Vector3d::Zero();

  auto excluded_by_radius = [&](const TrainingSample& s) {
    if (cls <= 0 || s.class_id <= 0) return false;
    return (data.class_positions[static_cast<std::size_t>(s.class_id)] - own_position)
               .norm() <= exclusion_radius;
  };

  std::vector<std::int32_t> pool, rest;
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    if (eligible && !(*eligible)[i]) continue;
    const auto& s = data.samples[i];
    if (s.class_id == cls) continue;
    if (excluded_by_radius(s)) continue;
    const std::uint32_t w = data.sample_word[i];
    if (w < word_used.size() && word_used[w])
      pool.push_back(static_cast<std::int32_t>(i));
    else
      rest.push_back(static_cast<std::int32_t>(i));
  }

  std::vector<std::int32_t> out;
  if (pool.size() <= target) {
    out = pool;
  } else {
    shuffle(pool, rng);
    out.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(target));
  }
  if (out.size() < target && !rest.empty()) {
    shuffle(rest, rng);
    const std::size_t need = std::min(target - out.size(), rest.size());
    out.insert(out.end(), rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(need));
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Stump fitting
// ---------------------------------------------------------------------------

struct StumpFit {
  double a = 0, b = 0;
  double loss = 0;  // weighted squared error over the sharing set's pairs
};

/// Weighted least-squares stump on feature f at threshold theta over the
/// sharing set S: b is the below-threshold weighted mean of z, a+b the
/// above-threshold mean. An empty side pins that side's value to 0.
inline StumpFit fit_stump(const TrainerState& state,
                          const std::vector<TrainingSample>& samples, std::uint32_t f,
                          double theta, const std::vector<std::int32_t>& sharing) {
  double w_above = 0, wz_above = 0, w_below = 0, wz_below = 0;
  for (const std::int32_t c : sharing) {
    const auto& p = state.pairs[static_cast<std::size_t>(c)];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double v = samples[static_cast<std::size_t>(p.sample[i])].features.value_at(f);
      const double w = p.weight[i];
      const double wz = w * p.z[i];
      if (v > theta) {
        w_above += w;
        wz_above += wz;
      } else {
        w_below += w;
        wz_below += wz;
      }
    }
  }
  StumpFit fit;
  fit.b = w_below > 0 ? wz_below / w_below : 0.0;
  const double above = w_above > 0 ? wz_above / w_above : 0.0;
  fit.a = above - fit.b;
  for (const std::int32_t c : sharing) {
    const auto& p = state.pairs[static_cast<std::size_t>(c)];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double v = samples[static_cast<std::size_t>(p.sample[i])].features.value_at(f);
      const double h = v > theta ? above : fit.b;
      const double r = p.z[i] - h;
      fit.loss += p.weight[i] * r * r;
    }
  }
  return fit;
}

/// k^c: the weighted mean of z over the class's active pairs.
inline double fit_class_constant(const TrainerState& state, std::int32_t cls) {
  const auto& p = state.pairs[static_cast<std::size_t>(cls)];
  double w = 0, wz = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    w += p.weight[i];
    wz += p.weight[i] * p.z[i];
  }
  return w > 0 ? wz / w : 0.0;
}

/// Running numerator/denominator of a pooled weighted mean, grown one class
/// at a time from precomputed per-class statistics.
struct RunningWeightedMean {
  double num = 0, den = 0;
  double value() const { return den > 0 ? num / den : 0.0; }
};

/// Adds class c' with per-class side mean and side weight mass; returns the
/// updated pooled mean.
inline double incremental_update_b(RunningWeightedMean& running, double class_mean,
                                   double class_weight) {
  running.num += class_mean * class_weight;
  running.den += class_weight;
  return running.value();
}

namespace detail {

/// Per-class above/below-threshold sums at a fixed (f, theta).
struct ClassStats {
  std::vector<double> w_above, wz_above;  // size C
  std::vector<double> w_total, wz_total;  // per-round totals
  std::vector<double> gain;               // (wz_total)^2 / w_total
  double sum_total = 0, sum_gain = 0;

  void reset_round(const TrainerState& state) {
    const std::size_t c = static_cast<std::size_t>(state.num_classes());
    w_above.assign(c, 0);
    wz_above.assign(c, 0);
    w_total.assign(c, 0);
    wz_total.assign(c, 0);
    gain.assign(c, 0);
    sum_total = sum_gain = 0;
    for (std::size_t k = 0; k < c; ++k) {
      const auto& p = state.pairs[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        w_total[k] += p.weight[i];
        wz_total[k] += p.weight[i] * p.z[i];
      }
      if (w_total[k] > 0) gain[k] = wz_total[k] * wz_total[k] / w_total[k];
      sum_total += w_total[k];
      sum_gain += gain[k];
    }
  }
};

inline double safe_gain(double wz, double w) { return w > 0 ? wz * wz / w : 0.0; }

/// J of a sharing set given pooled above/below sums plus the constant-k loss
/// of the classes outside the set.
inline double sharing_cost(const ClassStats& stats, double sw_above, double swz_above,
                           double sw_below, double swz_below, double inside_gain) {
  const double shared = safe_gain(swz_above, sw_above) + safe_gain(swz_below, sw_below);
  return stats.sum_total - shared - (stats.sum_gain - inside_gain);
}

}  // namespace detail

/// Classes ordered by their individual above-threshold weighted mean of z
/// (descending; ties by class index). Prefixes of this order are the sharing
/// set candidates evaluated by large instances.
inline std::vector<std::int32_t> init_sharing_set(const TrainerState& state,
                                                  const std::vector<TrainingSample>& samples,
                                                  std::uint32_t f, double theta) {
  const std::int32_t c = state.num_classes();
  std::vector<double> response(static_cast<std::size_t>(c), 0.0);
  for (std::int32_t k = 0; k < c; ++k) {
    const auto& p = state.pairs[static_cast<std::size_t>(k)];
    double w = 0, wz = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double v = samples[static_cast<std::size_t>(p.sample[i])].features.value_at(f);
      if (v > theta) {
        w += p.weight[i];
        wz += p.weight[i] * p.z[i];
      }
    }
    response[static_cast<std::size_t>(k)] = w > 0 ? wz / w : 0.0;
  }
  std::vector<std::int32_t> order(static_cast<std::size_t>(c));
  for (std::int32_t k = 0; k < c; ++k) order[static_cast<std::size_t>(k)] = k;
  std::stable_sort(order.begin(), order.end(), [&](std::int32_t x, std::int32_t y) {
    const double bx = response[static_cast<std::size_t>(x)];
    const double by = response[static_cast<std::size_t>(y)];
    if (bx != by) return bx > by;
    return x < y;
  });
  return order;
}

// ---------------------------------------------------------------------------
// Boosting rounds
// ---------------------------------------------------------------------------

/// Columnar view of the feature matrix over the fitting samples: sparse
/// (sample, value) lists for context features, set-bit sample lists for
/// descriptor features.
struct FeatureColumns {
  std::uint32_t context_dim = 0;
  std::uint32_t descriptor_bits = 0;
  std::size_t num_samples = 0;
  std::vector<std::vector<std::pair<std::int32_t, float>>> context;  // by feature
  std::vector<std::vector<std::int32_t>> descriptor_ones;            // by bit

  std::uint32_t dim() const { return context_dim + descriptor_bits; }

  std::vector<std::pair<std::int32_t, float>> nonzeros(std::uint32_t f) const {
    if (f < context_dim) return context[f];
    std::vector<std::pair<std::int32_t, float>> out;
    out.reserve(descriptor_ones[f - context_dim].size());
    for (const std::int32_t s : descriptor_ones[f - context_dim])
      out.emplace_back(s, 1.0f);
    return out;
  }
};

/// `include`, when given, masks out samples (e.g. the held-out split).
inline FeatureColumns build_feature_columns(const std::vector<TrainingSample>& samples,
                                            const std::vector<std::uint8_t>* include = nullptr) {
  FeatureColumns cols;
  if (samples.empty()) return cols;
  cols.context_dim = samples[0].features.context_dim();
  cols.descriptor_bits = samples[0].features.descriptor.size_bits();
  cols.num_samples = samples.size();
  cols.context.resize(cols.context_dim);
  cols.descriptor_ones.resize(cols.descriptor_bits);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (include && !(*include)[i]) continue;
    const auto& fv = samples[i].features;
    if (fv.context_dim() != cols.context_dim ||
        fv.descriptor.size_bits() != cols.descriptor_bits)
      throw Error("build_feature_columns: inconsistent feature dimensions");
    for (const auto& [f, v] : fv.context)
      cols.context[f].emplace_back(static_cast<std::int32_t>(i), v);
    for (std::uint32_t b = 0; b < cols.descriptor_bits; ++b)
      if (fv.descriptor.get(b))
        cols.descriptor_ones[b].push_back(static_cast<std::int32_t>(i));
  }
  return cols;
}

struct RoundOptions {
  std::int32_t features_per_round = 500;
  std::int32_t threshold_cap = 64;
  bool include_descriptor = true;
  std::int32_t exhaustive_sharing_limit = 8;
};

struct RoundResult {
  WeakLearner learner;
  double wse = 0;          // Eq-style weighted squared error of the chosen stump
  bool found = false;
  char feature_kind = 'c';  // 'c' context, 'd' descriptor
};

namespace detail {

struct BestChoice {
  double cost = std::numeric_limits<double>::infinity();
  std::uint32_t feature = 0;
  double theta = 0;
  std::vector<std::int32_t> sharing;
};

struct SharingSums {
  double w_above = 0, wz_above = 0, w_below = 0, wz_below = 0, inside_gain = 0;

  void add(const ClassStats& stats, std::int32_t c) { apply(stats, c, 1.0); }
  void remove(const ClassStats& stats, std::int32_t c) { apply(stats, c, -1.0); }

  void apply(const ClassStats& stats, std::int32_t c, double sign) {
    const auto k = static_cast<std::size_t>(c);
    w_above += sign * stats.w_above[k];
    wz_above += sign * stats.wz_above[k];
    w_below += sign * (stats.w_total[k] - stats.w_above[k]);
    wz_below += sign * (stats.wz_total[k] - stats.wz_above[k]);
    inside_gain += sign * stats.gain[k];
  }

  double cost(const ClassStats& stats) const {
    return sharing_cost(stats, w_above, wz_above, w_below, wz_below, inside_gain);
  }
};

/// Evaluates every sharing-set candidate at one (f, theta); updates `best`
/// under strict improvement so earlier features/thresholds win ties.
///
/// Small class counts are enumerated exhaustively. Large ones use the
/// response-ordered prefix candidates followed by a bounded local refinement
/// (single-class add/remove hill climbing), matching the two-stage
/// initialize-then-refine selection.
inline void select_sharing_set(const ClassStats& stats,
                               const std::vector<std::int32_t>& touched,
                               std::int32_t num_classes, std::int32_t exhaustive_limit,
                               std::uint32_t f, double theta, BestChoice& best) {
  if (num_classes <= exhaustive_limit) {
    const std::uint32_t full = (1u << num_classes) - 1;
    for (std::uint32_t mask = 1; mask <= full; ++mask) {
      SharingSums sums;
      for (std::int32_t c = 0; c < num_classes; ++c)
        if (mask & (1u << c)) sums.add(stats, c);
      const double cost = sums.cost(stats);
      if (cost < best.cost) {
        best.cost = cost;
        best.feature = f;
        best.theta = theta;
        best.sharing.clear();
        for (std::int32_t c = 0; c < num_classes; ++c)
          if (mask & (1u << c)) best.sharing.push_back(c);
      }
    }
    return;
  }

  // Order touched classes by above-threshold response, then merge with the
  // untouched classes (response exactly 0, ordered by index). Prefixes of the
  // merged order are the initial candidates.
  std::vector<std::pair<double, std::int32_t>> scored;
  scored.reserve(touched.size());
  std::vector<std::uint8_t> is_touched(static_cast<std::size_t>(num_classes), 0);
  for (const std::int32_t c : touched) {
    const auto k = static_cast<std::size_t>(c);
    // Subtraction residue from the threshold sweep can leave a denormal mass
    // behind; treat it as an untouched class.
    if (stats.w_above[k] <= 1e-12 * stats.w_total[k]) continue;
    scored.emplace_back(stats.wz_above[k] / stats.w_above[k], c);
    is_touched[k] = 1;
  }
  std::sort(scored.begin(), scored.end(), [](const auto& x, const auto& y) {
    if (x.first != y.first) return x.first > y.first;
    return x.second < y.second;
  });

  std::size_t si = 0;
  std::int32_t ui = 0;  // next untouched class index candidate
  std::vector<std::int32_t> merged;
  merged.reserve(static_cast<std::size_t>(num_classes));
  for (std::int32_t taken = 0; taken < num_classes; ++taken) {
    std::int32_t next;
    while (ui < num_classes && is_touched[static_cast<std::size_t>(ui)]) ++ui;
    if (si < scored.size() &&
        (ui >= num_classes || scored[si].first > 0 ||
         (scored[si].first == 0 && scored[si].second < ui))) {
      next = scored[si].second;
      ++si;
    } else {
      next = ui;
      ++ui;
    }
    merged.push_back(next);
  }

  // Prefixes of the response order group classes that respond positively;
  // prefixes of the reversed order group the strongly negative responders
  // (a stump with a < 0 fits them). Keep the better prefix of both walks.
  std::size_t best_len = 0;
  bool best_reversed = false;
  double best_cost = std::numeric_limits<double>::infinity();
  for (const bool reversed : {false, true}) {
    SharingSums sums;
    for (std::int32_t taken = 0; taken < num_classes; ++taken) {
      const std::int32_t c =
          reversed ? merged[static_cast<std::size_t>(num_classes - 1 - taken)]
                   : merged[static_cast<std::size_t>(taken)];
      sums.add(stats, c);
      const double cost = sums.cost(stats);
      if (cost < best_cost) {
        best_cost = cost;
        best_len = static_cast<std::size_t>(taken) + 1;
        best_reversed = reversed;
      }
    }
  }

  // Refine the winning prefix: repeatedly apply the single most improving
  // class add/remove. Every move costs O(1) on the aggregates.
  std::vector<std::uint8_t> member(static_cast<std::size_t>(num_classes), 0);
  SharingSums sums;
  for (std::size_t i = 0; i < best_len; ++i) {
    const std::int32_t c =
        best_reversed ? merged[static_cast<std::size_t>(num_classes) - 1 - i] : merged[i];
    member[static_cast<std::size_t>(c)] = 1;
    sums.add(stats, c);
  }
  std::size_t set_size = best_len;
  const int refine_cap = 16;
  for (int pass = 0; pass < refine_cap; ++pass) {
    double pass_best = best_cost;
    std::int32_t pass_class = -1;
    for (std::int32_t c = 0; c < num_classes; ++c) {
      const bool in = member[static_cast<std::size_t>(c)];
      if (in && set_size == 1) continue;  // the set must stay nonempty
      SharingSums trial = sums;
      trial.apply(stats, c, in ? -1.0 : 1.0);
      const double cost = trial.cost(stats);
      if (cost < pass_best) {
        pass_best = cost;
        pass_class = c;
      }
    }
    if (pass_class < 0) break;
    const bool was_in = member[static_cast<std::size_t>(pass_class)];
    sums.apply(stats, pass_class, was_in ? -1.0 : 1.0);
    member[static_cast<std::size_t>(pass_class)] = was_in ? 0 : 1;
    set_size += was_in ? -1 : 1;
    best_cost = pass_best;
  }

  if (best_cost < best.cost) {
    best.cost = best_cost;
    best.feature = f;
    best.theta = theta;
    best.sharing.clear();
    for (std::int32_t c = 0; c < num_classes; ++c)
      if (member[static_cast<std::size_t>(c)]) best.sharing.push_back(c);
  }
}

}  // namespace detail

/// Production sharing-set selection at a single (f, theta): per-class stats
/// are computed directly, then the same candidate search as the round sweep
/// runs (exhaustive under the limit, prefix + refinement above it).
inline std::pair<std::vector<std::int32_t>, double> select_sharing_set_at(
    const TrainerState& state, const std::vector<TrainingSample>& samples, std::uint32_t f,
    double theta, std::int32_t exhaustive_limit) {
  detail::ClassStats stats;
  stats.reset_round(state);
  std::vector<std::int32_t> touched;
  for (std::int32_t c = 0; c < state.num_classes(); ++c) {
    const auto& p = state.pairs[static_cast<std::size_t>(c)];
    bool any = false;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double v = samples[static_cast<std::size_t>(p.sample[i])].features.value_at(f);
      if (v > theta) {
        stats.w_above[static_cast<std::size_t>(c)] += p.weight[i];
        stats.wz_above[static_cast<std::size_t>(c)] += p.weight[i] * p.z[i];
        any = true;
      }
    }
    if (any) touched.push_back(c);
  }
  detail::BestChoice best;
  detail::select_sharing_set(stats, touched, state.num_classes(), exhaustive_limit, f, theta,
                             best);
  return {best.sharing, best.cost};
}

/// One boosting round: samples candidate feature dimensions, sweeps the
/// thresholds of each, selects the sharing set minimizing the weighted
/// squared error, refits the winner exactly and appends it.
inline RoundResult boost_round(TrainerState& state, const std::vector<TrainingSample>& samples,
                               const FeatureColumns& columns, const RoundOptions& opt) {
  if (state.csr_dirty) state.rebuild_csr(columns.num_samples);
  const std::int32_t num_classes = state.num_classes();

  detail::ClassStats stats;
  stats.reset_round(state);

  // Candidate feature dimensions, distinct, evaluated in ascending order.
  const std::uint32_t dim_limit = opt.include_descriptor ? columns.dim() : columns.context_dim;
  std::vector<std::uint32_t> features;
  if (static_cast<std::uint32_t>(opt.features_per_round) >= dim_limit) {
    features.resize(dim_limit);
    for (std::uint32_t f = 0; f < dim_limit; ++f) features[f] = f;
  } else {
    std::vector<std::uint8_t> chosen(dim_limit, 0);
    while (features.size() < static_cast<std::size_t>(opt.features_per_round)) {
      const auto f = static_cast<std::uint32_t>(uniform_below(state.rng, dim_limit));
      if (!chosen[f]) {
        chosen[f] = 1;
        features.push_back(f);
      }
    }
    std::sort(features.begin(), features.end());
  }

  detail::BestChoice best;
  std::vector<std::int32_t> touched;
  std::vector<std::uint8_t> touched_mask(static_cast<std::size_t>(num_classes), 0);

  // Count of active pairs whose sample has a zero value at the feature,
  // detected via total active samples vs nonzero active samples.
  std::size_t active_samples = 0;
  for (std::size_t s = 0; s < columns.num_samples; ++s)
    if (state.csr_offsets[s + 1] > state.csr_offsets[s]) ++active_samples;

  for (const std::uint32_t f : features) {
    auto nz = columns.nonzeros(f);
    // Keep only samples with active pairs; sort by value for the sweep.
    std::erase_if(nz, [&](const auto& e) {
      const auto s = static_cast<std::size_t>(e.first);
      return state.csr_offsets[s + 1] == state.csr_offsets[s];
    });
    std::sort(nz.begin(), nz.end(), [](const auto& x, const auto& y) {
      if (x.second != y.second) return x.second < y.second;
      return x.first < y.first;
    });

    std::vector<float> uniques;
    if (nz.size() < active_samples) uniques.push_back(0.0f);
    for (const auto& [s, v] : nz)
      if (uniques.empty() || uniques.back() != v) uniques.push_back(v);
    if (uniques.size() < 2) continue;

    // Initialize above-threshold stats with every nonzero sample.
    for (const std::int32_t c : touched) touched_mask[static_cast<std::size_t>(c)] = 0;
    touched.clear();
    for (const auto& [s, v] : nz) {
      for (std::int32_t e = state.csr_offsets[static_cast<std::size_t>(s)];
           e < state.csr_offsets[static_cast<std::size_t>(s) + 1]; ++e) {
        const auto [c, pi] = state.csr_entries[static_cast<std::size_t>(e)];
        const auto& p = state.pairs[static_cast<std::size_t>(c)];
        const auto k = static_cast<std::size_t>(c);
        stats.w_above[k] += p.weight[static_cast<std::size_t>(pi)];
        stats.wz_above[k] += p.weight[static_cast<std::size_t>(pi)] *
                             p.z[static_cast<std::size_t>(pi)];
        if (!touched_mask[k]) {
          touched_mask[k] = 1;
          touched.push_back(c);
        }
      }
    }

    // Threshold candidates: midpoints of consecutive unique values,
    // subsampled evenly to the cap.
    const std::size_t n_mid = uniques.size() - 1;
    std::vector<std::size_t> selected;
    if (n_mid <= static_cast<std::size_t>(opt.threshold_cap)) {
      selected.resize(n_mid);
      for (std::size_t t = 0; t < n_mid; ++t) selected[t] = t;
    } else {
      selected.resize(static_cast<std::size_t>(opt.threshold_cap));
      for (std::size_t j = 0; j < selected.size(); ++j)
        selected[j] = j * n_mid / selected.size();
    }

    std::size_t ptr = 0;
    std::size_t sel = 0;
    for (std::size_t t = 0; t < n_mid && sel < selected.size(); ++t) {
      // Samples valued at uniques[t] drop below the threshold.
      while (ptr < nz.size() && nz[ptr].second == uniques[t]) {
        const auto s = static_cast<std::size_t>(nz[ptr].first);
        for (std::int32_t e = state.csr_offsets[s]; e < state.csr_offsets[s + 1]; ++e) {
          const auto [c, pi] = state.csr_entries[static_cast<std::size_t>(e)];
          const auto& p = state.pairs[static_cast<std::size_t>(c)];
          const auto k = static_cast<std::size_t>(c);
          stats.w_above[k] -= p.weight[static_cast<std::size_t>(pi)];
          stats.wz_above[k] -= p.weight[static_cast<std::size_t>(pi)] *
                               p.z[static_cast<std::size_t>(pi)];
        }
        ++ptr;
      }
      if (t == selected[sel]) {
        ++sel;
        const double theta =
            (static_cast<double>(uniques[t]) + static_cast<double>(uniques[t + 1])) / 2.0;
        detail::select_sharing_set(stats, touched, num_classes,
                                   opt.exhaustive_sharing_limit, f, theta, best);
      }
    }
    // Reset per-feature stats (remaining above-mass).
    for (const std::int32_t c : touched) {
      stats.w_above[static_cast<std::size_t>(c)] = 0;
      stats.wz_above[static_cast<std::size_t>(c)] = 0;
      touched_mask[static_cast<std::size_t>(c)] = 0;
    }
    touched.clear();
  }

  RoundResult result;
  if (!std::isfinite(best.cost)) {
    // No usable feature this round (e.g. constant columns): fall back to the
    // zero learner over all classes.
    result.learner.feature = 0;
    result.learner.threshold = 0;
    result.learner.a = result.learner.b = 0;
    result.learner.sharing.resize(static_cast<std::size_t>(num_classes));
    for (std::int32_t c = 0; c < num_classes; ++c)
      result.learner.sharing[static_cast<std::size_t>(c)] = c;
    result.learner.class_constants.assign(static_cast<std::size_t>(num_classes), 0.0);
    result.wse = stats.sum_total;
  } else {
    // Exact refit of the winner.
    const StumpFit fit = fit_stump(state, samples, best.feature, best.theta, best.sharing);
    result.learner.feature = best.feature;
    result.learner.threshold = best.theta;
    result.learner.a = fit.a;
    result.learner.b = fit.b;
    result.learner.sharing = best.sharing;
    result.learner.class_constants.assign(static_cast<std::size_t>(num_classes), 0.0);
    result.wse = fit.loss;
    std::vector<std::uint8_t> in_sharing(static_cast<std::size_t>(num_classes), 0);
    for (const std::int32_t c : best.sharing) in_sharing[static_cast<std::size_t>(c)] = 1;
    for (std::int32_t c = 0; c < num_classes; ++c) {
      if (in_sharing[static_cast<std::size_t>(c)]) continue;
      const double k = fit_class_constant(state, c);
      result.learner.class_constants[static_cast<std::size_t>(c)] = k;
      const auto& p = state.pairs[static_cast<std::size_t>(c)];
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double r = p.z[i] - k;
        result.wse += p.weight[i] * r * r;
      }
    }
    result.found = true;
    result.feature_kind = best.feature < columns.context_dim ? 'c' : 'd';
  }
  state.learners.push_back(result.learner);
  ++state.round;
  return result;
}

/// Multiplicative gentleboost update w <- w * exp(-z h). Weights are rescaled
/// globally (never per class) so the fit is unchanged while magnitudes stay
/// bounded; the returned ratio (new total / old total) telescopes into the
/// logged training cost and is <= 1 because every stump value is a weighted
/// mean of z over its pairs.
inline double update_weights(TrainerState& state, const std::vector<TrainingSample>& samples,
                             const WeakLearner& learner) {
  double before = 0, after = 0;
  const double above = learner.a + learner.b;
  for (std::int32_t c = 0; c < state.num_classes(); ++c) {
    auto& p = state.pairs[static_cast<std::size_t>(c)];
    const bool shared = learner.shares(c);
    const double k = shared ? 0.0 : learner.class_constants[static_cast<std::size_t>(c)];
    for (std::size_t i = 0; i < p.size(); ++i) {
      double h;
      if (shared) {
        const double v =
            samples[static_cast<std::size_t>(p.sample[i])].features.value_at(learner.feature);
        h = v > learner.threshold ? above : learner.b;
      } else {
        h = k;
      }
      before += p.weight[i];
      p.weight[i] *= std::exp(-static_cast<double>(p.z[i]) * h);
      after += p.weight[i];
    }
  }
  const double ratio = before > 0 ? after / before : 1.0;
  state.training_cost *= ratio;
  if (after > 0) {
    const double rescale = before / after;
    for (auto& p : state.pairs)
      for (double& w : p.weight) w *= rescale;
  }
  return ratio;
}

struct MiningContext {
  const std::vector<std::uint8_t>* fitting_mask = nullptr;  // samples usable for fitting
  const std::vector<Eigen::Vector3d>* class_positions = nullptr;
  double exclusion_radius = 0.5;
  double growth = 0.25;
};

/// Adds samples the current classifier misranks as positives of a class to
/// that class's negative set: per class, the top-scoring offenders with
/// H(v, c) > 0, capped at `growth` of the current negative set size. New
/// pairs start at the class's mean negative weight.
inline std::size_t mine_hard_negatives(TrainerState& state,
                                       const std::vector<TrainingSample>& samples,
                                       SampleSets& sets, const MiningContext& ctx) {
  const std::int32_t num_classes = state.num_classes();

  // Constant part of H(v, c): class_constants of sharing classes are stored
  // as zero, so this sums exactly the out-of-set contributions.
  std::vector<double> k_sum(static_cast<std::size_t>(num_classes), 0.0);
  for (const auto& learner : state.learners)
    for (std::int32_t c = 0; c < num_classes; ++c)
      k_sum[static_cast<std::size_t>(c)] +=
          learner.class_constants[static_cast<std::size_t>(c)];

  std::vector<std::vector<std::pair<double, std::int32_t>>> offenders(
      static_cast<std::size_t>(num_classes));
  std::vector<std::vector<std::uint8_t>> active(static_cast<std::size_t>(num_classes));
  for (std::int32_t c = 0; c < num_classes; ++c) {
    active[static_cast<std::size_t>(c)].assign(samples.size(), 0);
    const auto& p = state.pairs[static_cast<std::size_t>(c)];
    for (const std::int32_t s : p.sample)
      active[static_cast<std::size_t>(c)][static_cast<std::size_t>(s)] = 1;
  }

  std::vector<double> score(static_cast<std::size_t>(num_classes));
  for (std::size_t s = 0; s < samples.size(); ++s) {
    if (ctx.fitting_mask && !(*ctx.fitting_mask)[s]) continue;
    score = k_sum;
    for (const auto& learner : state.learners) {
      const double v = samples[s].features.value_at(learner.feature);
      const double h = (v > learner.threshold ? learner.a : 0.0) + learner.b;
      for (const std::int32_t c : learner.sharing)
        score[static_cast<std::size_t>(c)] += h;
    }
    const auto& sample = samples[s];
    for (std::int32_t c = 0; c < num_classes; ++c) {
      if (score[static_cast<std::size_t>(c)] <= 0) continue;
      if (sample.class_id == c) continue;
      if (active[static_cast<std::size_t>(c)][s]) continue;
      if (ctx.class_positions && c > 0 && sample.class_id > 0) {
        const auto& positions = *ctx.class_positions;
        if ((positions[static_cast<std::size_t>(c)] -
             positions[static_cast<std::size_t>(sample.class_id)])
                .norm() <= ctx.exclusion_radius)
          continue;
      }
      offenders[static_cast<std::size_t>(c)].emplace_back(
          score[static_cast<std::size_t>(c)], static_cast<std::int32_t>(s));
    }
  }

  std::size_t added_total = 0;
  for (std::int32_t c = 0; c < num_classes; ++c) {
    auto& off = offenders[static_cast<std::size_t>(c)];
    if (off.empty()) continue;
    auto& p = state.pairs[static_cast<std::size_t>(c)];
    auto& negatives = sets.negatives[static_cast<std::size_t>(c)];
    const std::size_t cap = static_cast<std::size_t>(
        ctx.growth * static_cast<double>(negatives.size()));
    if (cap == 0) continue;
    std::sort(off.begin(), off.end(), [](const auto& x, const auto& y) {
      if (x.first != y.first) return x.first > y.first;
      return x.second < y.second;
    });
    if (off.size() > cap) off.resize(cap);

    double mean_neg = 0;
    std::size_t n_neg = 0;
    for (std::size_t i = 0; i < p.size(); ++i)
      if (p.z[i] < 0) {
        mean_neg += p.weight[i];
        ++n_neg;
      }
    mean_neg = n_neg > 0 ? mean_neg / static_cast<double>(n_neg)
                         : (p.size() > 0 ? p.weight[0] : 1.0);

    for (const auto& [sc, s] : off) {
      (void)sc;
      p.sample.push_back(s);
      p.weight.push_back(mean_neg);
      p.z.push_back(-1);
      negatives.push_back(s);
      ++added_total;
    }
    std::sort(negatives.begin(), negatives.end());
  }
  if (added_total > 0) state.csr_dirty = true;
  return added_total;
}

// ---------------------------------------------------------------------------
// Full training loop
// ---------------------------------------------------------------------------

struct RoundLog {
  std::int32_t round = 0;
  double cost = 0;  // logged J: telescoped exponential training cost
  double heldout_precision_at_1 = 0;
  std::int32_t sharing_set_size = 0;
  char feature_kind = 'c';
};

/// Trains the full model: per-class hold-out split, bootstrapped negatives,
/// M boosting rounds with weight updates and periodic hard-negative mining.
/// Fully deterministic given the config seed.
inline BoostedModel train(const TrainConfig& config, const TrainingData& data,
                          const RegionBank& bank, const Vocabulary& vocab,
                          std::vector<RoundLog>* log = nullptr) {
  if (data.samples.empty()) throw Error("train: empty training set");
  const std::int32_t num_classes = data.classes.num_classes();

  SampleSets sets(num_classes);
  for (std::size_t i = 0; i < data.samples.size(); ++i)
    sets.positives[static_cast<std::size_t>(data.samples[i].class_id)].push_back(
        static_cast<std::int32_t>(i));

  // Hold out a fraction of each class's observations for the training log.
  std::vector<std::uint8_t> fitting(data.samples.size(), 1);
  std::vector<std::int32_t> heldout;
  {
    Rng rng(derive_seed(config.seed, "holdout"));
    for (std::int32_t c = 0; c < num_classes; ++c) {
      auto& pos = sets.positives[static_cast<std::size_t>(c)];
      const std::size_t n_hold =
          static_cast<std::size_t>(config.holdout_fraction * static_cast<double>(pos.size()));
      if (n_hold == 0 || n_hold >= pos.size()) continue;
      std::vector<std::int32_t> shuffled = pos;
      shuffle(shuffled, rng);
      for (std::size_t i = 0; i < n_hold; ++i) {
        fitting[static_cast<std::size_t>(shuffled[i])] = 0;
        heldout.push_back(shuffled[i]);
      }
      pos.erase(std::remove_if(pos.begin(), pos.end(),
                               [&](std::int32_t s) { return !fitting[static_cast<std::size_t>(s)]; }),
                pos.end());
    }
    std::sort(heldout.begin(), heldout.end());
  }

  {
    Rng rng(derive_seed(config.seed, "negatives"));
    for (std::int32_t c = 0; c < num_classes; ++c) {
      const auto& pos = sets.positives[static_cast<std::size_t>(c)];
      if (pos.empty()) continue;
      const std::size_t target = std::min<std::size_t>(
          static_cast<std::size_t>(config.negative_ratio * static_cast<double>(pos.size())),
          static_cast<std::size_t>(config.negative_cap));
      sets.negatives[static_cast<std::size_t>(c)] = bootstrap_negatives(
          data, c, pos, config.exclusion_radius, target, rng, &fitting);
    }
  }

  const FeatureColumns columns = build_feature_columns(data.samples, &fitting);

  TrainerState state;
  state.init_from_sets(sets, data.samples.size(), derive_seed(config.seed, "boost"));

  RoundOptions opt;
  opt.features_per_round = config.features_per_round;
  opt.threshold_cap = config.threshold_cap;
  opt.include_descriptor = config.include_descriptor;
  opt.exhaustive_sharing_limit = config.exhaustive_sharing_limit;

  MiningContext mining;
  mining.fitting_mask = &fitting;
  mining.class_positions = &data.class_positions;
  mining.exclusion_radius = config.exclusion_radius;
  mining.growth = config.mining_growth;

  // Accumulated classifier scores of the held-out samples, for the per-round
  // precision@1 column.
  std::vector<double> heldout_scores(heldout.size() * static_cast<std::size_t>(num_classes),
                                     0.0);

  for (std::int32_t m = 0; m < config.rounds; ++m) {
    const RoundResult round = boost_round(state, data.samples, columns, opt);
    update_weights(state, data.samples, round.learner);

    double precision = 0;
    if (!heldout.empty()) {
      std::size_t correct = 0;
      for (std::size_t h = 0; h < heldout.size(); ++h) {
        double* row = &heldout_scores[h * static_cast<std::size_t>(num_classes)];
        const auto& sample = data.samples[static_cast<std::size_t>(heldout[h])];
        const double v = sample.features.value_at(round.learner.feature);
        const double shared_value =
            (v > round.learner.threshold ? round.learner.a : 0.0) + round.learner.b;
        for (std::int32_t c = 0; c < num_classes; ++c)
          row[static_cast<std::size_t>(c)] +=
              round.learner.class_constants[static_cast<std::size_t>(c)];
        for (const std::int32_t c : round.learner.sharing)
          row[static_cast<std::size_t>(c)] += shared_value;
        std::int32_t head = 0;
        for (std::int32_t c = 1; c < num_classes; ++c)
          if (row[static_cast<std::size_t>(c)] > row[static_cast<std::size_t>(head)]) head = c;
        if (head == sample.class_id) ++correct;
      }
      precision = static_cast<double>(correct) / static_cast<double>(heldout.size());
    }

    if (log)
      log->push_back({m, state.training_cost, precision,
                      static_cast<std::int32_t>(round.learner.sharing.size()),
                      round.feature_kind});

    if (config.mining_period > 0 && (m + 1) % config.mining_period == 0 &&
        m + 1 < config.rounds)
      mine_hard_negatives(state, data.samples, sets, mining);
  }

  BoostedModel model;
  model.learners = std::move(state.learners);
  model.classes = data.classes;
  model.bank = bank;
  model.vocab = vocab;
  model.reference_scale = data.reference_scale;
  model.descriptor_bits = vocab.descriptor_bits;
  model.config = config;
  model.map_fingerprint = data.map_fingerprint;
  return model;
}

}  // namespace lmboost
