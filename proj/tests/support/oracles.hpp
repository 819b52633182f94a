// Test-only reference implementations. Everything here recomputes results
// with plain loops, independent of the production sweep/selection paths it is
// used to check.
#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "lmboost/boosting.hpp"
#include "lmboost/rng.hpp"

namespace lmboost::testing {

/// Direct Eq-style loss of a stump (f, theta) shared by S with per-class
/// constants outside: plain loops, no incremental algebra.
inline double direct_loss(const TrainerState& state, const std::vector<TrainingSample>& samples,
                          std::uint32_t f, double theta,
                          const std::vector<std::int32_t>& sharing) {
  std::vector<std::uint8_t> in_sharing(static_cast<std::size_t>(state.num_classes()), 0);
  for (const std::int32_t c : sharing) in_sharing[static_cast<std::size_t>(c)] = 1;

  double w_above = 0, wz_above = 0, w_below = 0, wz_below = 0;
  for (const std::int32_t c : sharing) {
    const auto& p = state.pairs[static_cast<std::size_t>(c)];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double v = samples[static_cast<std::size_t>(p.sample[i])].features.value_at(f);
      if (v > theta) {
        w_above += p.weight[i];
        wz_above += p.weight[i] * p.z[i];
      } else {
        w_below += p.weight[i];
        wz_below += p.weight[i] * p.z[i];
      }
    }
  }
  const double above = w_above > 0 ? wz_above / w_above : 0.0;
  const double below = w_below > 0 ? wz_below / w_below : 0.0;

  double loss = 0;
  for (std::int32_t c = 0; c < state.num_classes(); ++c) {
    const auto& p = state.pairs[static_cast<std::size_t>(c)];
    if (in_sharing[static_cast<std::size_t>(c)]) {
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double v = samples[static_cast<std::size_t>(p.sample[i])].features.value_at(f);
        const double h = v > theta ? above : below;
        loss += p.weight[i] * (p.z[i] - h) * (p.z[i] - h);
      }
    } else {
      double w = 0, wz = 0;
      for (std::size_t i = 0; i < p.size(); ++i) {
        w += p.weight[i];
        wz += p.weight[i] * p.z[i];
      }
      const double k = w > 0 ? wz / w : 0.0;
      for (std::size_t i = 0; i < p.size(); ++i)
        loss += p.weight[i] * (p.z[i] - k) * (p.z[i] - k);
    }
  }
  return loss;
}

/// Threshold candidates exactly as the round search defines them: midpoints
/// of consecutive unique feature values over active samples.
inline std::vector<double> threshold_candidates(const TrainerState& state,
                                                const std::vector<TrainingSample>& samples,
                                                std::uint32_t f) {
  std::vector<float> values;
  for (std::size_t s = 0; s < samples.size(); ++s) {
    bool active = false;
    for (const auto& p : state.pairs)
      for (const std::int32_t ps : p.sample)
        if (static_cast<std::size_t>(ps) == s) active = true;
    if (!active) continue;
    values.push_back(static_cast<float>(samples[s].features.value_at(f)));
  }
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  std::vector<double> out;
  for (std::size_t t = 0; t + 1 < values.size(); ++t)
    out.push_back((static_cast<double>(values[t]) + static_cast<double>(values[t + 1])) / 2.0);
  return out;
}

/// Global minimum of the round loss by exhaustive enumeration over features,
/// thresholds and every nonempty sharing set.
inline double enumerate_best_loss(const TrainerState& state,
                                  const std::vector<TrainingSample>& samples,
                                  std::uint32_t num_features) {
  const std::int32_t C = state.num_classes();
  double best = std::numeric_limits<double>::infinity();
  for (std::uint32_t f = 0; f < num_features; ++f) {
    for (const double theta : threshold_candidates(state, samples, f)) {
      for (std::uint32_t mask = 1; mask < (1u << C); ++mask) {
        std::vector<std::int32_t> sharing;
        for (std::int32_t c = 0; c < C; ++c)
          if (mask & (1u << c)) sharing.push_back(c);
        best = std::min(best, direct_loss(state, samples, f, theta, sharing));
      }
    }
  }
  return best;
}

/// Torralba-style greedy sharing-set selection at fixed (f, theta): grow the
/// set by the class whose addition lowers the loss most; return the best loss
/// seen at any size. O(|C|^2) loss evaluations.
inline double greedy_best_loss(const TrainerState& state,
                               const std::vector<TrainingSample>& samples, std::uint32_t f,
                               double theta) {
  const std::int32_t C = state.num_classes();
  std::vector<std::int32_t> sharing;
  std::vector<std::uint8_t> used(static_cast<std::size_t>(C), 0);
  double best = std::numeric_limits<double>::infinity();
  for (std::int32_t size = 0; size < C; ++size) {
    double round_best = std::numeric_limits<double>::infinity();
    std::int32_t round_class = -1;
    for (std::int32_t c = 0; c < C; ++c) {
      if (used[static_cast<std::size_t>(c)]) continue;
      sharing.push_back(c);
      const double loss = direct_loss(state, samples, f, theta, sharing);
      sharing.pop_back();
      if (loss < round_best) {
        round_best = loss;
        round_class = c;
      }
    }
    sharing.push_back(round_class);
    used[static_cast<std::size_t>(round_class)] = 1;
    best = std::min(best, round_best);
  }
  return best;
}

/// Small random instance: C classes, a handful of samples with sparse
/// feature values, random positive/negative pair assignments and weights.
struct SmallInstance {
  std::vector<TrainingSample> samples;
  TrainerState state;
  std::uint32_t num_features;
};

inline SmallInstance random_small_instance(Rng& rng, std::int32_t max_classes = 3,
                                           std::size_t max_samples = 20,
                                           std::uint32_t max_features = 4) {
  SmallInstance inst;
  const std::int32_t C = 1 + static_cast<std::int32_t>(uniform_below(rng, max_classes));
  const std::size_t n = 4 + uniform_below(rng, max_samples - 3);
  inst.num_features = 1 + static_cast<std::uint32_t>(uniform_below(rng, max_features));

  for (std::size_t i = 0; i < n; ++i) {
    TrainingSample s;
    s.features.num_regions = inst.num_features;
    s.features.words = 1;
    s.features.descriptor = BinaryDescriptor(0);
    for (std::uint32_t f = 0; f < inst.num_features; ++f)
      if (uniform01(rng) < 0.7)
        s.features.context.emplace_back(f, static_cast<float>(uniform01(rng)));
    s.class_id = 0;
    inst.samples.push_back(std::move(s));
  }

  inst.state.pairs.resize(static_cast<std::size_t>(C));
  for (std::int32_t c = 0; c < C; ++c) {
    auto& p = inst.state.pairs[static_cast<std::size_t>(c)];
    for (std::size_t i = 0; i < n; ++i) {
      if (uniform01(rng) < 0.3) continue;  // not active for this class
      p.sample.push_back(static_cast<std::int32_t>(i));
      p.weight.push_back(uniform_real(rng, 0.05, 1.0));
      p.z.push_back(uniform01(rng) < 0.5 ? 1 : -1);
    }
    if (p.sample.empty()) {  // keep every class non-degenerate
      p.sample.push_back(0);
      p.weight.push_back(0.5);
      p.z.push_back(1);
    }
  }
  inst.state.csr_dirty = true;
  return inst;
}

}  // namespace lmboost::testing
