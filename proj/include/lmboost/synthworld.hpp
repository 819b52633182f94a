#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "lmboost/bitdesc.hpp"
#include "lmboost/errors.hpp"
#include "lmboost/map.hpp"
#include "lmboost/rng.hpp"

namespace lmboost {

/// Synthetic corridor of repeated rooms. Aliased rooms are exact geometric
/// and photometric copies of each other except for a few "cue" landmarks with
/// unique descriptors, so descriptor-only matching is forced into confusions
/// while visual context can still disambiguate.
struct WorldConfig {
  std::int32_t landmark_count = 500;
  std::int32_t rooms = 8;
  double room_length = 6.0;  // meters along the corridor (x)
  double room_depth = 4.0;   // wall-to-wall (y)
  double room_height = 3.0;

  std::int32_t aliasing_factor = 1;  // rooms per aliased group
  double cue_fraction = 0.15;        // per-room landmarks with unique descriptors

  std::uint32_t descriptor_bits = 384;
  std::int32_t descriptor_prototypes = 12;  // appearance clusters
  double prototype_spread = 0.06;           // bit-flip rate around a prototype

  CameraIntrinsics camera{320.0, 320.0, 320.0, 240.0, 640, 480};
  std::int32_t train_frames = 240;
  std::int32_t eval_frames = 120;
  double frames_per_turn = 60.0;  // yaw revolution period
  double roll_amplitude = 0.1;    // radians
  double camera_height = 1.5;
  double min_depth = 0.5;         // nearest usable landmark distance

  double bit_flip_prob = 0.02;
  double pixel_jitter_sigma = 0.5;  // truncated at 3 sigma
  double dropout_prob = 0.1;
  std::int32_t clutter_per_frame = 10;

  double landmark_size_min = 0.05;  // physical feature size, drives scale
  double landmark_size_max = 0.25;

  std::uint64_t seed = 1;

  void validate() const {
    if (landmark_count < 1 || rooms < 1 || train_frames < 1)
      throw ConfigError("world: counts must be positive");
    if (aliasing_factor < 1 || aliasing_factor > rooms)
      throw ConfigError("world: aliasing_factor must be in [1, rooms]");
    if (cue_fraction < 0 || cue_fraction > 1 || dropout_prob < 0 || dropout_prob > 1 ||
        bit_flip_prob < 0 || bit_flip_prob > 1 || prototype_spread < 0 ||
        prototype_spread > 1)
      throw ConfigError("world: probabilities must lie in [0, 1]");
    if (descriptor_prototypes < 1) throw ConfigError("world: need >= 1 prototype");
    camera.validate();
  }
};

inline void flip_bits(BinaryDescriptor& descriptor, double p, Rng& rng) {
  if (p <= 0) return;
  for (std::uint32_t b = 0; b < descriptor.size_bits(); ++b)
    if (uniform01(rng) < p) descriptor.flip(b);
}

/// Each bit flips independently with probability p; deterministic given seed.
inline BinaryDescriptor flip_bits(const BinaryDescriptor& descriptor, double p,
                                  std::uint64_t seed) {
  BinaryDescriptor out = descriptor;
  Rng rng(seed);
  flip_bits(out, p, rng);
  return out;
}

inline BinaryDescriptor flipped_copy(const BinaryDescriptor& descriptor, double p, Rng& rng) {
  BinaryDescriptor out = descriptor;
  flip_bits(out, p, rng);
  return out;
}

inline BinaryDescriptor random_descriptor(std::uint32_t bits, Rng& rng) {
  BinaryDescriptor d(bits);
  for (std::uint32_t b = 0; b < bits; ++b)
    if (rng() & 1) d.set(b, true);
  return d;
}

struct GeneratedWorld {
  SfMMap train_map;
  SfMMap eval_map;  // keypoints untracked; frames carry ground-truth poses
  std::vector<std::vector<std::int64_t>> eval_true_landmarks;  // -1 = clutter
  std::unordered_map<std::int64_t, BinaryDescriptor> canonical_descriptors;
};

namespace detail {

struct LandmarkSpec {
  std::int64_t id;
  Eigen::Vector3d position;
  double size;
  BinaryDescriptor canonical;
};

inline Pose trajectory_pose(double t01, double x_start, double x_end, double height,
                            double yaw_turns, double roll_amplitude, double phase) {
  const double x = x_start + (x_end - x_start) * t01;
  const double yaw = 6.283185307179586477 * (yaw_turns * t01 + phase);
  const double roll = roll_amplitude * std::sin(6.283185307179586477 * t01 * 7.3 + phase);

  const Eigen::Vector3d forward(std::cos(yaw), std::sin(yaw), 0.0);
  const Eigen::Vector3d right0(std::sin(yaw), -std::cos(yaw), 0.0);
  const Eigen::Vector3d down0(0.0, 0.0, -1.0);
  const Eigen::Vector3d right = std::cos(roll) * right0 + std::sin(roll) * down0;
  const Eigen::Vector3d down = -std::sin(roll) * right0 + std::cos(roll) * down0;

  Pose pose;
  pose.rotation.col(0) = right;
  pose.rotation.col(1) = down;
  pose.rotation.col(2) = forward;
  pose.translation = Eigen::Vector3d(x, 0.0, height);
  return pose;
}

}  // namespace detail

/// Builds the training map and the evaluation frames with exact ground truth.
/// Deterministic given cfg.seed; generation is single threaded.
inline GeneratedWorld generate_world(const WorldConfig& cfg) {
  cfg.validate();
  GeneratedWorld world;

  // --- landmark layout -----------------------------------------------------
  // Rooms are partitioned into groups of `aliasing_factor`; all rooms of a
  // group instantiate the same template (same local geometry, same canonical
  // descriptors) except for cue slots, which draw a fresh descriptor per room.
  const std::int32_t per_room = std::max<std::int32_t>(1, cfg.landmark_count / cfg.rooms);
  const std::int32_t cue_count = static_cast<std::int32_t>(
      std::lround(cfg.cue_fraction * static_cast<double>(per_room)));

  Rng proto_rng(derive_seed(cfg.seed, "prototypes"));
  std::vector<BinaryDescriptor> prototypes;
  for (std::int32_t g = 0; g < cfg.descriptor_prototypes; ++g)
    prototypes.push_back(random_descriptor(cfg.descriptor_bits, proto_rng));

  struct TemplateSlot {
    Eigen::Vector3d local_position;
    double size;
    BinaryDescriptor canonical;
  };

  const std::int32_t groups = (cfg.rooms + cfg.aliasing_factor - 1) / cfg.aliasing_factor;
  std::vector<std::vector<TemplateSlot>> group_templates(
      static_cast<std::size_t>(groups));
  Rng layout_rng(derive_seed(cfg.seed, "layout"));
  for (std::int32_t g = 0; g < groups; ++g) {
    auto& slots = group_templates[static_cast<std::size_t>(g)];
    slots.resize(static_cast<std::size_t>(per_room));
    for (std::int32_t j = 0; j < per_room; ++j) {
      auto& slot = slots[static_cast<std::size_t>(j)];
      const double wall = uniform01(layout_rng) < 0.5 ? -1.0 : 1.0;
      slot.local_position =
          Eigen::Vector3d(uniform_real(layout_rng, 0.2, cfg.room_length - 0.2),
                          wall * cfg.room_depth / 2.0,
                          uniform_real(layout_rng, 0.3, cfg.room_height - 0.3));
      slot.size = uniform_real(layout_rng, cfg.landmark_size_min, cfg.landmark_size_max);
      slot.canonical = flipped_copy(
          prototypes[static_cast<std::size_t>(j % cfg.descriptor_prototypes)],
          cfg.prototype_spread, layout_rng);
    }
  }

  std::vector<detail::LandmarkSpec> specs;
  Rng cue_rng(derive_seed(cfg.seed, "cues"));
  for (std::int32_t room = 0; room < cfg.rooms; ++room) {
    const auto& slots = group_templates[static_cast<std::size_t>(room / cfg.aliasing_factor)];
    for (std::int32_t j = 0; j < per_room; ++j) {
      detail::LandmarkSpec spec;
      spec.id = static_cast<std::int64_t>(room) * per_room + j;
      const auto& slot = slots[static_cast<std::size_t>(j)];
      spec.position = slot.local_position +
                      Eigen::Vector3d(room * cfg.room_length, 0.0, 0.0);
      spec.size = slot.size;
      // Evenly spread cue slots get a per-room unique descriptor.
      const bool is_cue =
          cue_count > 0 && (j % std::max<std::int32_t>(1, per_room / std::max(cue_count, 1))) == 0 &&
          j / std::max<std::int32_t>(1, per_room / std::max(cue_count, 1)) < cue_count;
      spec.canonical =
          is_cue ? flipped_copy(
                       prototypes[static_cast<std::size_t>(j % cfg.descriptor_prototypes)],
                       cfg.prototype_spread, cue_rng)
                 : slot.canonical;
      specs.push_back(std::move(spec));
    }
  }

  for (const auto& spec : specs) world.canonical_descriptors.emplace(spec.id, spec.canonical);

  // --- observation rendering ----------------------------------------------
  const double x_start = 0.5;
  const double x_end = cfg.rooms * cfg.room_length - 0.5;

  auto render = [&](SfMMap& map, std::int32_t n_frames, double phase, Rng& rng,
                    bool tracked, std::vector<std::vector<std::int64_t>>* truth) {
    map.descriptor_bits = cfg.descriptor_bits;
    map.cameras = {cfg.camera};
    for (std::int32_t t = 0; t < n_frames; ++t) {
      Frame frame;
      frame.frame_id = t;
      frame.camera_id = 0;
      const double t01 = n_frames > 1 ? static_cast<double>(t) / (n_frames - 1) : 0.0;
      frame.pose_world_from_camera = detail::trajectory_pose(
          t01, x_start, x_end, cfg.camera_height,
          static_cast<double>(n_frames) / cfg.frames_per_turn, cfg.roll_amplitude, phase);
      frame.gravity_in_camera =
          (frame.pose_world_from_camera.rotation.transpose() * Eigen::Vector3d(0, 0, -1))
              .normalized();

      std::vector<std::int64_t> frame_truth;
      for (const auto& spec : specs) {
        const Eigen::Vector3d p_cam =
            frame.pose_world_from_camera.inverse_transform(spec.position);
        if (p_cam.z() < cfg.min_depth) continue;
        const Eigen::Vector2d pixel =
            cfg.camera.denormalize({p_cam.x() / p_cam.z(), p_cam.y() / p_cam.z()});
        const double ju = std::clamp(normal01(rng) * cfg.pixel_jitter_sigma,
                                     -3.0 * cfg.pixel_jitter_sigma,
                                     3.0 * cfg.pixel_jitter_sigma);
        const double jv = std::clamp(normal01(rng) * cfg.pixel_jitter_sigma,
                                     -3.0 * cfg.pixel_jitter_sigma,
                                     3.0 * cfg.pixel_jitter_sigma);
        const double u = pixel.x() + ju;
        const double v = pixel.y() + jv;
        if (!(u >= 0 && u < cfg.camera.width && v >= 0 && v < cfg.camera.height)) continue;
        if (uniform01(rng) < cfg.dropout_prob) continue;

        Keypoint kp;
        kp.u = u;
        kp.v = v;
        kp.scale = std::clamp(cfg.camera.fx * spec.size / p_cam.z(), 2.0, 80.0);
        kp.descriptor = spec.canonical;
        flip_bits(kp.descriptor, cfg.bit_flip_prob, rng);
        if (tracked) kp.landmark_id = spec.id;
        frame.keypoints.push_back(std::move(kp));
        frame_truth.push_back(spec.id);
      }
      for (std::int32_t cl = 0; cl < cfg.clutter_per_frame; ++cl) {
        Keypoint kp;
        kp.u = uniform_real(rng, 0.0, cfg.camera.width - 1e-6);
        kp.v = uniform_real(rng, 0.0, cfg.camera.height - 1e-6);
        kp.scale = uniform_real(rng, 4.0, 32.0);
        // Half the clutter resembles real appearance clusters, half is flat
        // random; keeps the background class non-trivial.
        if (uniform01(rng) < 0.5) {
          const auto pi = static_cast<std::size_t>(
              uniform_below(rng, static_cast<std::uint64_t>(prototypes.size())));
          kp.descriptor = prototypes[pi];
          flip_bits(kp.descriptor, cfg.prototype_spread + cfg.bit_flip_prob, rng);
        } else {
          kp.descriptor = random_descriptor(cfg.descriptor_bits, rng);
        }
        frame.keypoints.push_back(std::move(kp));
        frame_truth.push_back(-1);
      }
      map.frames.push_back(std::move(frame));
      if (truth) truth->push_back(std::move(frame_truth));
    }
  };

  Rng train_rng(derive_seed(cfg.seed, "train-frames"));
  render(world.train_map, cfg.train_frames, 0.0, train_rng, true, nullptr);

  // Landmark records for every observed landmark; unobserved specs are
  // dropped entirely.
  {
    std::unordered_map<std::int64_t, Landmark> by_id;
    for (const auto& f : world.train_map.frames)
      for (std::size_t i = 0; i < f.keypoints.size(); ++i) {
        const auto& kp = f.keypoints[i];
        if (!kp.landmark_id) continue;
        auto& lm = by_id[*kp.landmark_id];
        lm.landmark_id = *kp.landmark_id;
        lm.observations.push_back({f.frame_id, static_cast<std::int32_t>(i)});
      }
    for (const auto& spec : specs) {
      const auto it = by_id.find(spec.id);
      if (it == by_id.end()) continue;
      it->second.position_world = spec.position;
      world.train_map.landmarks.push_back(it->second);
    }
    world.train_map.rebuild_indices();
    // Untrack keypoints of dropped landmarks (none should exist, but keep the
    // invariant airtight).
    world.train_map.validate();
  }
  world.train_map.metadata["role"] = "train";

  Rng eval_rng(derive_seed(cfg.seed, "eval-frames"));
  render(world.eval_map, cfg.eval_frames, 0.37, eval_rng, false, &world.eval_true_landmarks);
  world.eval_map.metadata["role"] = "eval";
  world.eval_map.rebuild_indices();
  world.eval_map.validate();

  return world;
}

// ---------------------------------------------------------------------------
// Ground truth file: one CSV with two row kinds,
//   pose,frame_id,tx,ty,tz,qw,qx,qy,qz
//   kp,frame_id,keypoint_index,landmark_id     (-1 = untracked clutter)
// ---------------------------------------------------------------------------

struct GroundTruth {
  std::unordered_map<std::int64_t, Pose> poses;
  std::unordered_map<std::int64_t, std::vector<std::int64_t>> true_landmarks;

  std::int64_t true_landmark(std::int64_t frame_id, std::int32_t keypoint_index) const {
    const auto it = true_landmarks.find(frame_id);
    if (it == true_landmarks.end() ||
        static_cast<std::size_t>(keypoint_index) >= it->second.size())
      return -1;
    return it->second[static_cast<std::size_t>(keypoint_index)];
  }
};

inline void save_ground_truth(const GeneratedWorld& world, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.precision(17);
  for (std::size_t f = 0; f < world.eval_map.frames.size(); ++f) {
    const auto& frame = world.eval_map.frames[f];
    const auto q = frame.pose_world_from_camera.quaternion();
    const auto& t = frame.pose_world_from_camera.translation;
    out << "pose," << frame.frame_id << ',' << t.x() << ',' << t.y() << ',' << t.z() << ','
        << q.w() << ',' << q.x() << ',' << q.y() << ',' << q.z() << '\n';
    const auto& truth = world.eval_true_landmarks[f];
    for (std::size_t i = 0; i < truth.size(); ++i)
      out << "kp," << frame.frame_id << ',' << i << ',' << truth[i] << '\n';
  }
  if (!out) throw IoError("write to '" + path + "' failed");
}

inline GroundTruth load_ground_truth(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  GroundTruth gt;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      const std::size_t comma = line.find(',', pos);
      fields.push_back(line.substr(pos, comma == std::string::npos ? comma : comma - pos));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    const std::string locus = path + ":" + std::to_string(line_no);
    try {
      if (fields.at(0) == "pose") {
        const std::int64_t fid = std::stoll(fields.at(1));
        Pose pose;
        pose.translation =
            Eigen::Vector3d(std::stod(fields.at(2)), std::stod(fields.at(3)),
                            std::stod(fields.at(4)));
        const Eigen::Quaterniond q(std::stod(fields.at(5)), std::stod(fields.at(6)),
                                   std::stod(fields.at(7)), std::stod(fields.at(8)));
        pose.rotation = q.normalized().toRotationMatrix();
        gt.poses[fid] = pose;
      } else if (fields.at(0) == "kp") {
        const std::int64_t fid = std::stoll(fields.at(1));
        const auto idx = static_cast<std::size_t>(std::stoll(fields.at(2)));
        auto& v = gt.true_landmarks[fid];
        if (v.size() <= idx) v.resize(idx + 1, -1);
        v[idx] = std::stoll(fields.at(3));
      } else {
        throw ParseError(locus + ": unknown row kind '" + fields.at(0) + "'");
      }
    } catch (const std::exception& e) {
      throw ParseError(locus + ": " + e.what());
    }
  }
  return gt;
}

/// World config <-> JSON for the synth CLI and experiment specs.
inline void from_json_config(const nlohmann::json& j, WorldConfig& cfg) {
  auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("landmark_count", cfg.landmark_count);
  get("rooms", cfg.rooms);
  get("room_length", cfg.room_length);
  get("room_depth", cfg.room_depth);
  get("room_height", cfg.room_height);
  get("aliasing_factor", cfg.aliasing_factor);
  get("cue_fraction", cfg.cue_fraction);
  get("descriptor_bits", cfg.descriptor_bits);
  get("descriptor_prototypes", cfg.descriptor_prototypes);
  get("prototype_spread", cfg.prototype_spread);
  get("train_frames", cfg.train_frames);
  get("eval_frames", cfg.eval_frames);
  get("frames_per_turn", cfg.frames_per_turn);
  get("roll_amplitude", cfg.roll_amplitude);
  get("camera_height", cfg.camera_height);
  get("min_depth", cfg.min_depth);
  get("bit_flip_prob", cfg.bit_flip_prob);
  get("pixel_jitter_sigma", cfg.pixel_jitter_sigma);
  get("dropout_prob", cfg.dropout_prob);
  get("clutter_per_frame", cfg.clutter_per_frame);
  get("landmark_size_min", cfg.landmark_size_min);
  get("landmark_size_max", cfg.landmark_size_max);
  get("seed", cfg.seed);
  if (j.contains("camera")) {
    const auto& c = j.at("camera");
    cfg.camera.fx = c.at("fx").get<double>();
    cfg.camera.fy = c.at("fy").get<double>();
    cfg.camera.cx = c.at("cx").get<double>();
    cfg.camera.cy = c.at("cy").get<double>();
    cfg.camera.width = c.at("width").get<int>();
    cfg.camera.height = c.at("height").get<int>();
  }
}

}  // namespace lmboost
