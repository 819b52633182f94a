#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "lmboost/bitdesc.hpp"
#include "lmboost/errors.hpp"
#include "lmboost/geometry.hpp"

namespace lmboost {

/// A detected 2D interest point. `landmark_id` absent means untracked.
struct Keypoint {
  double u = 0, v = 0;
  double scale = 1;
  BinaryDescriptor descriptor;
  std::optional<std::int64_t> landmark_id;
};

struct Frame {
  std::int64_t frame_id = 0;
  std::int32_t camera_id = 0;
  Pose pose_world_from_camera;
  Eigen::Vector3d gravity_in_camera = Eigen::Vector3d(0, 1, 0);
  std::vector<Keypoint> keypoints;
};

struct Observation {
  std::int64_t frame_id = 0;
  std::int32_t keypoint_index = 0;
};

/// A 3D map point together with the keypoints that observe it.
struct Landmark {
  std::int64_t landmark_id = 0;
  Eigen::Vector3d position_world = Eigen::Vector3d::Zero();
  std::vector<Observation> observations;
};

/// Maps landmark ids to the contiguous class indices used by the classifier.
/// Class 0 is the background ("no known landmark") class and carries the
/// sentinel id -1.
struct ClassTable {
  std::vector<std::int64_t> class_to_landmark{-1};
  std::unordered_map<std::int64_t, std::int32_t> landmark_to_class;

  std::int32_t num_classes() const {
    return static_cast<std::int32_t>(class_to_landmark.size());
  }

  std::int32_t add(std::int64_t landmark_id) {
    const auto cls = static_cast<std::int32_t>(class_to_landmark.size());
    class_to_landmark.push_back(landmark_id);
    landmark_to_class.emplace(landmark_id, cls);
    return cls;
  }

  std::int32_t class_of(std::int64_t landmark_id) const {
    const auto it = landmark_to_class.find(landmark_id);
    return it == landmark_to_class.end() ? -1 : it->second;
  }

  std::int64_t landmark_of(std::int32_t cls) const {
    return class_to_landmark[cls];
  }
};

/// Structure-from-motion map: frames with keypoints plus landmarks with
/// observation links. Immutable after load/validation; concurrent reads are
/// safe.
struct SfMMap {
  std::uint32_t descriptor_bits = 384;
  std::map<std::string, std::string> metadata;
  std::vector<CameraIntrinsics> cameras;  // camera_id == index
  std::vector<Frame> frames;              // sorted by frame_id
  std::vector<Landmark> landmarks;        // sorted by landmark_id

  std::unordered_map<std::int64_t, std::size_t> frame_index;
  std::unordered_map<std::int64_t, std::size_t> landmark_index;

  const Frame* find_frame(std::int64_t id) const {
    const auto it = frame_index.find(id);
    return it == frame_index.end() ? nullptr : &frames[it->second];
  }

  const Landmark* find_landmark(std::int64_t id) const {
    const auto it = landmark_index.find(id);
    return it == landmark_index.end() ? nullptr : &landmarks[it->second];
  }

  const CameraIntrinsics& camera_of(const Frame& f) const {
    return cameras[static_cast<std::size_t>(f.camera_id)];
  }

  std::size_t total_keypoints() const {
    std::size_t n = 0;
    for (const auto& f : frames) n += f.keypoints.size();
    return n;
  }

  void rebuild_indices() {
    std::sort(frames.begin(), frames.end(),
              [](const Frame& a, const Frame& b) { return a.frame_id < b.frame_id; });
    std::sort(landmarks.begin(), landmarks.end(), [](const Landmark& a, const Landmark& b) {
      return a.landmark_id < b.landmark_id;
    });
    frame_index.clear();
    landmark_index.clear();
    for (std::size_t i = 0; i < frames.size(); ++i)
      frame_index.emplace(frames[i].frame_id, i);
    for (std::size_t i = 0; i < landmarks.size(); ++i)
      landmark_index.emplace(landmarks[i].landmark_id, i);
  }

  /// Checks every structural invariant; throws on the first violation.
  void validate() const {
    for (const auto& cam : cameras) cam.validate();
    for (const auto& f : frames) {
      if (f.camera_id < 0 || static_cast<std::size_t>(f.camera_id) >= cameras.size())
        throw DanglingReferenceError("frame " + std::to_string(f.frame_id) +
                                     " references missing camera " +
                                     std::to_string(f.camera_id));
      if (!f.pose_world_from_camera.rotation_valid())
        throw Error("frame " + std::to_string(f.frame_id) + ": rotation is not orthonormal");
      if (std::abs(f.gravity_in_camera.norm() - 1.0) > 1e-9)
        throw Error("frame " + std::to_string(f.frame_id) + ": gravity is not unit length");
      const auto& cam = camera_of(f);
      for (std::size_t i = 0; i < f.keypoints.size(); ++i) {
        const auto& kp = f.keypoints[i];
        if (!(kp.u >= 0 && kp.u < cam.width && kp.v >= 0 && kp.v < cam.height))
          throw Error("frame " + std::to_string(f.frame_id) + " keypoint " +
                      std::to_string(i) + ": pixel outside the image");
        if (!(kp.scale > 0))
          throw Error("frame " + std::to_string(f.frame_id) + " keypoint " +
                      std::to_string(i) + ": non-positive scale");
        if (kp.descriptor.size_bits() != descriptor_bits)
          throw Error("frame " + std::to_string(f.frame_id) + " keypoint " +
                      std::to_string(i) + ": descriptor has " +
                      std::to_string(kp.descriptor.size_bits()) + " bits, map uses " +
                      std::to_string(descriptor_bits));
        if (kp.landmark_id && !find_landmark(*kp.landmark_id))
          throw DanglingReferenceError(
              "frame " + std::to_string(f.frame_id) + " keypoint " + std::to_string(i) +
              " references missing landmark " + std::to_string(*kp.landmark_id));
      }
    }
    for (const auto& lm : landmarks) {
      if (lm.observations.empty())
        throw Error("landmark " + std::to_string(lm.landmark_id) + " has no observations");
      for (const auto& obs : lm.observations) {
        const Frame* f = find_frame(obs.frame_id);
        if (!f)
          throw DanglingReferenceError("landmark " + std::to_string(lm.landmark_id) +
                                       " observes missing frame " +
                                       std::to_string(obs.frame_id));
        if (obs.keypoint_index < 0 ||
            static_cast<std::size_t>(obs.keypoint_index) >= f->keypoints.size())
          throw DanglingReferenceError("landmark " + std::to_string(lm.landmark_id) +
                                       " observes missing keypoint " +
                                       std::to_string(obs.keypoint_index) + " of frame " +
                                       std::to_string(obs.frame_id));
        const auto& kp = f->keypoints[static_cast<std::size_t>(obs.keypoint_index)];
        if (!kp.landmark_id || *kp.landmark_id != lm.landmark_id)
          throw Error("landmark " + std::to_string(lm.landmark_id) +
                      ": observation does not back-reference it");
      }
    }
    // Observation links and keypoint back-links must form the same edge set.
    std::size_t tracked = 0, observed = 0;
    for (const auto& f : frames)
      for (const auto& kp : f.keypoints)
        if (kp.landmark_id) ++tracked;
    for (const auto& lm : landmarks) observed += lm.observations.size();
    if (tracked != observed)
      throw Error("observation links (" + std::to_string(observed) +
                  ") and tracked keypoints (" + std::to_string(tracked) + ") disagree");
  }

  /// Content hash used to tie models and inverted files to the map they were
  /// built from.
  std::uint64_t fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&h](std::uint64_t v) {
      h ^= v;
      h *= 0x100000001b3ull;
    };
    mix(descriptor_bits);
    mix(frames.size());
    mix(landmarks.size());
    for (const auto& f : frames) {
      mix(static_cast<std::uint64_t>(f.frame_id));
      for (const auto& kp : f.keypoints) mix(kp.descriptor.hash());
    }
    for (const auto& lm : landmarks) {
      mix(static_cast<std::uint64_t>(lm.landmark_id));
      mix(lm.observations.size());
    }
    return h;
  }
};

/// x = (u - cx) / fx, y = (v - cy) / fy.
inline Eigen::Vector2d normalize_keypoint(const Keypoint& kp,
                                          const CameraIntrinsics& cam) {
  return cam.normalize(kp.u, kp.v);
}

// ---------------------------------------------------------------------------
// Persistence: newline-delimited JSON, one record per line. Record kinds are
// "meta", "camera", "frame", "keypoint" and "landmark"; see
// docs/map_format.md. Save order is canonical (meta, cameras by id, frames by
// id, keypoints by frame then index, landmarks by id) so identical maps
// serialize to identical bytes.
// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::json vec3_json(const Eigen::Vector3d& v) {
  return nlohmann::json::array({v.x(), v.y(), v.z()});
}

inline Eigen::Vector3d vec3_from(const nlohmann::json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

inline nlohmann::json rot_json(const Eigen::Matrix3d& m) {
  nlohmann::json a = nlohmann::json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) a.push_back(m(r, c));
  return a;
}

inline Eigen::Matrix3d rot_from(const nlohmann::json& j) {
  Eigen::Matrix3d m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = j.at(3 * r + c).get<double>();
  return m;
}

}  // namespace detail

inline void save_map(const SfMMap& map, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  using nlohmann::json;

  json meta{{"kind", "meta"}, {"descriptor_bits", map.descriptor_bits}};
  if (!map.metadata.empty()) meta["metadata"] = map.metadata;
  out << meta.dump() << '\n';

  for (std::size_t i = 0; i < map.cameras.size(); ++i) {
    const auto& c = map.cameras[i];
    out << json{{"kind", "camera"}, {"id", i},          {"fx", c.fx},
                {"fy", c.fy},       {"cx", c.cx},       {"cy", c.cy},
                {"width", c.width}, {"height", c.height}}
               .dump()
        << '\n';
  }
  for (const auto& f : map.frames) {
    out << json{{"kind", "frame"},
                {"id", f.frame_id},
                {"camera", f.camera_id},
                {"rotation", detail::rot_json(f.pose_world_from_camera.rotation)},
                {"translation", detail::vec3_json(f.pose_world_from_camera.translation)},
                {"gravity", detail::vec3_json(f.gravity_in_camera)}}
               .dump()
        << '\n';
  }
  for (const auto& f : map.frames) {
    for (std::size_t i = 0; i < f.keypoints.size(); ++i) {
      const auto& kp = f.keypoints[i];
      json j{{"kind", "keypoint"}, {"frame", f.frame_id}, {"index", i},
             {"u", kp.u},          {"v", kp.v},           {"scale", kp.scale},
             {"descriptor", kp.descriptor.to_hex()}};
      if (kp.landmark_id) j["landmark"] = *kp.landmark_id;
      out << j.dump() << '\n';
    }
  }
  for (const auto& lm : map.landmarks) {
    json obs = json::array();
    for (const auto& o : lm.observations)
      obs.push_back(json::array({o.frame_id, o.keypoint_index}));
    out << json{{"kind", "landmark"},
                {"id", lm.landmark_id},
                {"position", detail::vec3_json(lm.position_world)},
                {"observations", obs}}
               .dump()
        << '\n';
  }
  if (!out) throw IoError("write to '" + path + "' failed");
}

inline SfMMap load_map(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");

  SfMMap map;
  struct PendingKeypoint {
    std::int64_t frame_id;
    std::size_t index;
    Keypoint kp;
  };
  std::vector<PendingKeypoint> pending;
  std::vector<std::pair<std::size_t, CameraIntrinsics>> cameras;
  bool saw_meta = false;

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string locus = path + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(locus + ": " + e.what());
    }
    try {
      const std::string kind = j.at("kind").get<std::string>();
      if (kind == "meta") {
        map.descriptor_bits = j.at("descriptor_bits").get<std::uint32_t>();
        if (j.contains("metadata"))
          map.metadata = j["metadata"].get<std::map<std::string, std::string>>();
        saw_meta = true;
      } else if (kind == "camera") {
        CameraIntrinsics c;
        c.fx = j.at("fx").get<double>();
        c.fy = j.at("fy").get<double>();
        c.cx = j.at("cx").get<double>();
        c.cy = j.at("cy").get<double>();
        c.width = j.at("width").get<int>();
        c.height = j.at("height").get<int>();
        cameras.emplace_back(j.at("id").get<std::size_t>(), c);
      } else if (kind == "frame") {
        Frame f;
        f.frame_id = j.at("id").get<std::int64_t>();
        f.camera_id = j.at("camera").get<std::int32_t>();
        f.pose_world_from_camera.rotation = detail::rot_from(j.at("rotation"));
        f.pose_world_from_camera.translation = detail::vec3_from(j.at("translation"));
        f.gravity_in_camera = detail::vec3_from(j.at("gravity"));
        map.frames.push_back(std::move(f));
      } else if (kind == "keypoint") {
        PendingKeypoint p;
        p.frame_id = j.at("frame").get<std::int64_t>();
        p.index = j.at("index").get<std::size_t>();
        p.kp.u = j.at("u").get<double>();
        p.kp.v = j.at("v").get<double>();
        p.kp.scale = j.at("scale").get<double>();
        p.kp.descriptor = BinaryDescriptor::from_hex(
            j.at("descriptor").get<std::string>(), map.descriptor_bits);
        if (j.contains("landmark")) p.kp.landmark_id = j["landmark"].get<std::int64_t>();
        pending.push_back(std::move(p));
      } else if (kind == "landmark") {
        Landmark lm;
        lm.landmark_id = j.at("id").get<std::int64_t>();
        lm.position_world = detail::vec3_from(j.at("position"));
        for (const auto& o : j.at("observations"))
          lm.observations.push_back(
              {o.at(0).get<std::int64_t>(), o.at(1).get<std::int32_t>()});
        map.landmarks.push_back(std::move(lm));
      } else {
        throw ParseError(locus + ": unknown record kind '" + kind + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(locus + ": " + e.what());
    }
  }
  if (!saw_meta && !map.frames.empty())
    throw ParseError(path + ": missing meta record");

  std::sort(cameras.begin(), cameras.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  for (std::size_t i = 0; i < cameras.size(); ++i) {
    if (cameras[i].first != i)
      throw ParseError(path + ": camera ids must be dense starting at 0");
    map.cameras.push_back(cameras[i].second);
  }
  map.rebuild_indices();

  for (auto& p : pending) {
    const auto it = map.frame_index.find(p.frame_id);
    if (it == map.frame_index.end())
      throw DanglingReferenceError(path + ": keypoint references missing frame " +
                                   std::to_string(p.frame_id));
    auto& kps = map.frames[it->second].keypoints;
    if (kps.size() <= p.index) kps.resize(p.index + 1);
    kps[p.index] = std::move(p.kp);
  }

  map.validate();
  return map;
}

}  // namespace lmboost
