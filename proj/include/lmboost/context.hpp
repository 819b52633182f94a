#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "lmboost/errors.hpp"
#include "lmboost/map.hpp"
#include "lmboost/rng.hpp"
#include "lmboost/vocabulary.hpp"

namespace lmboost {

/// A keypoint-anchored rectangle. Offsets and half-extents are expressed in
/// normalized image-plane units per unit keypoint scale, so instantiation
/// scales with the detector scale and rotates with gravity.
struct ContextRegion {
  double offset_x = 0, offset_y = 0;
  double half_width = 0, half_height = 0;

  double area() const { return 4.0 * half_width * half_height; }
};

struct RegionConfig {
  double area_min = 1e-4;
  double area_max = 0.25;
  double aspect_min = 0.25;
  double aspect_max = 4.0;
  double offset_radius = 1.0;

  void validate() const {
    if (!(area_min > 0) || !(area_max > area_min))
      throw ConfigError("regions: need 0 < area_min < area_max");
    if (!(aspect_min > 0) || !(aspect_max >= aspect_min))
      throw ConfigError("regions: need 0 < aspect_min <= aspect_max");
    if (!(offset_radius >= 0)) throw ConfigError("regions: negative offset radius");
  }
};

/// The fixed set of regions shared by every landmark; the identical bank is
/// used at training and query time (it is embedded in the model file).
struct RegionBank {
  std::vector<ContextRegion> regions;
  std::uint64_t seed = 0;
  RegionConfig config;

  std::size_t size() const { return regions.size(); }
};

/// Inverse-transform sample of the 1/area law: area = exp(u) for
/// u ~ U(ln area_min, ln area_max).
inline double sample_region_area(double u) { return std::exp(u); }

/// Draws n regions: log-uniform areas (via sample_region_area), log-uniform
/// aspect ratios, centers uniform in a disc around the anchor.
inline RegionBank generate_regions(std::size_t n, const RegionConfig& config,
                                   std::uint64_t seed) {
  if (n < 1) throw ConfigError("generate_regions: need n >= 1");
  config.validate();
  RegionBank bank;
  bank.seed = seed;
  bank.config = config;
  bank.regions.reserve(n);
  Rng rng(seed);
  const double log_area_min = std::log(config.area_min);
  const double log_area_max = std::log(config.area_max);
  const double log_aspect_min = std::log(config.aspect_min);
  const double log_aspect_max = std::log(config.aspect_max);
  for (std::size_t i = 0; i < n; ++i) {
    ContextRegion r;
    const double area =
        sample_region_area(uniform_real(rng, log_area_min, log_area_max));
    const double aspect =
        std::exp(uniform_real(rng, log_aspect_min, log_aspect_max));
    r.half_width = 0.5 * std::sqrt(area * aspect);
    r.half_height = 0.5 * std::sqrt(area / aspect);
    const double radius = config.offset_radius * std::sqrt(uniform01(rng));
    const double angle = uniform_real(rng, 0.0, 6.283185307179586477);
    r.offset_x = radius * std::cos(angle);
    r.offset_y = radius * std::sin(angle);
    bank.regions.push_back(r);
  }
  return bank;
}

/// A region placed in a concrete frame: rotated rectangle in the normalized
/// image plane.
struct OrientedRect {
  Eigen::Vector2d center = Eigen::Vector2d::Zero();
  double half_width = 0, half_height = 0;
  double angle = 0;  // region axes vs image axes, radians

  bool contains(const Eigen::Vector2d& p) const {
    const double c = std::cos(angle), s = std::sin(angle);
    const Eigen::Vector2d d = p - center;
    // rotate into the region frame
    const double lx = c * d.x() + s * d.y();
    const double ly = -s * d.x() + c * d.y();
    return std::abs(lx) <= half_width && std::abs(ly) <= half_height;
  }
};

/// In-plane roll angle of the projected gravity direction, zero when gravity
/// projects onto +y (image "down"). When gravity is (nearly) parallel to the
/// optical axis the projection is undefined; we fall back to zero and flag it
/// so callers can warn instead of aborting the frame.
inline double gravity_roll_angle(const Eigen::Vector3d& gravity_in_camera,
                                 bool* degenerate = nullptr) {
  const double gx = gravity_in_camera.x();
  const double gy = gravity_in_camera.y();
  if (std::hypot(gx, gy) < 1e-6) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }
  if (degenerate) *degenerate = false;
  return std::atan2(gy, gx) - 1.5707963267948966192;
}

/// Places a region at a keypoint: center = n(kp) + s R(phi) offset,
/// half-extents scaled by s = kp.scale / reference_scale, axes rotated by the
/// gravity roll angle phi.
inline OrientedRect instantiate_region(const ContextRegion& region, const Keypoint& kp,
                                       const CameraIntrinsics& cam,
                                       const Eigen::Vector3d& gravity_in_camera,
                                       double reference_scale,
                                       bool* degenerate_gravity = nullptr) {
  const double s = kp.scale / reference_scale;
  const double phi = gravity_roll_angle(gravity_in_camera, degenerate_gravity);
  const double c = std::cos(phi), sn = std::sin(phi);
  OrientedRect rect;
  rect.center = normalize_keypoint(kp, cam) +
                s * Eigen::Vector2d(c * region.offset_x - sn * region.offset_y,
                                    sn * region.offset_x + c * region.offset_y);
  rect.half_width = s * region.half_width;
  rect.half_height = s * region.half_height;
  rect.angle = phi;
  return rect;
}

/// L1-normalized word histogram of the frame keypoints inside `rect`,
/// excluding the anchor keypoint itself; all-zero when the region is empty.
inline std::vector<float> describe_region(const OrientedRect& rect, const Frame& frame,
                                          const Vocabulary& vocab,
                                          const CameraIntrinsics& cam,
                                          std::int32_t exclude_index) {
  std::vector<std::uint32_t> counts(vocab.k(), 0);
  std::uint32_t total = 0;
  for (std::size_t i = 0; i < frame.keypoints.size(); ++i) {
    if (static_cast<std::int32_t>(i) == exclude_index) continue;
    const auto& kp = frame.keypoints[i];
    if (!rect.contains(normalize_keypoint(kp, cam))) continue;
    ++counts[quantize(kp.descriptor, vocab)];
    ++total;
  }
  std::vector<float> bow(vocab.k(), 0.0f);
  if (total > 0)
    for (std::uint32_t w = 0; w < vocab.k(); ++w)
      bow[w] = static_cast<float>(counts[w]) / static_cast<float>(total);
  return bow;
}

/// Concatenation of all region BoW blocks and the raw descriptor bits.
/// The context part is sparse (most regions are empty or small), so only
/// nonzero entries are stored.
struct FeatureVector {
  std::vector<std::pair<std::uint32_t, float>> context;  // sorted by index
  BinaryDescriptor descriptor;
  std::uint32_t num_regions = 0;
  std::uint32_t words = 0;

  std::uint32_t context_dim() const { return num_regions * words; }
  std::uint32_t dim() const { return context_dim() + descriptor.size_bits(); }

  double value_at(std::uint32_t f) const {
    if (f < context_dim()) {
      const auto it = std::lower_bound(
          context.begin(), context.end(), f,
          [](const auto& entry, std::uint32_t key) { return entry.first < key; });
      return (it != context.end() && it->first == f) ? it->second : 0.0;
    }
    return descriptor.get(f - context_dim()) ? 1.0 : 0.0;
  }
};

/// Per-frame scratch for building feature vectors: keypoint words, normalized
/// coordinates and the gravity roll are computed once and reused for every
/// anchor in the frame.
class FrameFeatureBuilder {
 public:
  FrameFeatureBuilder(const Frame& frame, const RegionBank& bank,
                      const Vocabulary& vocab, const CameraIntrinsics& cam,
                      double reference_scale)
      : frame_(frame), bank_(bank), vocab_(vocab), reference_scale_(reference_scale) {
    normalized_.reserve(frame.keypoints.size());
    words_.reserve(frame.keypoints.size());
    for (const auto& kp : frame.keypoints) {
      normalized_.push_back(normalize_keypoint(kp, cam));
      words_.push_back(quantize(kp.descriptor, vocab));
    }
    roll_ = gravity_roll_angle(frame.gravity_in_camera, &degenerate_gravity_);
  }

  bool degenerate_gravity() const { return degenerate_gravity_; }

  FeatureVector build(std::int32_t keypoint_index) const {
    const auto& anchor = frame_.keypoints[static_cast<std::size_t>(keypoint_index)];
    const double s = anchor.scale / reference_scale_;
    const Eigen::Vector2d origin = normalized_[static_cast<std::size_t>(keypoint_index)];
    const double c = std::cos(roll_), sn = std::sin(roll_);

    FeatureVector fv;
    fv.descriptor = anchor.descriptor;
    fv.num_regions = static_cast<std::uint32_t>(bank_.size());
    fv.words = vocab_.k();

    std::vector<std::uint32_t> counts(vocab_.k(), 0);
    for (std::uint32_t r = 0; r < bank_.size(); ++r) {
      const auto& region = bank_.regions[r];
      OrientedRect rect;
      rect.center = origin + s * Eigen::Vector2d(c * region.offset_x - sn * region.offset_y,
                                                 sn * region.offset_x + c * region.offset_y);
      rect.half_width = s * region.half_width;
      rect.half_height = s * region.half_height;
      rect.angle = roll_;

      std::fill(counts.begin(), counts.end(), 0);
      std::uint32_t total = 0;
      for (std::size_t i = 0; i < frame_.keypoints.size(); ++i) {
        if (static_cast<std::int32_t>(i) == keypoint_index) continue;
        if (!rect.contains(normalized_[i])) continue;
        ++counts[words_[i]];
        ++total;
      }
      if (total == 0) continue;
      for (std::uint32_t w = 0; w < vocab_.k(); ++w)
        if (counts[w] > 0)
          fv.context.emplace_back(r * vocab_.k() + w,
                                  static_cast<float>(counts[w]) / static_cast<float>(total));
    }
    return fv;
  }

 private:
  const Frame& frame_;
  const RegionBank& bank_;
  const Vocabulary& vocab_;
  double reference_scale_;
  double roll_ = 0;
  bool degenerate_gravity_ = false;
  std::vector<Eigen::Vector2d> normalized_;
  std::vector<std::uint32_t> words_;
};

inline FeatureVector build_feature_vector(std::int32_t keypoint_index, const Frame& frame,
                                          const RegionBank& bank, const Vocabulary& vocab,
                                          const CameraIntrinsics& cam,
                                          double reference_scale,
                                          bool* degenerate_gravity = nullptr) {
  if (bank.size() == 0) throw ConfigError("build_feature_vector: empty region bank");
  FrameFeatureBuilder builder(frame, bank, vocab, cam, reference_scale);
  if (degenerate_gravity) *degenerate_gravity = builder.degenerate_gravity();
  return builder.build(keypoint_index);
}

// Text format: header "n seed area_min area_max aspect_min aspect_max radius",
// then one "offset_x offset_y half_width half_height" line per region.

inline void save_region_bank(const RegionBank& bank, std::ostream& out) {
  out.precision(17);
  out << bank.size() << ' ' << bank.seed << ' ' << bank.config.area_min << ' '
      << bank.config.area_max << ' ' << bank.config.aspect_min << ' '
      << bank.config.aspect_max << ' ' << bank.config.offset_radius << '\n';
  for (const auto& r : bank.regions)
    out << r.offset_x << ' ' << r.offset_y << ' ' << r.half_width << ' '
        << r.half_height << '\n';
}

inline void save_region_bank(const RegionBank& bank, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  save_region_bank(bank, out);
  if (!out) throw IoError("write to '" + path + "' failed");
}

inline RegionBank load_region_bank(std::istream& in) {
  RegionBank bank;
  std::size_t n = 0;
  std::string header;
  if (!std::getline(in, header)) throw ParseError("region bank: missing header");
  std::istringstream hs(header);
  if (!(hs >> n >> bank.seed >> bank.config.area_min >> bank.config.area_max >>
        bank.config.aspect_min >> bank.config.aspect_max >> bank.config.offset_radius))
    throw ParseError("region bank: malformed header");
  bank.regions.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::string line;
    if (!std::getline(in, line))
      throw ParseError("region bank: expected " + std::to_string(n) + " regions");
    std::istringstream ls(line);
    auto& r = bank.regions[i];
    if (!(ls >> r.offset_x >> r.offset_y >> r.half_width >> r.half_height))
      throw ParseError("region bank: malformed region line " + std::to_string(i));
  }
  return bank;
}

inline RegionBank load_region_bank(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  return load_region_bank(in);
}

}  // namespace lmboost
