#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "lmboost/errors.hpp"
#include "lmboost/geometry.hpp"
#include "lmboost/map.hpp"
#include "lmboost/matching.hpp"
#include "lmboost/rng.hpp"

namespace lmboost {

/// One 2D-3D correspondence in solver form: normalized image observation plus
/// the landmark's world position.
struct PnpCorrespondence {
  Eigen::Vector2d image_normalized = Eigen::Vector2d::Zero();
  Eigen::Vector3d world = Eigen::Vector3d::Zero();
};

namespace detail {

/// Real roots of a quartic via the companion matrix, polished with Newton
/// steps on the polynomial.
inline std::vector<double> quartic_real_roots(const std::array<double, 5>& c) {
  // c[4] v^4 + c[3] v^3 + c[2] v^2 + c[1] v + c[0] = 0
  std::vector<double> roots;
  if (std::abs(c[4]) < 1e-14 * std::abs(*std::max_element(
                                   c.begin(), c.end(),
                                   [](double a, double b) { return std::abs(a) < std::abs(b); })))
    return roots;  // degenerate leading coefficient; treat as no solution
  Eigen::Matrix4d companion = Eigen::Matrix4d::Zero();
  for (int i = 0; i < 3; ++i) companion(i + 1, i) = 1.0;
  for (int i = 0; i < 4; ++i) companion(i, 3) = -c[static_cast<std::size_t>(i)] / c[4];
  const Eigen::EigenSolver<Eigen::Matrix4d> solver(companion);
  for (int i = 0; i < 4; ++i) {
    const auto ev = solver.eigenvalues()(i);
    if (std::abs(ev.imag()) > 1e-6 * (1.0 + std::abs(ev.real()))) continue;
    double v = ev.real();
    for (int it = 0; it < 3; ++it) {  // Newton polish
      const double p = (((c[4] * v + c[3]) * v + c[2]) * v + c[1]) * v + c[0];
      const double dp = ((4 * c[4] * v + 3 * c[3]) * v + 2 * c[2]) * v + c[1];
      if (std::abs(dp) < 1e-300) break;
      v -= p / dp;
    }
    roots.push_back(v);
  }
  return roots;
}

/// Rigid transform (camera -> world) aligning camera-frame points to world
/// points, via SVD of the cross-covariance.
inline Pose absolute_orientation(const std::vector<Eigen::Vector3d>& camera_points,
                                 const std::vector<Eigen::Vector3d>& world_points) {
  Eigen::Vector3d cc = Eigen::Vector3d::Zero(), cw = Eigen::Vector3d::Zero();
  const double n = static_cast<double>(camera_points.size());
  for (const auto& p : camera_points) cc += p;
  for (const auto& p : world_points) cw += p;
  cc /= n;
  cw /= n;
  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
  for (std::size_t i = 0; i < camera_points.size(); ++i)
    h += (camera_points[i] - cc) * (world_points[i] - cw).transpose();
  const Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d r = svd.matrixV() * svd.matrixU().transpose();
  if (r.determinant() < 0) {
    Eigen::Matrix3d flip = Eigen::Matrix3d::Identity();
    flip(2, 2) = -1;
    r = svd.matrixV() * flip * svd.matrixU().transpose();
  }
  Pose pose;
  pose.rotation = r;
  pose.translation = cw - r * cc;
  return pose;
}

inline double reprojection_residual(const Pose& pose, const PnpCorrespondence& c) {
  const Eigen::Vector3d p = pose.inverse_transform(c.world);
  if (p.z() <= 1e-9) return std::numeric_limits<double>::infinity();
  return (Eigen::Vector2d(p.x() / p.z(), p.y() / p.z()) - c.image_normalized).norm();
}

/// Gauss-Newton on the reprojection error over the given subset. Steps are
/// halved until the total squared error does not increase, so the refined
/// pose is never worse than the input.
inline Pose refine_pose(const Pose& initial, const std::vector<PnpCorrespondence>& corrs,
                        const std::vector<std::int32_t>& inliers, std::int32_t iterations) {
  Eigen::Matrix3d r_cw = initial.rotation.transpose();
  Eigen::Vector3d t_cw = -r_cw * initial.translation;

  auto total_error = [&](const Eigen::Matrix3d& r, const Eigen::Vector3d& t) {
    double e = 0;
    for (const std::int32_t i : inliers) {
      const auto& c = corrs[static_cast<std::size_t>(i)];
      const Eigen::Vector3d p = r * c.world + t;
      if (p.z() <= 1e-9) return std::numeric_limits<double>::infinity();
      e += (Eigen::Vector2d(p.x() / p.z(), p.y() / p.z()) - c.image_normalized).squaredNorm();
    }
    return e;
  };

  double error = total_error(r_cw, t_cw);
  for (std::int32_t it = 0; it < iterations; ++it) {
    Eigen::Matrix<double, 6, 6> jtj = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> jtr = Eigen::Matrix<double, 6, 1>::Zero();
    for (const std::int32_t i : inliers) {
      const auto& c = corrs[static_cast<std::size_t>(i)];
      const Eigen::Vector3d p = r_cw * c.world + t_cw;
      if (p.z() <= 1e-9) continue;
      const double iz = 1.0 / p.z();
      const Eigen::Vector2d residual(p.x() * iz - c.image_normalized.x(),
                                     p.y() * iz - c.image_normalized.y());
      Eigen::Matrix<double, 2, 3> d_proj;
      d_proj << iz, 0, -p.x() * iz * iz, 0, iz, -p.y() * iz * iz;
      Eigen::Matrix<double, 3, 6> d_point;
      // left perturbation: p' = exp(w^) (R X + t) ~ p + w x p + dt
      d_point.block<3, 3>(0, 0) << 0, p.z(), -p.y(), -p.z(), 0, p.x(), p.y(), -p.x(), 0;
      d_point.block<3, 3>(0, 3) = Eigen::Matrix3d::Identity();
      const Eigen::Matrix<double, 2, 6> j = d_proj * d_point;
      jtj += j.transpose() * j;
      jtr += j.transpose() * residual;
    }
    Eigen::Matrix<double, 6, 1> step = jtj.ldlt().solve(-jtr);
    if (!step.allFinite()) break;
    bool accepted = false;
    for (int half = 0; half < 8; ++half) {
      const Eigen::Vector3d w = step.head<3>();
      Eigen::Matrix3d r_new = r_cw;
      if (w.norm() > 1e-300)
        r_new = Eigen::AngleAxisd(w.norm(), w.normalized()).toRotationMatrix() * r_cw;
      const Eigen::Vector3d t_new = t_cw + step.tail<3>();
      const double e_new = total_error(r_new, t_new);
      if (e_new <= error) {
        r_cw = r_new;
        t_cw = t_new;
        if (error - e_new < 1e-16 * (1.0 + error)) it = iterations;  // converged
        error = e_new;
        accepted = true;
        break;
      }
      step /= 2;
    }
    if (!accepted) break;
  }
  Pose out;
  out.rotation = r_cw.transpose();
  out.translation = -out.rotation * t_cw;
  return out;
}

}  // namespace detail

/// P3P minimal solver (Grunert's distance formulation reduced to a quartic).
/// Returns up to four poses, each reprojecting the three points with residual
/// below 1e-8 normalized units.
inline std::vector<Pose> solve_pnp_minimal(const std::array<PnpCorrespondence, 3>& corrs) {
  const Eigen::Vector3d& p1 = corrs[0].world;
  const Eigen::Vector3d& p2 = corrs[1].world;
  const Eigen::Vector3d& p3 = corrs[2].world;
  const double span = std::max({(p2 - p1).norm(), (p3 - p1).norm(), (p3 - p2).norm()});
  if ((p2 - p1).cross(p3 - p1).norm() < 1e-10 * span * span)
    throw DegenerateSampleError("solve_pnp_minimal: collinear landmark points");

  std::array<Eigen::Vector3d, 3> f;
  for (int i = 0; i < 3; ++i)
    f[static_cast<std::size_t>(i)] =
        Eigen::Vector3d(corrs[static_cast<std::size_t>(i)].image_normalized.x(),
                        corrs[static_cast<std::size_t>(i)].image_normalized.y(), 1.0)
            .normalized();

  const double a = (p2 - p3).norm();
  const double b = (p1 - p3).norm();
  const double c = (p1 - p2).norm();
  const double cos_alpha = f[1].dot(f[2]);
  const double cos_beta = f[0].dot(f[2]);
  const double cos_gamma = f[0].dot(f[1]);
  const double b2 = b * b;

  // With s2 = u s1, s3 = v s1, eliminate u via
  //   u = N(v) / D(v),  N quadratic, D linear,
  // then substitute into u^2 - 2 u cos(gamma) + q(v) = 0 to get a quartic.
  const double ca = (c * c - a * a) / b2;
  const std::array<double, 3> qn = {ca - 1.0, -2.0 * cos_beta * ca, 1.0 + ca};  // N coeffs (v^0..v^2)
  const std::array<double, 2> qd = {-2.0 * cos_gamma, 2.0 * cos_alpha};         // D coeffs
  const double cb = c * c / b2;
  const std::array<double, 3> qq = {1.0 - cb, 2.0 * cos_beta * cb, -cb};        // q coeffs

  // quartic = N^2 - 2 cos(gamma) N D + q D^2
  std::array<double, 5> quartic{};
  auto add = [&quartic](int power, double value) {
    quartic[static_cast<std::size_t>(power)] += value;
  };
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      add(i + j, qn[static_cast<std::size_t>(i)] * qn[static_cast<std::size_t>(j)]);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j)
      add(i + j, -2.0 * cos_gamma * qn[static_cast<std::size_t>(i)] *
                     qd[static_cast<std::size_t>(j)]);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 2; ++k)
        add(i + j + k, qq[static_cast<std::size_t>(i)] * qd[static_cast<std::size_t>(j)] *
                           qd[static_cast<std::size_t>(k)]);

  std::vector<Pose> solutions;
  for (const double v : detail::quartic_real_roots(quartic)) {
    if (!(v > 0)) continue;
    const double denom = qd[1] * v + qd[0];
    if (std::abs(denom) < 1e-12) continue;
    const double u = ((qn[2] * v + qn[1]) * v + qn[0]) / denom;
    if (!(u > 0)) continue;
    const double s1_sq = b2 / (1.0 + v * v - 2.0 * v * cos_beta);
    if (!(s1_sq > 0)) continue;
    const double s1 = std::sqrt(s1_sq);
    const std::vector<Eigen::Vector3d> camera_points = {s1 * f[0], u * s1 * f[1],
                                                        v * s1 * f[2]};
    const std::vector<Eigen::Vector3d> world_points = {p1, p2, p3};
    Pose pose = detail::absolute_orientation(camera_points, world_points);
    // The quartic root limits accuracy to ~1e-8; a couple of Gauss-Newton
    // steps on the three points polish the pose to machine precision.
    const std::vector<PnpCorrespondence> minimal(corrs.begin(), corrs.end());
    pose = detail::refine_pose(pose, minimal, {0, 1, 2}, 3);
    double worst = 0;
    for (const auto& corr : corrs)
      worst = std::max(worst, detail::reprojection_residual(pose, corr));
    if (worst < 1e-8) {
      bool duplicate = false;
      for (const auto& other : solutions)
        if ((other.translation - pose.translation).norm() < 1e-9 &&
            (other.rotation - pose.rotation).cwiseAbs().maxCoeff() < 1e-9)
          duplicate = true;
      if (!duplicate) solutions.push_back(pose);
    }
  }
  return solutions;
}

struct RansacConfig {
  std::int32_t max_iterations = 500;
  double inlier_threshold = 2.0 / 320.0;  // normalized reprojection distance
  std::int32_t min_inliers = 6;
  double confidence = 0.99;
  std::int32_t refine_iterations = 10;
  std::uint64_t seed = 1;
};

/// Pixel threshold -> normalized units using the mean focal length.
inline double pixel_threshold_to_normalized(double pixels, const CameraIntrinsics& cam) {
  return pixels / ((cam.fx + cam.fy) / 2.0);
}

struct RansacResult {
  std::optional<Pose> pose;
  std::vector<std::int32_t> inliers;
  std::int32_t iterations = 0;
  double inlier_ratio = 0;
};

/// Standard RANSAC over the P3P solver: best model by inlier count (ties by
/// total reprojection error, then by iteration index), adaptive early exit,
/// final Gauss-Newton refinement on the winning inlier set. Returns no pose
/// when the consensus stays below min_inliers. Deterministic given the seed.
inline RansacResult pnp_ransac(const std::vector<PnpCorrespondence>& corrs,
                               const RansacConfig& config) {
  if (corrs.size() < 3)
    throw TooFewCorrespondencesError("pnp_ransac: need at least 3 correspondences, got " +
                                     std::to_string(corrs.size()));
  Rng rng(config.seed);
  RansacResult result;
  std::size_t best_count = 0;
  double best_error = std::numeric_limits<double>::infinity();
  Pose best_pose;
  std::int32_t required = config.max_iterations;

  std::vector<std::int32_t> inliers;
  for (std::int32_t iter = 0; iter < config.max_iterations && iter < required; ++iter) {
    result.iterations = iter + 1;
    std::array<std::size_t, 3> pick{};
    pick[0] = static_cast<std::size_t>(uniform_below(rng, corrs.size()));
    do {
      pick[1] = static_cast<std::size_t>(uniform_below(rng, corrs.size()));
    } while (pick[1] == pick[0]);
    do {
      pick[2] = static_cast<std::size_t>(uniform_below(rng, corrs.size()));
    } while (pick[2] == pick[0] || pick[2] == pick[1]);

    std::vector<Pose> candidates;
    try {
      candidates = solve_pnp_minimal({corrs[pick[0]], corrs[pick[1]], corrs[pick[2]]});
    } catch (const DegenerateSampleError&) {
      continue;
    }
    for (const Pose& pose : candidates) {
      inliers.clear();
      double error = 0;
      for (std::size_t i = 0; i < corrs.size(); ++i) {
        const double r = detail::reprojection_residual(pose, corrs[i]);
        if (r <= config.inlier_threshold) {
          inliers.push_back(static_cast<std::int32_t>(i));
          error += r;
        }
      }
      if (inliers.size() > best_count ||
          (inliers.size() == best_count && error < best_error)) {
        best_count = inliers.size();
        best_error = error;
        best_pose = pose;
        result.inliers = inliers;
        const double w = static_cast<double>(best_count) / static_cast<double>(corrs.size());
        const double p_good = w * w * w;
        if (p_good >= 1.0 - 1e-12) {
          required = iter + 1;
        } else if (p_good > 0) {
          const double need =
              std::log(1.0 - config.confidence) / std::log(1.0 - p_good);
          required = static_cast<std::int32_t>(
              std::min<double>(config.max_iterations, std::ceil(need)));
        }
      }
    }
  }

  result.inlier_ratio =
      static_cast<double>(best_count) / static_cast<double>(corrs.size());
  if (best_count >= static_cast<std::size_t>(config.min_inliers)) {
    result.pose =
        detail::refine_pose(best_pose, corrs, result.inliers, config.refine_iterations);
  }
  return result;
}

/// End-to-end localization of one query frame: classifier matching followed
/// by PnP+RANSAC. Timings feed the runtime report.
struct LocalizationResult {
  RansacResult ransac;
  std::size_t correspondences = 0;
  double match_ms = 0;
  double ransac_ms = 0;
};

inline std::vector<PnpCorrespondence> to_pnp_correspondences(
    const std::vector<Correspondence2D3D>& matches, const Frame& frame,
    const CameraIntrinsics& cam, const SfMMap& map) {
  std::vector<PnpCorrespondence> out;
  out.reserve(matches.size());
  for (const auto& m : matches) {
    const Landmark* lm = map.find_landmark(m.landmark_id);
    if (!lm) throw DanglingReferenceError("correspondence references missing landmark " +
                                          std::to_string(m.landmark_id));
    PnpCorrespondence c;
    c.image_normalized = normalize_keypoint(
        frame.keypoints[static_cast<std::size_t>(m.keypoint_index)], cam);
    c.world = lm->position_world;
    out.push_back(c);
  }
  return out;
}

inline LocalizationResult localize_frame(const Frame& frame, const BoostedModel& model,
                                         const InvertedFile* inv, const CameraIntrinsics& cam,
                                         const SfMMap& map, const MatchOptions& match_options,
                                         const RansacConfig& ransac_config) {
  LocalizationResult result;
  const auto t0 = std::chrono::steady_clock::now();
  const auto matches = match_frame(frame, model, inv, cam, match_options);
  const auto t1 = std::chrono::steady_clock::now();
  result.correspondences = matches.size();
  result.match_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
  if (matches.size() >= 3) {
    const auto pnp = to_pnp_correspondences(matches, frame, cam, map);
    result.ransac = pnp_ransac(pnp, ransac_config);
  }
  const auto t2 = std::chrono::steady_clock::now();
  result.ransac_ms = std::chrono::duration<double, std::milli>(t2 - t1).count();
  return result;
}

}  // namespace lmboost
