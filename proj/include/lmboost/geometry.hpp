#pragma once

#include <cmath>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "lmboost/errors.hpp"

namespace lmboost {

/// Pinhole camera, pixels, no distortion model. Pixel coordinates are assumed
/// already undistorted.
struct CameraIntrinsics {
  double fx = 0, fy = 0;
  double cx = 0, cy = 0;
  int width = 0, height = 0;

  void validate() const {
    if (!(fx > 0) || !(fy > 0))
      throw ConfigError("camera: focal lengths must be positive");
    if (!(cx >= 0 && cx < width) || !(cy >= 0 && cy < height))
      throw ConfigError("camera: principal point outside the image");
  }

  /// Pixel -> normalized undistorted image plane.
  Eigen::Vector2d normalize(double u, double v) const {
    return {(u - cx) / fx, (v - cy) / fy};
  }

  /// Normalized image plane -> pixel.
  Eigen::Vector2d denormalize(const Eigen::Vector2d& n) const {
    return {n.x() * fx + cx, n.y() * fy + cy};
  }
};

/// Rigid transform mapping camera coordinates to world coordinates.
struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Eigen::Vector3d transform(const Eigen::Vector3d& p_camera) const {
    return rotation * p_camera + translation;
  }

  Eigen::Vector3d inverse_transform(const Eigen::Vector3d& p_world) const {
    return rotation.transpose() * (p_world - translation);
  }

  bool rotation_valid(double tol = 1e-9) const {
    const Eigen::Matrix3d e =
        rotation.transpose() * rotation - Eigen::Matrix3d::Identity();
    return e.cwiseAbs().maxCoeff() <= tol && rotation.determinant() > 0;
  }

  /// Quaternion with the canonical sign (w >= 0; tie broken on x, y, z).
  Eigen::Quaterniond quaternion() const {
    Eigen::Quaterniond q(rotation);
    if (q.w() < 0 || (q.w() == 0 && (q.x() < 0 || (q.x() == 0 && (q.y() < 0 || (q.y() == 0 && q.z() < 0))))))
      q.coeffs() = -q.coeffs();
    return q;
  }
};

/// Translation error (meters) and rotation error (degrees) between poses.
/// The angle comes from the relative quaternion (atan2 form), which stays
/// accurate near zero where acos of the trace loses half the digits.
inline std::pair<double, double> pose_error(const Pose& estimate,
                                            const Pose& truth) {
  const double t_err = (estimate.translation - truth.translation).norm();
  const Eigen::Quaterniond q(estimate.rotation.transpose() * truth.rotation);
  const double angle = 2.0 * std::atan2(q.vec().norm(), std::abs(q.w()));
  return {t_err, angle * 180.0 / 3.14159265358979323846};
}

}  // namespace lmboost
