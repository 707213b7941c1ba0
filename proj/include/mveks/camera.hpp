// Copyright 2026 The mveks Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace mveks {

/// Camera-frame depth at or below which a point counts as behind the camera.
inline constexpr double kDepthEpsilon = 1e-8;
/// Undistortion succeeds when re-distorting reproduces the input within this
/// many normalized units.
inline constexpr double kUndistortTolerance = 1e-10;
inline constexpr int kUndistortMaxIterations = 50;

/// Marker for a missing 2D observation coordinate.
inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

inline bool is_missing(double value) { return std::isnan(value); }

using Point3 = Eigen::Vector3d;
/// Pixel coordinates (u, v). Either component NaN means the point is missing.
using Point2 = Eigen::Vector2d;

inline Point2 missing_point2() { return Point2(kMissing, kMissing); }
inline bool is_missing(const Point2& p) { return std::isnan(p.x()) || std::isnan(p.y()); }

struct Distortion {
  double k1 = 0.0;
  double k2 = 0.0;
  double p1 = 0.0;
  double p2 = 0.0;

  bool is_zero() const { return k1 == 0.0 && k2 == 0.0 && p1 == 0.0 && p2 == 0.0; }
};

/// Pinhole camera with two-term radial and two-term tangential distortion.
///
/// A world point p maps to camera coordinates R p + t, is divided by depth,
/// distorted, and finally scaled by the focal lengths and shifted by the
/// principal point.
struct CameraModel {
  std::string name;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  Distortion distortion;

  /// Throws ConfigError if R is not a proper rotation (1e-9) or a focal
  /// length is not strictly positive.
  void validate() const;

  Eigen::Vector3d to_camera(const Point3& world) const { return rotation * world + translation; }
  /// 3x4 extrinsic matrix [R | t].
  Eigen::Matrix<double, 3, 4> extrinsics() const;
};

/// Ordered set of at least two cameras with unique names.
class Rig {
 public:
  Rig() = default;
  explicit Rig(std::vector<CameraModel> cameras);

  std::size_t size() const { return cameras_.size(); }
  const CameraModel& operator[](std::size_t i) const { return cameras_[i]; }
  const std::vector<CameraModel>& cameras() const { return cameras_; }
  std::vector<std::string> names() const;

  void validate() const;

 private:
  std::vector<CameraModel> cameras_;
};

/// Radial + tangential distortion of normalized image coordinates.
Eigen::Vector2d distort_normalized(const Distortion& d, const Eigen::Vector2d& xy);

/// Projects a world point to pixels. Throws NonPositiveDepth when the
/// camera-frame depth is <= kDepthEpsilon.
Point2 project(const CameraModel& cam, const Point3& p);

struct ProjectionWithJacobian {
  Point2 pixel;
  Eigen::Matrix<double, 2, 3> jacobian;  // d(u, v) / d(world point)
};

/// Projection plus its analytic Jacobian with respect to the world point.
ProjectionWithJacobian project_with_jacobian(const CameraModel& cam, const Point3& p);

/// Inverts distortion and intrinsics by fixed-point iteration, returning
/// normalized coordinates (x, y). Throws NoConvergence if re-distortion does
/// not reproduce the input within kUndistortTolerance.
Eigen::Vector2d undistort(const CameraModel& cam, const Point2& q);

struct PairTriangulation {
  Point3 point;
  /// Largest pixel reprojection error over the two cameras.
  double residual = 0.0;
};

/// Linear (DLT) triangulation of one camera pair on undistorted rays.
/// Throws DegenerateGeometry when the rays are (near) parallel.
PairTriangulation triangulate_pair(const CameraModel& a, const CameraModel& b,
                                   const Point2& qa, const Point2& qb);

/// Component-wise median of all valid pairwise triangulations. Pairs with a
/// missing view or degenerate geometry are skipped.
Point3 triangulate_median(const Rig& rig, std::span<const Point2> points);

/// Convenience overload for one row of a T x 2V observation matrix laid out as
/// [x_1, y_1, ..., x_V, y_V].
Point3 triangulate_median(const Rig& rig, const Eigen::Ref<const Eigen::VectorXd>& stacked);

/// Rodrigues rotation vector -> rotation matrix.
Eigen::Matrix3d rodrigues_to_matrix(const Eigen::Vector3d& rvec);

/// Camera placed at `position` looking toward `target`; `up` selects roll.
CameraModel look_at_camera(std::string name, const Eigen::Vector3d& position,
                           const Eigen::Vector3d& target, const Eigen::Vector3d& up);

}  // namespace mveks
