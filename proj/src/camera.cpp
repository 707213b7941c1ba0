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

#include "mveks/camera.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include <Eigen/Geometry>
#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "mveks/errors.hpp"
#include "stats_util.hpp"

namespace mveks {

void CameraModel::validate() const {
  const Eigen::Matrix3d should_be_identity = rotation * rotation.transpose();
  if (!rotation.allFinite() ||
      (should_be_identity - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-9 ||
      std::abs(rotation.determinant() - 1.0) > 1e-9) {
    throw ConfigError("camera '" + name + "': rotation is not orthonormal with determinant +1");
  }
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw ConfigError("camera '" + name + "': focal lengths must be strictly positive");
  }
  if (!translation.allFinite() || !std::isfinite(cx) || !std::isfinite(cy)) {
    throw ConfigError("camera '" + name + "': non-finite translation or principal point");
  }
}

Eigen::Matrix<double, 3, 4> CameraModel::extrinsics() const {
  Eigen::Matrix<double, 3, 4> rt;
  rt.leftCols<3>() = rotation;
  rt.col(3) = translation;
  return rt;
}

Rig::Rig(std::vector<CameraModel> cameras) : cameras_(std::move(cameras)) { validate(); }

std::vector<std::string> Rig::names() const {
  std::vector<std::string> out;
  out.reserve(cameras_.size());
  for (const auto& c : cameras_) out.push_back(c.name);
  return out;
}

void Rig::validate() const {
  if (cameras_.size() < 2) throw ConfigError("a rig needs at least two cameras");
  std::set<std::string> seen;
  for (const auto& cam : cameras_) {
    cam.validate();
    if (!seen.insert(cam.name).second) {
      throw ConfigError("duplicate camera name '" + cam.name + "'");
    }
  }
}

Eigen::Vector2d distort_normalized(const Distortion& d, const Eigen::Vector2d& xy) {
  const double x = xy.x();
  const double y = xy.y();
  const double r2 = x * x + y * y;
  const double radial = 1.0 + d.k1 * r2 + d.k2 * r2 * r2;
  const double xt = 2.0 * d.p1 * x * y + d.p2 * (r2 + 2.0 * x * x);
  const double yt = 2.0 * d.p2 * x * y + d.p1 * (r2 + 2.0 * y * y);
  return {x * radial + xt, y * radial + yt};
}

namespace {

Eigen::Vector3d checked_camera_point(const CameraModel& cam, const Point3& p) {
  const Eigen::Vector3d pc = cam.to_camera(p);
  if (!(pc.z() > kDepthEpsilon)) {
    std::ostringstream msg;
    msg << "point has depth " << pc.z() << " in camera '" << cam.name << "'";
    throw NonPositiveDepth(msg.str());
  }
  return pc;
}

}  // namespace

Point2 project(const CameraModel& cam, const Point3& p) {
  const Eigen::Vector3d pc = checked_camera_point(cam, p);
  const Eigen::Vector2d xd = distort_normalized(cam.distortion, pc.head<2>() / pc.z());
  return {cam.fx * xd.x() + cam.cx, cam.fy * xd.y() + cam.cy};
}

ProjectionWithJacobian project_with_jacobian(const CameraModel& cam, const Point3& p) {
  const Eigen::Vector3d pc = checked_camera_point(cam, p);
  const Distortion& d = cam.distortion;
  const double inv_z = 1.0 / pc.z();
  const double x = pc.x() * inv_z;
  const double y = pc.y() * inv_z;
  const double r2 = x * x + y * y;
  const double radial = 1.0 + d.k1 * r2 + d.k2 * r2 * r2;
  const double xd = x * radial + 2.0 * d.p1 * x * y + d.p2 * (r2 + 2.0 * x * x);
  const double yd = y * radial + 2.0 * d.p2 * x * y + d.p1 * (r2 + 2.0 * y * y);

  // d(radial)/d(x, y) = (k1 + 2 k2 r^2) * 2 (x, y)
  const double dradial = 2.0 * (d.k1 + 2.0 * d.k2 * r2);
  Eigen::Matrix2d dist_jac;
  dist_jac(0, 0) = radial + x * dradial * x + 2.0 * d.p1 * y + 6.0 * d.p2 * x;
  dist_jac(0, 1) = x * dradial * y + 2.0 * d.p1 * x + 2.0 * d.p2 * y;
  dist_jac(1, 0) = y * dradial * x + 2.0 * d.p2 * y + 2.0 * d.p1 * x;
  dist_jac(1, 1) = radial + y * dradial * y + 2.0 * d.p2 * x + 6.0 * d.p1 * y;

  Eigen::Matrix<double, 2, 3> persp_jac;
  persp_jac << inv_z, 0.0, -x * inv_z, 0.0, inv_z, -y * inv_z;

  ProjectionWithJacobian out;
  out.pixel = {cam.fx * xd + cam.cx, cam.fy * yd + cam.cy};
  out.jacobian = Eigen::Vector2d(cam.fx, cam.fy).asDiagonal() * dist_jac * persp_jac * cam.rotation;
  return out;
}

Eigen::Vector2d undistort(const CameraModel& cam, const Point2& q) {
  if (is_missing(q)) throw DataError("cannot undistort a missing point");
  const Eigen::Vector2d target((q.x() - cam.cx) / cam.fx, (q.y() - cam.cy) / cam.fy);
  const Distortion& d = cam.distortion;
  if (d.is_zero()) return target;

  // Iterate x <- (x_q - tangential(x)) / radial(x). The loop keeps going past
  // the acceptance tolerance until the residual reaches round-off, so that
  // pixel-space round trips are not limited by the tolerance itself.
  const double floor = 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, target.norm());
  Eigen::Vector2d xy = target;
  double residual = (distort_normalized(d, xy) - target).norm();
  for (int it = 0; it < kUndistortMaxIterations && residual > floor; ++it) {
    const double x = xy.x();
    const double y = xy.y();
    const double r2 = x * x + y * y;
    const double radial = 1.0 + d.k1 * r2 + d.k2 * r2 * r2;
    if (!(radial > 0.0)) break;
    const double xt = 2.0 * d.p1 * x * y + d.p2 * (r2 + 2.0 * x * x);
    const double yt = 2.0 * d.p2 * x * y + d.p1 * (r2 + 2.0 * y * y);
    const Eigen::Vector2d next((target.x() - xt) / radial, (target.y() - yt) / radial);
    const double next_residual = (distort_normalized(d, next) - target).norm();
    if (!std::isfinite(next_residual)) break;
    if (next_residual >= residual && residual <= kUndistortTolerance) break;
    xy = next;
    residual = next_residual;
  }
  if (!(residual <= kUndistortTolerance)) {
    std::ostringstream msg;
    msg << "undistortion did not converge in camera '" << cam.name << "' (residual " << residual
        << ")";
    throw NoConvergence(msg.str());
  }
  return xy;
}

namespace {

// DLT on two undistorted (normalized) observations.
Point3 triangulate_normalized(const CameraModel& a, const CameraModel& b,
                              const Eigen::Vector2d& na, const Eigen::Vector2d& nb) {
  const Eigen::Matrix<double, 3, 4> pa = a.extrinsics();
  const Eigen::Matrix<double, 3, 4> pb = b.extrinsics();

  Eigen::Matrix4d system;
  system.row(0) = na.x() * pa.row(2) - pa.row(0);
  system.row(1) = na.y() * pa.row(2) - pa.row(1);
  system.row(2) = nb.x() * pb.row(2) - pb.row(0);
  system.row(3) = nb.y() * pb.row(2) - pb.row(1);
  for (int r = 0; r < 4; ++r) {
    const double n = system.row(r).norm();
    if (n > 0.0) system.row(r) /= n;
  }

  // Inhomogeneous form: fix the homogeneous coordinate to 1 and solve the
  // 3x3 normal equations. Parallel rays leave the Gram matrix rank deficient.
  const Eigen::Matrix<double, 4, 3> lhs = system.leftCols<3>();
  const Eigen::Vector4d rhs = -system.col(3);
  const Eigen::Matrix3d gram = lhs.transpose() * lhs;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig;
  eig.computeDirect(gram, Eigen::EigenvaluesOnly);
  const Eigen::Vector3d ev = eig.eigenvalues();
  if (!(ev(0) > 1e-14 * ev(2))) {
    throw DegenerateGeometry("cameras '" + a.name + "' and '" + b.name + "' give parallel rays");
  }
  return gram.ldlt().solve(lhs.transpose() * rhs);
}

}  // namespace

PairTriangulation triangulate_pair(const CameraModel& a, const CameraModel& b, const Point2& qa,
                                   const Point2& qb) {
  if (is_missing(qa) || is_missing(qb)) throw DataError("triangulate_pair: missing observation");
  const Eigen::Vector2d na = undistort(a, qa);
  const Eigen::Vector2d nb = undistort(b, qb);

  PairTriangulation out;
  out.point = triangulate_normalized(a, b, na, nb);
  double residual = 0.0;
  for (const auto* pair : {&a, &b}) {
    const Point2& q = pair == &a ? qa : qb;
    try {
      residual = std::max(residual, (project(*pair, out.point) - q).norm());
    } catch (const NonPositiveDepth&) {
      residual = std::numeric_limits<double>::infinity();
    }
  }
  out.residual = residual;
  return out;
}

Point3 triangulate_median(const Rig& rig, std::span<const Point2> points) {
  if (points.size() != rig.size()) {
    throw ShapeMismatch("triangulate_median: expected one point per camera");
  }
  std::vector<std::size_t> present;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!is_missing(points[i])) present.push_back(i);
  }
  if (present.size() < 2) throw InsufficientViews("triangulation needs at least two valid views");

  // Undistort each view once; views outside the invertible region drop out.
  std::vector<std::size_t> valid;
  std::vector<Eigen::Vector2d> normalized(points.size());
  for (std::size_t i : present) {
    try {
      normalized[i] = undistort(rig[i], points[i]);
      valid.push_back(i);
    } catch (const NoConvergence&) {
    }
  }

  std::vector<double> xs, ys, zs;
  for (std::size_t i = 0; i < valid.size(); ++i) {
    for (std::size_t j = i + 1; j < valid.size(); ++j) {
      const std::size_t a = valid[i];
      const std::size_t b = valid[j];
      try {
        const Point3 p = triangulate_normalized(rig[a], rig[b], normalized[a], normalized[b]);
        xs.push_back(p.x());
        ys.push_back(p.y());
        zs.push_back(p.z());
      } catch (const DegenerateGeometry&) {
      }
    }
  }
  if (xs.empty()) throw DegenerateGeometry("no camera pair produced a valid triangulation");
  return {detail::median_inplace(xs), detail::median_inplace(ys), detail::median_inplace(zs)};
}

Point3 triangulate_median(const Rig& rig, const Eigen::Ref<const Eigen::VectorXd>& stacked) {
  if (static_cast<std::size_t>(stacked.size()) != 2 * rig.size()) {
    throw ShapeMismatch("triangulate_median: stacked row must have 2V entries");
  }
  std::vector<Point2> pts(rig.size());
  for (std::size_t v = 0; v < rig.size(); ++v) pts[v] = Point2(stacked(2 * v), stacked(2 * v + 1));
  return triangulate_median(rig, std::span<const Point2>(pts));
}

Eigen::Matrix3d rodrigues_to_matrix(const Eigen::Vector3d& rvec) {
  const double angle = rvec.norm();
  if (angle < 1e-300) return Eigen::Matrix3d::Identity();
  return Eigen::AngleAxisd(angle, rvec / angle).toRotationMatrix();
}

CameraModel look_at_camera(std::string name, const Eigen::Vector3d& position,
                           const Eigen::Vector3d& target, const Eigen::Vector3d& up) {
  const Eigen::Vector3d forward = (target - position).normalized();
  const Eigen::Vector3d right = forward.cross(up).normalized();
  const Eigen::Vector3d down = forward.cross(right);
  CameraModel cam;
  cam.name = std::move(name);
  cam.rotation.row(0) = right;
  cam.rotation.row(1) = down;
  cam.rotation.row(2) = forward;
  cam.translation = -cam.rotation * position;
  return cam;
}

}  // namespace mveks
