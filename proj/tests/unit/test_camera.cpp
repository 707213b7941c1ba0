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

#include <algorithm>
#include <random>
#include <vector>

#include "doctest.h"
#include "mveks/camera.hpp"
#include "mveks/errors.hpp"
#include "mveks/synth.hpp"
#include "oracles.hpp"

using namespace mveks;

namespace {

CameraModel pinhole(double f, double cx, double cy) {
  CameraModel cam;
  cam.name = "pin";
  cam.fx = f;
  cam.fy = f;
  cam.cx = cx;
  cam.cy = cy;
  return cam;
}

CameraModel distorted_example() {
  std::mt19937_64 rng(11);
  CameraModel cam = oracle::random_camera(rng, 0.0, "d");
  cam.distortion = {-0.2, 0.05, 0.001, -0.002};
  return cam;
}

CameraModel shifted(const CameraModel& base, const Eigen::Vector3d& center, std::string name) {
  CameraModel cam = base;
  cam.name = std::move(name);
  cam.translation = -cam.rotation * center;
  return cam;
}

}  // namespace

TEST_CASE("project: optical axis and pinhole arithmetic") {
  CHECK(project(pinhole(1, 0, 0), {0, 0, 1}).isApprox(Point2(0, 0)));
  const Point2 q = project(pinhole(100, 320, 240), {0.5, 0, 1});
  CHECK(q.x() == doctest::Approx(370.0).epsilon(1e-15));
  CHECK(q.y() == doctest::Approx(240.0).epsilon(1e-15));
}

TEST_CASE("project: distorted camera matches scalar evaluation") {
  const CameraModel cam = distorted_example();
  const Point3 p(0.3, -0.1, 2.0);
  const Point3 pc = cam.to_camera(p);
  REQUIRE(pc.z() > 0.0);
  const Point2 expected = oracle::scalar_project(cam, p);
  CHECK((project(cam, p) - expected).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("project: behind-camera points are rejected") {
  const CameraModel cam = pinhole(100, 0, 0);
  CHECK_THROWS_AS(project(cam, {0, 0, 0}), NonPositiveDepth);
  CHECK_THROWS_AS(project(cam, {0, 0, -1}), NonPositiveDepth);
  CHECK_THROWS_AS(project(cam, {1, 0, 1e-9}), NonPositiveDepth);
  CHECK_NOTHROW(project(cam, {0, 0, 1e-7}));
}

TEST_CASE("project: doubling the focal length doubles the offset from the center") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 50; ++i) {
    CameraModel cam = oracle::random_camera(rng, 0.0);
    const Point3 p = oracle::random_visible_point(rng, cam);
    const Point2 a = project(cam, p);
    CameraModel wide = cam;
    wide.fx *= 2;
    wide.fy *= 2;
    const Point2 b = project(wide, p);
    const Eigen::Vector2d c(cam.cx, cam.cy);
    CHECK(((b - c) - 2.0 * (a - c)).norm() < 1e-9);
  }
}

TEST_CASE("project_with_jacobian: matches central differences") {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 100; ++i) {
    const CameraModel cam = oracle::random_camera(rng, 1.0);
    const Point3 p = oracle::random_visible_point(rng, cam);
    const auto pj = project_with_jacobian(cam, p);
    CHECK((pj.pixel - project(cam, p)).norm() < 1e-12);
    const double h = 1e-6;
    for (int k = 0; k < 3; ++k) {
      Point3 hi = p, lo = p;
      hi[k] += h;
      lo[k] -= h;
      const Eigen::Vector2d fd =
          (oracle::scalar_project(cam, hi) - oracle::scalar_project(cam, lo)) / (2 * h);
      const double scale = std::max(1.0, pj.jacobian.col(k).norm());
      CHECK((fd - pj.jacobian.col(k)).norm() / scale < 1e-5);
    }
  }
}

TEST_CASE("project_with_jacobian: pinhole closed form") {
  CameraModel cam = pinhole(400, 10, 20);
  const Point3 p(0.2, -0.3, 4.0);
  const auto pj = project_with_jacobian(cam, p);
  Eigen::Matrix<double, 2, 3> expected;
  expected << 400 / 4.0, 0, -400 * 0.2 / 16.0, 0, 400 / 4.0, 400 * 0.3 / 16.0;
  CHECK((pj.jacobian - expected).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("undistort: identity for zero distortion and fixed point at the center") {
  std::mt19937_64 rng(7);
  CameraModel cam = oracle::random_camera(rng, 0.0);
  const Point3 p = oracle::random_visible_point(rng, cam);
  const Point3 pc = cam.to_camera(p);
  CHECK((undistort(cam, project(cam, p)) - pc.head<2>() / pc.z()).norm() < 1e-15);

  CameraModel d = distorted_example();
  CHECK(undistort(d, Point2(d.cx, d.cy)).norm() == 0.0);
  CHECK_THROWS_AS(undistort(d, missing_point2()), DataError);
}

TEST_CASE("undistort: round trip through the distorted example") {
  const CameraModel cam = distorted_example();
  const Point3 p(0.3, -0.1, 2.0);
  const Point3 pc = cam.to_camera(p);
  const Eigen::Vector2d xy = undistort(cam, project(cam, p));
  CHECK((xy - pc.head<2>() / pc.z()).norm() < 1e-10);
}

TEST_CASE("undistort: pixel round trip on random cameras") {
  std::mt19937_64 rng(9);
  double worst = 0.0;
  for (int i = 0; i < 500; ++i) {
    const CameraModel cam = oracle::random_camera(rng, 1.0);
    const Point3 p = oracle::random_visible_point(rng, cam);
    const Point2 q = project(cam, p);
    const Eigen::Vector2d xy = undistort(cam, q);
    const Eigen::Vector2d xd = distort_normalized(cam.distortion, xy);
    const Point2 back(cam.fx * xd.x() + cam.cx, cam.fy * xd.y() + cam.cy);
    worst = std::max(worst, (back - q).norm());
  }
  CHECK(worst < 1e-8);
}

TEST_CASE("undistort: points outside the invertible region fail to converge") {
  CameraModel cam = pinhole(100, 0, 0);
  cam.distortion.k1 = -0.5;
  // x (1 - 0.5 x^2) peaks at 0.544 for x = 0.816; nothing maps further out.
  CHECK_THROWS_AS(undistort(cam, Point2(100.0, 0.0)), NoConvergence);
}

TEST_CASE("triangulate_pair: exact projections are recovered") {
  CameraModel a = pinhole(500, 320, 240);
  a.name = "a";
  CameraModel b = shifted(a, {1.0, 0.0, 0.0}, "b");
  const Point3 p(0.1, 0.2, 3.0);
  const auto tri = triangulate_pair(a, b, project(a, p), project(b, p));
  CHECK((tri.point - p).norm() < 1e-8);
  CHECK(tri.residual < 1e-6);

  CHECK_THROWS_AS(triangulate_pair(a, a, project(a, p), project(a, p)), DegenerateGeometry);
}

TEST_CASE("triangulate_pair: noisy pairs scatter around the truth with positive residual") {
  RigSpec spec;
  spec.num_views = 6;
  const Rig rig = make_rig(spec);
  std::mt19937_64 rng(13);
  std::normal_distribution<double> noise(0.0, 0.5);
  const Point3 truth(0.2, -0.1, 0.3);
  Eigen::Vector3d mean_error = Eigen::Vector3d::Zero();
  int count = 0;
  for (int trial = 0; trial < 200; ++trial) {
    for (std::size_t i = 0; i < rig.size(); ++i) {
      for (std::size_t j = i + 1; j < rig.size(); ++j) {
        const Point2 qa = project(rig[i], truth) + Point2(noise(rng), noise(rng));
        const Point2 qb = project(rig[j], truth) + Point2(noise(rng), noise(rng));
        const auto tri = triangulate_pair(rig[i], rig[j], qa, qb);
        CHECK(tri.residual > 0.0);
        CHECK((tri.point - truth).norm() < 0.1);
        mean_error += tri.point - truth;
        ++count;
      }
    }
  }
  CHECK((mean_error / count).norm() < 2e-3);
}

TEST_CASE("triangulate_median: consistency, robustness and ordering") {
  RigSpec spec;
  spec.num_views = 6;
  spec.distortion = {-0.1, 0.01, 0.0005, -0.0005};
  const Rig rig = make_rig(spec);
  const Point3 truth(0.4, 0.1, -0.2);
  std::vector<Point2> pts;
  for (const auto& cam : rig.cameras()) pts.push_back(project(cam, truth));
  CHECK((triangulate_median(rig, pts) - truth).norm() < 1e-8);

  SUBCASE("one corrupted view stays near the truth") {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> noise(0.0, 0.5);
    std::vector<Point2> noisy;
    for (const auto& p : pts) noisy.push_back(p + Point2(noise(rng), noise(rng)));
    const Point3 clean_est = triangulate_median(rig, noisy);
    noisy[2] += Point2(50.0, 0.0);
    const Point3 corrupted_est = triangulate_median(rig, noisy);
    // A single pair estimate from a 50 px offset lands ~0.5 world units away.
    CHECK((corrupted_est - truth).norm() < 0.05);
    CHECK((corrupted_est - clean_est).norm() < 0.05);
  }

  SUBCASE("missing views are skipped; too few raise") {
    std::vector<Point2> partial = pts;
    partial[0] = missing_point2();
    partial[3] = missing_point2();
    CHECK((triangulate_median(rig, partial) - truth).norm() < 1e-8);
    for (std::size_t i = 1; i < partial.size(); ++i) partial[i] = missing_point2();
    CHECK_THROWS_AS(triangulate_median(rig, partial), InsufficientViews);
  }

  SUBCASE("camera order does not matter") {
    std::mt19937_64 rng(19);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<Point2> noisy;
    for (const auto& p : pts) noisy.push_back(p + Point2(noise(rng), noise(rng)));
    std::vector<std::size_t> order(rig.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    const Point3 base = triangulate_median(rig, noisy);
    for (int k = 0; k < 5; ++k) {
      std::shuffle(order.begin(), order.end(), rng);
      std::vector<CameraModel> cams;
      std::vector<Point2> obs;
      for (auto i : order) {
        cams.push_back(rig[i]);
        obs.push_back(noisy[i]);
      }
      CHECK((triangulate_median(Rig(cams), obs) - base).norm() < 1e-12);
    }
  }

  SUBCASE("two views equal the pair result") {
    const Rig two({rig[0], rig[1]});
    std::vector<Point2> obs = {pts[0] + Point2(0.7, -0.3), pts[1] + Point2(-0.2, 0.4)};
    const Point3 med = triangulate_median(two, obs);
    const Point3 pair = triangulate_pair(rig[0], rig[1], obs[0], obs[1]).point;
    CHECK((med - pair).norm() == 0.0);
  }

  SUBCASE("stacked overload agrees") {
    Eigen::VectorXd row(2 * rig.size());
    for (std::size_t v = 0; v < rig.size(); ++v) row.segment<2>(2 * static_cast<Eigen::Index>(v)) = pts[v];
    CHECK((triangulate_median(rig, row) - truth).norm() < 1e-8);
  }
}

TEST_CASE("triangulation round trip on random rigs") {
  std::mt19937_64 rng(23);
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    std::vector<CameraModel> cams;
    for (int v = 0; v < 4; ++v) cams.push_back(oracle::random_camera(rng, 1.0, "c" + std::to_string(v)));
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    const Point3 truth(u(rng), u(rng), u(rng));
    const Rig rig(cams);
    std::vector<Point2> pts;
    for (const auto& cam : rig.cameras()) pts.push_back(project(cam, truth));
    worst = std::max(worst, (triangulate_median(rig, pts) - truth).norm());
  }
  CHECK(worst < 1e-8);
}

TEST_CASE("rotation helpers and validation") {
  const Eigen::Vector3d rvec(0.1, -0.4, 0.25);
  const Eigen::Matrix3d R = rodrigues_to_matrix(rvec);
  const Eigen::Matrix3d expected = Eigen::AngleAxisd(rvec.norm(), rvec.normalized()).toRotationMatrix();
  CHECK((R - expected).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(rodrigues_to_matrix(Eigen::Vector3d::Zero()).isIdentity());

  CameraModel bad = pinhole(100, 0, 0);
  bad.rotation(0, 0) = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CameraModel zero_focal = pinhole(0, 0, 0);
  CHECK_THROWS_AS(zero_focal.validate(), ConfigError);

  const CameraModel a = pinhole(100, 0, 0);
  CHECK_THROWS_AS(Rig({a}), ConfigError);
  CHECK_THROWS_AS(Rig({a, a}), ConfigError);

  const CameraModel look = look_at_camera("c", {0, -5, 0}, {0, 0, 0}, {0, 0, 1});
  CHECK_NOTHROW(look.validate());
  CHECK(look.to_camera(Point3::Zero()).head<2>().norm() < 1e-12);
  CHECK(look.to_camera(Point3::Zero()).z() == doctest::Approx(5.0));
}
