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

#include <cmath>
#include <filesystem>
#include <set>
#include <tuple>

#include "doctest.h"
#include "mveks/calibration_io.hpp"
#include "mveks/csv_io.hpp"
#include "mveks/errors.hpp"
#include "mveks/nonlinear_eks.hpp"
#include "mveks/synth.hpp"

using namespace mveks;

namespace {

SynthConfig small_config() {
  SynthConfig cfg;
  cfg.seed = 11;
  cfg.num_frames = 500;
  cfg.num_keypoints = 2;
  cfg.num_members = 4;
  cfg.noise.sigma = {1.0, 2.0, 1.0, 0.5, 1.5, 1.0};
  cfg.noise.outlier_rate = 0.01;
  cfg.noise.confident_outlier_rate = 0.01;
  OcclusionWindow w;
  w.view = 1;
  w.start = 100;
  w.length = 20;
  w.bias = Eigen::Vector2d(15.0, -5.0);
  cfg.noise.occlusions.push_back(w);
  cfg.motion.sinusoid_amplitude = Eigen::Vector3d(0.3, 0.2, 0.1);
  return cfg;
}

double median_rmse(const SynthResult& r) {
  const auto sum = summarize(r.series[0]);
  return std::sqrt((sum.median - r.truth2d[0]).squaredNorm() / static_cast<double>(sum.median.size()));
}

}  // namespace

TEST_CASE("generate: tiny noise reproduces projections") {
  SynthConfig cfg;
  cfg.num_frames = 50;
  cfg.noise.sigma_default = 1e-12;
  const auto r = generate(cfg);
  REQUIRE(r.series.size() == 1);
  CHECK(r.ledger.empty());
  for (const auto& m : r.series[0].members) CHECK((m - r.truth2d[0]).cwiseAbs().maxCoeff() < 1e-9);
  for (Eigen::Index t = 0; t < 50; ++t) {
    const Eigen::VectorXd proj = project_rig(r.rig, Point3(r.truth3d[0].row(t).transpose()));
    CHECK((proj - r.truth2d[0].row(t).transpose()).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("generate: seed determinism") {
  const auto a = generate(small_config());
  const auto b = generate(small_config());
  for (std::size_t k = 0; k < a.series.size(); ++k) {
    CHECK(a.truth3d[k] == b.truth3d[k]);
    for (std::size_t m = 0; m < a.series[k].members.size(); ++m) {
      CHECK(a.series[k].members[m] == b.series[k].members[m]);
    }
  }
  CHECK(a.ledger.size() == b.ledger.size());
  SynthConfig other = small_config();
  other.seed = 12;
  CHECK(generate(other).truth3d[0] != a.truth3d[0]);
}

TEST_CASE("generate: member spread matches the configured sigma") {
  SynthConfig cfg;
  cfg.seed = 13;
  cfg.num_frames = 10000;
  cfg.num_members = 2;
  cfg.noise.sigma = {0.5, 1.0, 2.0, 3.0, 1.0, 4.0};
  const auto r = generate(cfg);
  for (Eigen::Index c = 0; c < 12; ++c) {
    const Eigen::VectorXd dev = r.series[0].members[0].col(c) - r.truth2d[0].col(c);
    const double sd = std::sqrt(dev.squaredNorm() / static_cast<double>(dev.size()));
    CHECK(sd == doctest::Approx(cfg.noise.sigma[static_cast<std::size_t>(c / 2)]).epsilon(0.05));
  }
}

TEST_CASE("generate: every large deviation is in the ledger") {
  const auto r = generate(small_config());
  std::set<std::tuple<long, int, int, int>> listed;
  long shared = 0;
  for (const auto& rec : r.ledger) {
    listed.insert({rec.frame, rec.keypoint, rec.view, rec.member});
    shared += rec.member < 0 ? 1 : 0;
  }
  CHECK(shared > 0);
  const auto& sigma = r.config.noise.sigma;
  long flagged = 0;
  for (int k = 0; k < 2; ++k) {
    for (int m = 0; m < 4; ++m) {
      const Eigen::MatrixXd dev = r.series[static_cast<std::size_t>(k)].members[static_cast<std::size_t>(m)] -
                                  r.truth2d[static_cast<std::size_t>(k)];
      for (Eigen::Index t = 0; t < dev.rows(); ++t) {
        for (int v = 0; v < 6; ++v) {
          const double limit = 6.0 * sigma[static_cast<std::size_t>(v)];
          if (std::abs(dev(t, 2 * v)) <= limit && std::abs(dev(t, 2 * v + 1)) <= limit) continue;
          ++flagged;
          CHECK((listed.count({t, k, v, m}) + listed.count({t, k, v, -1})) > 0);
        }
      }
    }
  }
  CHECK(flagged > 0);
}

TEST_CASE("generate: median error shrinks with ensemble size") {
  double prev = INFINITY;
  for (int m : {1, 3, 5}) {
    SynthConfig cfg;
    cfg.seed = 14;
    cfg.num_frames = 3000;
    cfg.num_members = m;
    const double e = median_rmse(generate(cfg));
    CHECK(e < prev);
    prev = e;
  }
}

TEST_CASE("synth config JSON round trip and validation") {
  SynthConfig cfg = small_config();
  cfg.rig.distortion.k1 = -0.2;
  cfg.motion.s_true = {0.5, 2.0};
  const auto back = synth_config_from_json(synth_config_to_json(cfg));
  CHECK(synth_config_to_json(back) == synth_config_to_json(cfg));
  CHECK(back.noise.occlusions.size() == 1);
  CHECK(back.rig.distortion.k1 == -0.2);

  SynthConfig bad = small_config();
  bad.noise.outlier_rate = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = small_config();
  bad.noise.sigma_default = 0.0;
  bad.noise.sigma.clear();
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = small_config();
  bad.motion.s_true = {1.0};
  CHECK_THROWS_AS(generate(bad), ConfigError);
}

TEST_CASE("write_synth emits ingestible files") {
  const auto r = generate(small_config());
  const auto dir = std::filesystem::temp_directory_path() / "mveks_test_write_synth";
  std::filesystem::remove_all(dir);
  write_synth(r, dir);
  CHECK(std::filesystem::exists(dir / "calibration.json"));
  CHECK(std::filesystem::exists(dir / "ledger.csv"));
  CHECK(std::filesystem::exists(dir / "truth3d.csv"));

  const auto series = load_prediction_dir(dir / "predictions", r.rig.names());
  REQUIRE(series.size() == 2);
  for (std::size_t k = 0; k < 2; ++k) {
    CHECK(series[k].keypoint == r.keypoints[k]);
    REQUIRE(series[k].members.size() == 4);
    for (std::size_t m = 0; m < 4; ++m) CHECK(series[k].members[m] == r.series[k].members[m]);
  }
  const Rig rig = load_calibration(dir / "calibration.json");
  CHECK(rig.names() == r.rig.names());
  CHECK(read_csv(dir / "ledger.csv").rows.size() == r.ledger.size());
  std::filesystem::remove_all(dir);
}
