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

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"
#include "mveks/camera.hpp"
#include "mveks/ensemble.hpp"

namespace mveks {

enum class RigLayout {
  kRing,        ///< cameras on a horizontal circle, optionally elevated
  kOctahedron,  ///< six cameras on the +-x, +-y, +-z axes
};

struct RigSpec {
  int num_views = 6;
  RigLayout layout = RigLayout::kRing;
  double distance = 10.0;      ///< camera distance from the origin
  double elevation = 0.35;     ///< radians above the horizontal plane (ring)
  double azimuth_span = 0.0;   ///< arc covered by the ring; 0 means a full circle
  double focal = 600.0;
  int width = 640;
  int height = 480;
  Distortion distortion;
};

Rig make_rig(const RigSpec& spec);

struct MotionSpec {
  /// Random-walk scale per keypoint. Empty: every keypoint uses `s_default`.
  std::vector<double> s_true;
  double s_default = 1.0;
  Eigen::Matrix3d E = 1e-4 * Eigen::Matrix3d::Identity();
  /// Per-axis amplitude of an added sinusoid (world units); zero disables it.
  Eigen::Vector3d sinusoid_amplitude = Eigen::Vector3d::Zero();
  double sinusoid_period = 60.0;  ///< frames
  /// Keypoints start at center + a uniform offset in [-spread, spread]^3.
  double keypoint_spread = 0.5;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
};

/// Shared bias added to every member of one view over a frame window.
struct OcclusionWindow {
  int view = 0;
  int keypoint = -1;  ///< -1 applies to every keypoint
  long start = 0;
  long length = 0;
  Eigen::Vector2d bias = Eigen::Vector2d::Zero();
};

struct NoiseSpec {
  /// Per-view member noise standard deviation (pixels). Empty: `sigma_default`.
  std::vector<double> sigma;
  double sigma_default = 1.0;
  /// Probability that a member's (x, y) at one view and frame is replaced by a
  /// uniform draw over the image.
  double outlier_rate = 0.0;
  /// Probability per keypoint and frame that one random view receives a bias
  /// shared by all members (a confident mistake).
  double confident_outlier_rate = 0.0;
  double confident_outlier_magnitude = 50.0;
  std::vector<OcclusionWindow> occlusions;
};

struct SynthConfig {
  std::uint64_t seed = 0;
  long num_frames = 1000;
  int num_keypoints = 1;
  int num_members = 3;
  RigSpec rig;
  MotionSpec motion;
  NoiseSpec noise;

  /// Throws ConfigError on out-of-range values.
  void validate() const;
};

SynthConfig synth_config_from_json(const nlohmann::json& doc);
nlohmann::json synth_config_to_json(const SynthConfig& config);

enum class CorruptionKind { kOutlier, kConfident, kOcclusion };

std::string to_string(CorruptionKind kind);

struct CorruptionRecord {
  long frame = 0;  ///< row index into the series
  int keypoint = 0;
  int view = 0;
  int member = -1;  ///< -1: shared by every member
  CorruptionKind kind = CorruptionKind::kOutlier;
  Eigen::Vector2d offset = Eigen::Vector2d::Zero();  ///< corrupted minus clean projection
};

struct SynthResult {
  SynthConfig config;
  Rig rig;
  std::vector<std::string> keypoints;
  std::vector<Eigen::MatrixXd> truth3d;  ///< per keypoint, T x 3
  std::vector<Eigen::MatrixXd> truth2d;  ///< per keypoint, T x 2V
  std::vector<EnsembleSeries> series;    ///< per keypoint
  std::vector<CorruptionRecord> ledger;

  /// T x K mask of (frame, keypoint) cells touched by any corruption.
  BoolMatrix corrupted_cells() const;
  /// Length-T mask of frames with at least one corrupted keypoint.
  std::vector<char> corrupted_frames() const;
};

/// Deterministic in `config.seed`.
SynthResult generate(const SynthConfig& config);

/// Writes the on-disk layout consumed by the CLI:
///   calibration.json, predictions/model_<m>/<view>.csv, truth/<view>.csv,
///   truth3d.csv, ledger.csv and synth_config.json.
void write_synth(const SynthResult& result, const std::filesystem::path& out_dir);

}  // namespace mveks
