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
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"
#include "mveks/camera.hpp"
#include "mveks/ensemble.hpp"
#include "mveks/inflation.hpp"
#include "mveks/linear_eks.hpp"
#include "mveks/metrics.hpp"
#include "mveks/selection.hpp"

namespace mveks {

inline constexpr const char* kVersion = "0.1.0";

/// Environment variable consulted when RunConfig::jobs is 0.
inline constexpr const char* kJobsEnvVar = "MVEKS_JOBS";

enum class SmoothMode { kLinear, kNonlinear, kAuto };
enum class ScoreSource { kPosterior, kEnsemble };
enum class PoseSource { kTriangulate, kPca };
enum class SelectionStrategy { kTargeted, kRandom };

std::string to_string(SmoothMode mode);
std::string to_string(ScoreSource source);
std::string to_string(PoseSource source);
std::string to_string(SelectionStrategy strategy);
std::string to_string(PosteriorScope scope);

struct SelectionConfig {
  std::size_t n_f = 450;
  int n_v = 25;
  ScoreSource score = ScoreSource::kPosterior;
  PoseSource pose3d = PoseSource::kTriangulate;
  SelectionStrategy strategy = SelectionStrategy::kTargeted;
  bool center_poses = true;
  std::uint64_t seed = 0;
};

struct RunConfig {
  std::filesystem::path input_dir;    ///< holds <model>/<view>.csv
  std::filesystem::path calibration;  ///< empty when uncalibrated
  std::vector<std::string> views;     ///< empty: sorted CSV stems
  std::filesystem::path output_dir = "mveks_out";
  std::string video = "video0";

  SmoothMode mode = SmoothMode::kAuto;
  int latent_dim = 0;  ///< 0: smallest d reaching variance_target
  double variance_target = 0.99;
  double low_variance_quantile = kDefaultLowVarianceQuantile;

  bool inflation = true;
  InflationOptions inflation_options;

  bool optimize_smoothing = true;
  double fixed_s = 1.0;
  SmoothingSearchOptions search;

  SelectionConfig selection;
  std::uint64_t seed = 0;
  int jobs = 0;  ///< 0: MVEKS_JOBS or the hardware thread count

  /// Throws ConfigError on invalid combinations or values.
  void validate() const;
  /// Worker count after consulting the environment.
  int resolved_jobs() const;
};

/// Reads the keys written by run_config_to_json; missing keys keep the values
/// of `base`.
RunConfig run_config_from_json(const nlohmann::json& doc, RunConfig base = {});
nlohmann::json run_config_to_json(const RunConfig& config);
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});

struct KeypointResult {
  std::string keypoint;
  EnsembleSummary summary;
  Eigen::MatrixXd obs_var;  ///< variances given to the smoother
  std::optional<InflationReport> inflation;
  SmoothedTrack track;
  Eigen::Index latent_dim = 0;
  double explained_variance = 0.0;
  double s = 1.0;
  double initial_loglik = 0.0;
  int iterations = 0;
  bool converged = false;
};

struct SmoothRun {
  RunConfig config;
  SmoothMode mode = SmoothMode::kLinear;  ///< resolved mode
  std::vector<std::string> views;
  std::vector<std::string> keypoints;
  std::vector<long> frames;
  std::optional<Rig> rig;
  std::vector<KeypointResult> results;
};

/// Reorders `rig` to follow `views`. Throws ConfigError if a view has no camera.
Rig align_rig(const Rig& rig, const std::vector<std::string>& views);

/// summarize -> fit -> inflate -> optimize s -> smooth for every keypoint,
/// keypoints spread over config.resolved_jobs() threads.
SmoothRun smooth_ensembles(const std::vector<EnsembleSeries>& series, const std::optional<Rig>& rig,
                           const RunConfig& config);

/// Loads config.input_dir (and calibration) and calls smooth_ensembles.
SmoothRun run_smooth(const RunConfig& config);

/// Inflation only, for the report subcommand.
SmoothRun run_inflation_report(const RunConfig& config);

nlohmann::json smooth_manifest(const SmoothRun& run);

/// Writes <view>.csv, ensemble/<view>.csv, 3d/<kp>.csv (nonlinear),
/// inflation_report.csv and manifest.json.
void write_smooth_outputs(const SmoothRun& run, const std::filesystem::path& dir);
void write_inflation_report(const SmoothRun& run, const std::filesystem::path& path);

/// Smoother output read back from disk.
struct TrackSet {
  std::vector<std::string> views;
  std::vector<std::string> keypoints;
  std::vector<long> frames;
  std::vector<Eigen::MatrixXd> means;     ///< per keypoint, T x 2V
  std::vector<Eigen::MatrixXd> variance;  ///< per keypoint, T x 2V; empty if unknown
};

/// Reads per-view keypoint CSVs from `dir` (postvar columns become `variance`).
TrackSet read_track_dir(const std::filesystem::path& dir, const std::vector<std::string>& views);
/// Reads the ensemble/ directory written by write_smooth_outputs: medians and
/// raw ensemble variances.
TrackSet read_ensemble_dir(const std::filesystem::path& dir, const std::vector<std::string>& views);
TrackSet track_set_from_run(const SmoothRun& run);

struct SelectionResult {
  std::vector<FrameScore> scores;
  std::vector<SelectedFrame> selected;
  PseudoLabelSet labels;
};

/// Scores every frame by its largest variance in `scored`, builds pose
/// vectors (triangulated when `rig` is given and pose3d is kTriangulate, PCA
/// otherwise) and selects frames. Pseudo-labels come from `tracks.means`.
SelectionResult select_pseudolabels(const TrackSet& tracks, const TrackSet& scored,
                                    const std::optional<Rig>& rig, const SelectionConfig& config,
                                    const std::string& video = "video0");

/// Per-frame pose rows [X_0, Y_0, Z_0, X_1, ...].
Eigen::MatrixXd poses_from_tracks(const TrackSet& tracks, const std::optional<Rig>& rig,
                                  PoseSource source);

struct EvaluationOptions {
  std::vector<double> thresholds = {0, 2, 4, 6, 8, 10, 12, 14, 16, 18, 20};
  EsdPooling pooling = EsdPooling::kMax;
};

/// Metrics JSON: overall / per-view / per-keypoint mean pixel error, the
/// error-vs-e.s.d. curve when `esd` is given, and mean reprojection error when
/// `rig` is given.
nlohmann::json evaluate_tracks(const TrackSet& pred, const TrackSet& truth,
                               const std::optional<TrackSet>& esd, const std::optional<Rig>& rig,
                               const EvaluationOptions& options = {});

}  // namespace mveks
