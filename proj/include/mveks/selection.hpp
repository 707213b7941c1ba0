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

#include "mveks/csv_io.hpp"

namespace mveks {

struct FrameScore {
  std::string video;
  long frame = 0;
  double sigma2_max = 0.0;  ///< largest variance over keypoints, views and coordinates
};

/// The `n_f` frames with the smallest sigma2_max; ties go to the smaller
/// (video, frame). Throws ConfigError if n_f < 1.
std::vector<FrameScore> quality_filter(std::vector<FrameScore> scores, std::size_t n_f);

struct KMeansOptions {
  int max_iterations = 300;
  double tolerance = 1e-6;  ///< stop once no center moves farther than this
  std::uint64_t seed = 0;
};

struct KMeansResult {
  Eigen::MatrixXd centers;  ///< k x dim
  std::vector<int> labels;  ///< per input row
  int iterations = 0;
};

/// Lloyd's algorithm with k-means++ seeding. A cluster that empties keeps its
/// previous center.
KMeansResult kmeans(const Eigen::MatrixXd& points, int k, const KMeansOptions& options = {});

/// Subtracts, per frame, the median over keypoints of each axis from a
/// [X_0, Y_0, Z_0, X_1, ...] pose row.
Eigen::MatrixXd center_poses(const Eigen::MatrixXd& poses, int axes = 3);

struct SelectedFrame {
  std::string video;
  long frame = 0;
  int cluster = -1;
  double sigma2_max = 0.0;
};

/// k-means on `poses` (one row per entry of `frames`) with n_v clusters; from
/// each non-empty cluster the member closest to its center is kept. Output is
/// ordered by cluster. Throws TooFewFrames if frames.size() < n_v.
std::vector<SelectedFrame> diversity_select(const std::vector<FrameScore>& frames,
                                            const Eigen::MatrixXd& poses, int n_v,
                                            std::uint64_t seed = 0);

/// Baseline: n_v frames drawn uniformly without replacement, in frame order.
std::vector<SelectedFrame> random_select(const std::vector<FrameScore>& frames, int n_v,
                                         std::uint64_t seed = 0);

/// Quality filter over all videos followed by per-video diversity selection.
/// `poses` rows align with `scores`.
std::vector<SelectedFrame> select_frames(const std::vector<FrameScore>& scores,
                                         const Eigen::MatrixXd& poses, std::size_t n_f, int n_v,
                                         std::uint64_t seed = 0);

/// Smoother outputs at the selected frames, ready to be merged with labels.
struct PseudoLabelSet {
  std::vector<std::string> views;
  std::vector<std::string> keypoints;
  std::string source = "eks";  ///< "eks" or "ensemble_median"
  std::vector<SelectedFrame> frames;
  std::vector<Eigen::MatrixXd> coords;  ///< per view, frames.size() x 2K
};

/// Gathers pseudo-labels for `selected` from per-keypoint T x 2V tracks whose
/// rows follow `frame_index`. Throws DataError if a selected frame is absent.
PseudoLabelSet gather_pseudolabels(const std::vector<SelectedFrame>& selected,
                                   const std::vector<long>& frame_index,
                                   const std::vector<Eigen::MatrixXd>& tracks,
                                   const std::vector<std::string>& views,
                                   const std::vector<std::string>& keypoints,
                                   const std::string& source = "eks");

/// Per-view label tables: ground truth rows (provenance "label") followed by
/// pseudo-label rows (provenance "pseudo"). `ground_truth` is either empty or
/// holds one table per view. Throws CollisionError on a repeated
/// (video, frame).
std::vector<KeypointTable> combine_labels(const PseudoLabelSet& pseudo,
                                          const std::vector<KeypointTable>& ground_truth = {});

/// Writes `<dir>/<view>.csv` for each table.
void write_label_dir(const std::vector<KeypointTable>& tables,
                     const std::vector<std::string>& views, const std::filesystem::path& dir);

/// One JSON object per line: video, frame, cluster, sigma2_max.
void write_selection_manifest(const std::vector<SelectedFrame>& selected,
                              const std::filesystem::path& path);
std::vector<SelectedFrame> read_selection_manifest(const std::filesystem::path& path);

}  // namespace mveks
