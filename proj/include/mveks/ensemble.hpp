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

#include <string>
#include <vector>

#include <Eigen/Core>

namespace mveks {

/// Variance floor keeping observation covariances invertible (pixels^2).
inline constexpr double kVarianceFloor = 1e-6;
/// Variance assigned to cells with fewer than two valid ensemble members.
inline constexpr double kVarianceFloorMissing = 1e4;

/// Ensemble predictions for one keypoint.
///
/// `members[m]` is a T x 2V matrix for ensemble member m, columns interleaved
/// as [x_1, y_1, ..., x_V, y_V]. NaN marks a missing prediction.
struct EnsembleSeries {
  std::string keypoint;
  std::vector<std::string> view_names;
  std::vector<long> frame_index;
  std::vector<Eigen::MatrixXd> members;

  std::size_t num_frames() const { return frame_index.size(); }
  std::size_t num_views() const { return view_names.size(); }
  std::size_t num_members() const { return members.size(); }

  /// Throws ShapeMismatch / DataError if the invariants do not hold.
  void validate() const;
};

/// Ensemble median X, variance D and standard deviation, all T x 2V.
struct EnsembleSummary {
  Eigen::MatrixXd median;
  Eigen::MatrixXd variance;
  Eigen::MatrixXd esd;

  Eigen::Index num_frames() const { return median.rows(); }
  Eigen::Index num_views() const { return median.cols() / 2; }
};

/// Per-cell median and unbiased variance over the non-missing members.
///
/// Cells with a single valid member get kVarianceFloorMissing; all variances
/// are clamped below by kVarianceFloor. Throws EmptyEnsemble if a cell has no
/// valid member at all.
EnsembleSummary summarize(const EnsembleSeries& series);

/// Rebuilds esd = sqrt(variance) after the variance has been edited.
void refresh_esd(EnsembleSummary& summary);

using BoolMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// T x V mask, true where max(esd_x, esd_y) of the view exceeds `threshold`.
BoolMatrix esd_filter_mask(const EnsembleSummary& summary, double threshold);

}  // namespace mveks
