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

#include <optional>
#include <vector>

#include <Eigen/Core>

#include "mveks/camera.hpp"
#include "mveks/linear_eks.hpp"

namespace mveks {

/// How the x and y standard deviations of one keypoint-view combine.
enum class EsdPooling { kMax, kMean };

struct ErrorCurve {
  std::vector<double> thresholds;
  /// Mean pixel error over entries with e.s.d. above the threshold; empty
  /// strata are absent.
  std::vector<std::optional<double>> mean_error;
  std::vector<double> fraction_included;
  std::vector<long> count;
};

/// T x V Euclidean pixel errors of T x 2V matrices; NaN where either side is missing.
Eigen::MatrixXd pixel_error(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth);

/// Mean of the finite entries of pixel_error.
double mean_pixel_error(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth);

/// Pixel error stratified by ensemble standard deviation. Each argument holds
/// one T x 2V matrix per keypoint. Thresholds must be non-negative and strictly
/// ascending (ConfigError); shapes must agree (ShapeMismatch).
ErrorCurve error_vs_esd(const std::vector<Eigen::MatrixXd>& pred,
                        const std::vector<Eigen::MatrixXd>& truth,
                        const std::vector<Eigen::MatrixXd>& esd,
                        const std::vector<double>& thresholds,
                        EsdPooling pooling = EsdPooling::kMax);
ErrorCurve error_vs_esd(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth,
                        const Eigen::MatrixXd& esd, const std::vector<double>& thresholds,
                        EsdPooling pooling = EsdPooling::kMax);

/// Triangulates one stacked 2V row, reprojects it and returns the mean pixel
/// residual over the observed views. Throws InsufficientViews.
double reprojection_error_3d(const Rig& rig, const Eigen::VectorXd& row);

/// Uncalibrated variant: least-squares fit of the observed coordinates in the
/// span of the first `dim` principal components, mean per-view residual.
double reprojection_error_pca(const PcaResult& pca, const Eigen::VectorXd& row, Eigen::Index dim = 3);

/// Per-frame versions over a T x 2V matrix; frames that cannot be evaluated are NaN.
Eigen::VectorXd reprojection_error_3d(const Rig& rig, const Eigen::MatrixXd& obs);
Eigen::VectorXd reprojection_error_pca(const PcaResult& pca, const Eigen::MatrixXd& obs,
                                       Eigen::Index dim = 3);

}  // namespace mveks
