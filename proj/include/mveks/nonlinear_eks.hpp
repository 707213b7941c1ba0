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

#include <memory>

#include <Eigen/Core>

#include "mveks/camera.hpp"
#include "mveks/ensemble.hpp"
#include "mveks/linear_eks.hpp"
#include "mveks/ssm.hpp"

namespace mveks {

/// h(z) = [project(cam_1, z); ...; project(cam_V, z)] with the analytic
/// Jacobian. A view whose depth is not positive is reported invalid for that
/// evaluation instead of throwing.
class RigProjectionMap final : public ObservationMap {
 public:
  explicit RigProjectionMap(Rig rig) : rig_(std::move(rig)) {}

  Eigen::Index input_dim() const override { return 3; }
  Eigen::Index output_dim() const override { return static_cast<Eigen::Index>(2 * rig_.size()); }
  void evaluate(const Eigen::VectorXd& z, Eigen::VectorXd& value, Eigen::MatrixXd& jacobian,
                std::vector<char>& valid) const override;

  const Rig& rig() const { return rig_; }

 private:
  Rig rig_;
};

/// Stacked projections of a world point; NaN for views where it is behind the camera.
Eigen::VectorXd project_rig(const Rig& rig, const Point3& p);

/// Per-frame median-of-pairs triangulation of a T x 2V observation matrix.
/// Frames that cannot be triangulated are forward-filled from the last valid
/// frame; leading failures take the component-wise median of valid frames.
/// Throws InsufficientViews if no frame can be triangulated.
Eigen::MatrixXd triangulate_track(const Rig& rig, const Eigen::MatrixXd& obs);

/// Calibrated model: latent is the world position, observations are camera
/// projections, dynamics are a random walk with covariance s * E.
struct NonlinearObsModel {
  Rig rig;
  Eigen::Matrix3d E = Eigen::Matrix3d::Identity();
  double s = 1.0;
  Eigen::MatrixXd init_track;  ///< T x 3 triangulated initialization
  Eigen::Vector3d initial_mean = Eigen::Vector3d::Zero();
  Eigen::Matrix3d initial_cov = Eigen::Matrix3d::Identity();

  NonlinearGaussianModel to_state_space() const;
};

NonlinearObsModel fit_nonlinear_params(const Rig& rig, const Eigen::MatrixXd& obs);
NonlinearObsModel fit_nonlinear_params(const Rig& rig, const EnsembleSummary& summary);

SmoothingSearchResult optimize_smoothing(const NonlinearObsModel& model,
                                         const Eigen::MatrixXd& obs,
                                         const Eigen::MatrixXd& obs_var,
                                         const SmoothingSearchOptions& options = {});

/// Extended smoothing. `means` are projections of the smoothed 3D track and
/// `pred_vars` = diag(J P J^T) + D_t; `latent_means` is the T x 3 track.
SmoothedTrack smooth(const NonlinearObsModel& model, const Eigen::MatrixXd& obs,
                     const Eigen::MatrixXd& obs_var);

/// Linear model obtained by linearizing the rig projection at `anchor`:
/// W = J(anchor), mu = h(anchor) - J(anchor) anchor. The latent is the world
/// point, so E is in world units squared. Throws NonPositiveDepth if the
/// anchor is behind any camera.
LinearObsModel linearize_rig(const Rig& rig, const Point3& anchor, const Eigen::Matrix3d& E,
                             double s = 1.0);

/// Fit, optimize s and smooth in one call.
SmoothedTrack fit_and_smooth(const Rig& rig, const EnsembleSummary& summary,
                             const SmoothingSearchOptions& options = {});

}  // namespace mveks
