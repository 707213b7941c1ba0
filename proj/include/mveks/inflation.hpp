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

#include "mveks/ensemble.hpp"
#include "mveks/linear_eks.hpp"
#include "mveks/nonlinear_eks.hpp"

namespace mveks {

/// Which observations form the latent posterior used to predict view v.
enum class PosteriorScope {
  kLeaveOneOut,  ///< all views except v
  kAllViews,     ///< every view, including v
};

struct LatentPosterior {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

/// Posterior of z under x ~ N(W z + mu, diag(var)) and a flat prior:
/// B = (W^T D^-1 W)^-1, mean = B W^T D^-1 (x - mu). Rows with a missing x are
/// dropped. Throws RankDeficient when fewer rows than latent dimensions remain
/// or W^T D^-1 W stays singular after a 1e-10 jitter.
LatentPosterior latent_posterior_uninformative(const Eigen::MatrixXd& W,
                                               const Eigen::VectorXd& var,
                                               const Eigen::VectorXd& x,
                                               const Eigen::VectorXd& mu);

/// Mahalanobis distance of view v's observation from its prediction by the
/// linear model: r^T Q^-1 r with r = x^v - (W^v mean + mu^v) and
/// Q = D^v + W^v B (W^v)^T.
double mahalanobis_view(const Eigen::MatrixXd& W, const Eigen::VectorXd& var,
                        const Eigen::VectorXd& x, const Eigen::VectorXd& mu, Eigen::Index view,
                        PosteriorScope scope = PosteriorScope::kLeaveOneOut);

struct InflationOptions {
  double threshold = 5.0;
  double factor = 2.0;
  int max_doublings = 30;
  PosteriorScope scope = PosteriorScope::kLeaveOneOut;
};

struct InflationReport {
  Eigen::MatrixXd inflated_vars;  ///< T x 2V
  Eigen::MatrixXi n_doublings;    ///< T x V
  Eigen::MatrixXd final_distance; ///< T x V, NaN where no distance could be formed
  double threshold = 5.0;
  int max_doublings = 30;

  /// Frames with at least one inflated view.
  std::vector<Eigen::Index> inflated_frames() const;
};

/// Iteratively multiplies a view's variances by `factor` while its distance
/// exceeds `threshold`. With exactly two views a breach inflates both.
/// When the leave-one-out posterior is rank deficient (e.g. two views with a
/// 3D latent) the all-views posterior is used for that view instead.
InflationReport inflate(const Eigen::MatrixXd& obs, const Eigen::MatrixXd& obs_var,
                        const LinearObsModel& model, const InflationOptions& options = {});
InflationReport inflate(const EnsembleSummary& summary, const LinearObsModel& model,
                        const InflationOptions& options = {});

/// Calibrated variant: the latent is estimated per view by weighted
/// Gauss-Newton over the remaining views and W^v is the projection Jacobian.
InflationReport inflate(const Eigen::MatrixXd& obs, const Eigen::MatrixXd& obs_var,
                        const NonlinearObsModel& model, const InflationOptions& options = {});
InflationReport inflate(const EnsembleSummary& summary, const NonlinearObsModel& model,
                        const InflationOptions& options = {});

}  // namespace mveks
