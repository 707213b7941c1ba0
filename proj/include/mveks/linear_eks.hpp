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

#include <vector>

#include <Eigen/Core>

#include "mveks/ensemble.hpp"
#include "mveks/ssm.hpp"

namespace mveks {

inline constexpr double kDefaultLowVarianceQuantile = 0.5;
inline constexpr double kInitialLatentVariance = 1e2;
inline constexpr double kBaseCovRegularization = 1e-8;

/// Principal components of row samples, eigenvalues in descending order.
struct PcaResult {
  Eigen::VectorXd mean;
  Eigen::MatrixXd components;  ///< columns are unit eigenvectors
  Eigen::VectorXd eigenvalues;

  /// Fraction of total variance captured by the first `d` components.
  double explained_ratio(Eigen::Index d) const;
};

PcaResult pca(const Eigen::MatrixXd& samples);

/// Indices of frames whose largest ensemble variance is at or below the
/// `quantile`-quantile of that per-frame maximum.
std::vector<Eigen::Index> low_variance_frames(const EnsembleSummary& summary, double quantile);

/// Observation model x_t ~ N(W z_t + mu, D_t) with latent random walk of
/// covariance s * E.
struct LinearObsModel {
  Eigen::MatrixXd W;
  Eigen::VectorXd mu;
  Eigen::MatrixXd E;
  double s = 1.0;
  Eigen::VectorXd initial_mean;
  Eigen::MatrixXd initial_cov;
  double explained_variance = 0.0;

  Eigen::Index latent_dim() const { return W.cols(); }
  LinearGaussianModel to_state_space() const;
};

/// PCA initialization on low-variance frames. E is the covariance of the
/// first differences of the projected frames (regularized by 1e-8 I); s = 1.
/// Throws InsufficientLowVarianceFrames if fewer than d + 2 frames qualify.
LinearObsModel fit_params(const EnsembleSummary& summary, Eigen::Index latent_dim,
                          double quantile = kDefaultLowVarianceQuantile);

/// Smallest d reaching `target` explained variance on the low-variance frames.
Eigen::Index choose_latent_dim(const EnsembleSummary& summary, double target = 0.99,
                               double quantile = kDefaultLowVarianceQuantile);

struct SmoothedTrack {
  Eigen::MatrixXd means;      ///< T x 2V posterior means in pixels
  Eigen::MatrixXd pred_vars;  ///< T x 2V posterior predictive variances
  Eigen::MatrixXd latent_means;
  std::vector<Eigen::MatrixXd> latent_covs;
  double loglik = 0.0;
  double s_selected = 0.0;
};

/// Maximizes the marginal likelihood over s starting from model.s.
SmoothingSearchResult optimize_smoothing(const LinearObsModel& model, const Eigen::MatrixXd& obs,
                                         const Eigen::MatrixXd& obs_var,
                                         const SmoothingSearchOptions& options = {});
double optimize_smoothing(const LinearObsModel& model, const EnsembleSummary& summary);

SmoothedTrack smooth(const LinearObsModel& model, const Eigen::MatrixXd& obs,
                     const Eigen::MatrixXd& obs_var);
SmoothedTrack smooth(const LinearObsModel& model, const EnsembleSummary& summary);

}  // namespace mveks
