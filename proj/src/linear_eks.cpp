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

#include "mveks/linear_eks.hpp"

#include <algorithm>

#include <Eigen/Eigenvalues>

#include "mveks/errors.hpp"
#include "stats_util.hpp"

namespace mveks {

double PcaResult::explained_ratio(Eigen::Index d) const {
  const double total = eigenvalues.sum();
  if (!(total > 0.0)) return 1.0;
  d = std::clamp<Eigen::Index>(d, 0, eigenvalues.size());
  return eigenvalues.head(d).sum() / total;
}

PcaResult pca(const Eigen::MatrixXd& samples) {
  if (samples.rows() < 2) throw DataError("PCA needs at least two samples");
  PcaResult out;
  out.mean = samples.colwise().mean().transpose();
  const Eigen::MatrixXd centered = samples.rowwise() - out.mean.transpose();
  const Eigen::MatrixXd cov =
      (centered.transpose() * centered) / static_cast<double>(samples.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw NumericalFailure("PCA eigendecomposition failed");
  const Eigen::Index n = cov.rows();
  out.eigenvalues = eig.eigenvalues().reverse().cwiseMax(0.0);
  out.components = eig.eigenvectors().rowwise().reverse();
  // Fix the sign so the largest-magnitude entry of each component is positive.
  for (Eigen::Index j = 0; j < n; ++j) {
    Eigen::Index arg = 0;
    out.components.col(j).cwiseAbs().maxCoeff(&arg);
    if (out.components(arg, j) < 0.0) out.components.col(j) *= -1.0;
  }
  return out;
}

std::vector<Eigen::Index> low_variance_frames(const EnsembleSummary& summary, double quantile) {
  if (!(quantile > 0.0 && quantile <= 1.0)) throw ConfigError("quantile must lie in (0, 1]");
  const Eigen::VectorXd frame_max = summary.variance.rowwise().maxCoeff();
  std::vector<double> values(frame_max.data(), frame_max.data() + frame_max.size());
  const double cutoff = detail::quantile_inplace(values, quantile);
  std::vector<Eigen::Index> out;
  for (Eigen::Index t = 0; t < frame_max.size(); ++t) {
    if (frame_max(t) <= cutoff) out.push_back(t);
  }
  return out;
}

LinearGaussianModel LinearObsModel::to_state_space() const {
  LinearGaussianModel m;
  m.initial_mean = initial_mean;
  m.initial_cov = initial_cov;
  m.dynamics_cov = s * E;
  m.obs_map = W;
  m.obs_offset = mu;
  return m;
}

namespace {

PcaResult pca_on_frames(const EnsembleSummary& summary, const std::vector<Eigen::Index>& frames) {
  Eigen::MatrixXd rows(static_cast<Eigen::Index>(frames.size()), summary.median.cols());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    rows.row(static_cast<Eigen::Index>(i)) = summary.median.row(frames[i]);
  }
  return pca(rows);
}

}  // namespace

LinearObsModel fit_params(const EnsembleSummary& summary, Eigen::Index latent_dim, double quantile) {
  const Eigen::Index n = summary.median.cols();
  const Eigen::Index T = summary.median.rows();
  if (latent_dim < 1 || latent_dim > n) {
    throw ConfigError("latent dimension must lie in [1, 2V]");
  }
  if (T < latent_dim + 2) {
    throw InsufficientLowVarianceFrames("need at least d + 2 frames to fit the linear model");
  }
  if (!summary.median.allFinite()) {
    throw DataError("ensemble median contains missing values; cannot fit PCA");
  }
  const std::vector<Eigen::Index> frames = low_variance_frames(summary, quantile);
  if (static_cast<Eigen::Index>(frames.size()) < latent_dim + 2) {
    throw InsufficientLowVarianceFrames("only " + std::to_string(frames.size()) +
                                        " frames pass the low-variance filter; need d + 2");
  }
  const PcaResult p = pca_on_frames(summary, frames);

  LinearObsModel model;
  model.W = p.components.leftCols(latent_dim);
  model.mu = p.mean;
  model.explained_variance = p.explained_ratio(latent_dim);

  const Eigen::MatrixXd latent =
      (summary.median.rowwise() - model.mu.transpose()) * model.W;  // T x d
  const Eigen::MatrixXd diffs = latent.bottomRows(T - 1) - latent.topRows(T - 1);
  const Eigen::RowVectorXd diff_mean = diffs.colwise().mean();
  const Eigen::MatrixXd centered = diffs.rowwise() - diff_mean;
  const double denom = std::max<double>(1.0, static_cast<double>(diffs.rows() - 1));
  model.E = centered.transpose() * centered / denom +
            kBaseCovRegularization * Eigen::MatrixXd::Identity(latent_dim, latent_dim);
  model.s = 1.0;
  model.initial_mean = latent.row(0).transpose();
  model.initial_cov = kInitialLatentVariance * Eigen::MatrixXd::Identity(latent_dim, latent_dim);
  return model;
}

Eigen::Index choose_latent_dim(const EnsembleSummary& summary, double target, double quantile) {
  const std::vector<Eigen::Index> frames = low_variance_frames(summary, quantile);
  if (frames.size() < 2) throw InsufficientLowVarianceFrames("too few frames for PCA");
  const PcaResult p = pca_on_frames(summary, frames);
  for (Eigen::Index d = 1; d <= p.eigenvalues.size(); ++d) {
    if (p.explained_ratio(d) >= target) return d;
  }
  return p.eigenvalues.size();
}

SmoothingSearchResult optimize_smoothing(const LinearObsModel& model, const Eigen::MatrixXd& obs,
                                         const Eigen::MatrixXd& obs_var,
                                         const SmoothingSearchOptions& options) {
  LinearGaussianModel ssm = model.to_state_space();
  auto loglik = [&](double s) {
    ssm.dynamics_cov = s * model.E;
    return kalman_log_likelihood(ssm, obs, obs_var);
  };
  return maximize_smoothing(loglik, model.s, options);
}

double optimize_smoothing(const LinearObsModel& model, const EnsembleSummary& summary) {
  return optimize_smoothing(model, summary.median, summary.variance).s;
}

SmoothedTrack smooth(const LinearObsModel& model, const Eigen::MatrixXd& obs,
                     const Eigen::MatrixXd& obs_var) {
  if (!(model.s > 0.0)) throw ConfigError("smoothing parameter must be positive");
  const PosteriorTrack post = kalman_smooth(model.to_state_space(), obs, obs_var);
  const auto T = static_cast<Eigen::Index>(post.smoothed_means.size());
  SmoothedTrack out;
  out.latent_means = post.smoothed_mean_matrix();
  out.latent_covs = post.smoothed_covs;
  out.means = (out.latent_means * model.W.transpose()).rowwise() + model.mu.transpose();
  out.pred_vars.resize(T, model.W.rows());
  for (Eigen::Index t = 0; t < T; ++t) {
    const Eigen::MatrixXd& P = post.smoothed_covs[static_cast<std::size_t>(t)];
    out.pred_vars.row(t) =
        ((model.W * P).cwiseProduct(model.W)).rowwise().sum().transpose() + obs_var.row(t);
  }
  out.loglik = post.log_likelihood;
  out.s_selected = model.s;
  return out;
}

SmoothedTrack smooth(const LinearObsModel& model, const EnsembleSummary& summary) {
  return smooth(model, summary.median, summary.variance);
}

}  // namespace mveks
