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

#include "mveks/nonlinear_eks.hpp"

#include "mveks/errors.hpp"
#include "stats_util.hpp"

namespace mveks {

void RigProjectionMap::evaluate(const Eigen::VectorXd& z, Eigen::VectorXd& value,
                                Eigen::MatrixXd& jacobian, std::vector<char>& valid) const {
  const Eigen::Index n = output_dim();
  value.resize(n);
  jacobian.resize(n, 3);
  valid.assign(static_cast<std::size_t>(n), 1);
  const Point3 p = z.head<3>();
  for (std::size_t v = 0; v < rig_.size(); ++v) {
    const auto row = static_cast<Eigen::Index>(2 * v);
    try {
      const ProjectionWithJacobian pj = project_with_jacobian(rig_[v], p);
      value.segment<2>(row) = pj.pixel;
      jacobian.middleRows<2>(row) = pj.jacobian;
    } catch (const NonPositiveDepth&) {
      value.segment<2>(row).setConstant(kMissing);
      jacobian.middleRows<2>(row).setZero();
      valid[static_cast<std::size_t>(row)] = 0;
      valid[static_cast<std::size_t>(row + 1)] = 0;
    }
  }
}

Eigen::VectorXd project_rig(const Rig& rig, const Point3& p) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(2 * rig.size()));
  for (std::size_t v = 0; v < rig.size(); ++v) {
    try {
      out.segment<2>(static_cast<Eigen::Index>(2 * v)) = project(rig[v], p);
    } catch (const NonPositiveDepth&) {
      out.segment<2>(static_cast<Eigen::Index>(2 * v)).setConstant(kMissing);
    }
  }
  return out;
}

Eigen::MatrixXd triangulate_track(const Rig& rig, const Eigen::MatrixXd& obs) {
  const Eigen::Index T = obs.rows();
  Eigen::MatrixXd track(T, 3);
  std::vector<char> ok(static_cast<std::size_t>(T), 0);
  for (Eigen::Index t = 0; t < T; ++t) {
    try {
      track.row(t) = triangulate_median(rig, obs.row(t).transpose()).transpose();
      ok[static_cast<std::size_t>(t)] = track.row(t).allFinite();
    } catch (const InsufficientViews&) {
    } catch (const DegenerateGeometry&) {
    }
  }
  std::vector<double> xs, ys, zs;
  for (Eigen::Index t = 0; t < T; ++t) {
    if (!ok[static_cast<std::size_t>(t)]) continue;
    xs.push_back(track(t, 0));
    ys.push_back(track(t, 1));
    zs.push_back(track(t, 2));
  }
  if (xs.empty()) throw InsufficientViews("no frame could be triangulated");
  Eigen::RowVector3d fill(detail::median_inplace(xs), detail::median_inplace(ys),
                          detail::median_inplace(zs));
  for (Eigen::Index t = 0; t < T; ++t) {
    if (ok[static_cast<std::size_t>(t)]) {
      fill = track.row(t);
    } else {
      track.row(t) = fill;
    }
  }
  return track;
}

NonlinearGaussianModel NonlinearObsModel::to_state_space() const {
  NonlinearGaussianModel m;
  m.initial_mean = initial_mean;
  m.initial_cov = initial_cov;
  m.dynamics_cov = s * E;
  m.obs_map = std::make_shared<RigProjectionMap>(rig);
  return m;
}

NonlinearObsModel fit_nonlinear_params(const Rig& rig, const Eigen::MatrixXd& obs) {
  rig.validate();
  if (obs.cols() != static_cast<Eigen::Index>(2 * rig.size())) {
    throw ShapeMismatch("observations must have 2V columns matching the rig");
  }
  NonlinearObsModel model;
  model.rig = rig;
  model.init_track = triangulate_track(rig, obs);
  const Eigen::Index T = obs.rows();
  const Eigen::Matrix3d reg = kBaseCovRegularization * Eigen::Matrix3d::Identity();
  if (T >= 2) {
    const Eigen::MatrixXd diffs = model.init_track.bottomRows(T - 1) - model.init_track.topRows(T - 1);
    const Eigen::MatrixXd centered = diffs.rowwise() - diffs.colwise().mean();
    const double denom = std::max<double>(1.0, static_cast<double>(diffs.rows() - 1));
    model.E = centered.transpose() * centered / denom + reg;
  } else {
    model.E = reg;
  }
  model.s = 1.0;
  model.initial_mean = model.init_track.row(0).transpose();
  const Eigen::MatrixXd centered = model.init_track.rowwise() - model.init_track.colwise().mean();
  const Eigen::Matrix3d spread =
      T >= 2 ? Eigen::Matrix3d(centered.transpose() * centered / static_cast<double>(T - 1))
             : Eigen::Matrix3d::Zero();
  model.initial_cov = spread + model.E;
  return model;
}

NonlinearObsModel fit_nonlinear_params(const Rig& rig, const EnsembleSummary& summary) {
  return fit_nonlinear_params(rig, summary.median);
}

SmoothingSearchResult optimize_smoothing(const NonlinearObsModel& model,
                                         const Eigen::MatrixXd& obs,
                                         const Eigen::MatrixXd& obs_var,
                                         const SmoothingSearchOptions& options) {
  NonlinearGaussianModel ssm = model.to_state_space();
  auto loglik = [&](double s) {
    ssm.dynamics_cov = s * model.E;
    return extended_kalman_log_likelihood(ssm, obs, obs_var);
  };
  return maximize_smoothing(loglik, model.s, options);
}

SmoothedTrack smooth(const NonlinearObsModel& model, const Eigen::MatrixXd& obs,
                     const Eigen::MatrixXd& obs_var) {
  if (!(model.s > 0.0)) throw ConfigError("smoothing parameter must be positive");
  const NonlinearGaussianModel ssm = model.to_state_space();
  const PosteriorTrack post = extended_kalman_smooth(ssm, obs, obs_var);
  const auto T = static_cast<Eigen::Index>(post.smoothed_means.size());
  const Eigen::Index n = ssm.obs_map->output_dim();

  SmoothedTrack out;
  out.latent_means = post.smoothed_mean_matrix();
  out.latent_covs = post.smoothed_covs;
  out.means.resize(T, n);
  out.pred_vars.resize(T, n);
  Eigen::VectorXd value;
  Eigen::MatrixXd jac;
  std::vector<char> valid;
  for (Eigen::Index t = 0; t < T; ++t) {
    ssm.obs_map->evaluate(post.smoothed_means[static_cast<std::size_t>(t)], value, jac, valid);
    const Eigen::MatrixXd& P = post.smoothed_covs[static_cast<std::size_t>(t)];
    const Eigen::VectorXd spread = (jac * P).cwiseProduct(jac).rowwise().sum();
    for (Eigen::Index i = 0; i < n; ++i) {
      const bool ok = valid[static_cast<std::size_t>(i)];
      out.means(t, i) = ok ? value(i) : kMissing;
      out.pred_vars(t, i) = ok ? spread(i) + obs_var(t, i) : kMissing;
    }
  }
  out.loglik = post.log_likelihood;
  out.s_selected = model.s;
  return out;
}

SmoothedTrack fit_and_smooth(const Rig& rig, const EnsembleSummary& summary,
                             const SmoothingSearchOptions& options) {
  NonlinearObsModel model = fit_nonlinear_params(rig, summary);
  model.s = optimize_smoothing(model, summary.median, summary.variance, options).s;
  return smooth(model, summary.median, summary.variance);
}

LinearObsModel linearize_rig(const Rig& rig, const Point3& anchor, const Eigen::Matrix3d& E,
                             double s) {
  const auto n = static_cast<Eigen::Index>(2 * rig.size());
  LinearObsModel model;
  model.W.resize(n, 3);
  model.mu.resize(n);
  for (std::size_t v = 0; v < rig.size(); ++v) {
    const ProjectionWithJacobian pj = project_with_jacobian(rig[v], anchor);
    const auto row = static_cast<Eigen::Index>(2 * v);
    model.W.middleRows<2>(row) = pj.jacobian;
    model.mu.segment<2>(row) = pj.pixel - pj.jacobian * anchor;
  }
  model.E = E;
  model.s = s;
  model.initial_mean = anchor;
  model.initial_cov = kInitialLatentVariance * Eigen::MatrixXd::Identity(3, 3);
  model.explained_variance = 1.0;
  return model;
}

}  // namespace mveks
