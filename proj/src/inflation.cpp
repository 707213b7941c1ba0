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

#include "mveks/inflation.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include "mveks/errors.hpp"

namespace mveks {

namespace {

constexpr double kPosteriorJitter = 1e-10;

bool usable(double x, double var) { return std::isfinite(x) && std::isfinite(var) && var > 0.0; }

// (W^T D^-1 W)^-1 for the information matrix `info`, with one jitter retry.
Eigen::MatrixXd invert_information(Eigen::MatrixXd info) {
  const Eigen::Index d = info.rows();
  for (int attempt = 0; attempt < 2; ++attempt) {
    Eigen::LLT<Eigen::MatrixXd> llt(info);
    if (llt.info() == Eigen::Success && llt.rcond() > 1e-14) {
      return llt.solve(Eigen::MatrixXd::Identity(d, d));
    }
    info += kPosteriorJitter * Eigen::MatrixXd::Identity(d, d);
  }
  throw RankDeficient("latent information matrix is singular");
}

LatentPosterior posterior_from_rows(const Eigen::MatrixXd& W, const Eigen::VectorXd& var,
                                    const Eigen::VectorXd& x, const Eigen::VectorXd& mu,
                                    Eigen::Index skip_view) {
  const Eigen::Index d = W.cols();
  Eigen::MatrixXd info = Eigen::MatrixXd::Zero(d, d);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(d);
  Eigen::Index used = 0;
  for (Eigen::Index i = 0; i < W.rows(); ++i) {
    if (skip_view >= 0 && i / 2 == skip_view) continue;
    if (!usable(x(i), var(i))) continue;
    const double w = 1.0 / var(i);
    info.noalias() += w * W.row(i).transpose() * W.row(i);
    rhs.noalias() += (w * (x(i) - mu(i))) * W.row(i).transpose();
    ++used;
  }
  if (used < d) {
    throw RankDeficient("only " + std::to_string(used) + " observed rows for a " +
                        std::to_string(d) + "-dimensional latent");
  }
  LatentPosterior out;
  out.cov = invert_information(info);
  out.mean = out.cov * rhs;
  return out;
}

double quadratic_form(const Eigen::Vector2d& r, const Eigen::Matrix2d& Q) {
  return r.dot(Q.inverse() * r);
}

void check_shapes(const Eigen::MatrixXd& W, const Eigen::VectorXd& var, const Eigen::VectorXd& x,
                  const Eigen::VectorXd& mu) {
  if (var.size() != W.rows() || x.size() != W.rows() || mu.size() != W.rows()) {
    throw ShapeMismatch("W, var, x and mu must agree in the observation dimension");
  }
}

class LinearPredictor {
 public:
  explicit LinearPredictor(const LinearObsModel& model) : model_(model) {}

  void begin_frame(const Eigen::VectorXd&, const Eigen::VectorXd&) {}

  double distance(const Eigen::VectorXd& x, const Eigen::VectorXd& var, Eigen::Index v,
                  PosteriorScope scope) const {
    const LatentPosterior post = posterior_from_rows(
        model_.W, var, x, model_.mu, scope == PosteriorScope::kLeaveOneOut ? v : -1);
    const auto Wv = model_.W.middleRows(2 * v, 2);
    const Eigen::Vector2d r =
        x.segment<2>(2 * v) - (Wv * post.mean + model_.mu.segment<2>(2 * v));
    Eigen::Matrix2d Q = Wv * post.cov * Wv.transpose();
    Q(0, 0) += var(2 * v);
    Q(1, 1) += var(2 * v + 1);
    return quadratic_form(r, Q);
  }

 private:
  const LinearObsModel& model_;
};

class ProjectionPredictor {
 public:
  explicit ProjectionPredictor(const NonlinearObsModel& model) : rig_(model.rig) {}

  void begin_frame(const Eigen::VectorXd& x, const Eigen::VectorXd& var) {
    try {
      warm_ = triangulate_median(rig_, x);
      have_warm_ = true;
    } catch (const Error&) {
      // Keep the previous frame's estimate as the starting point.
    }
    if (have_warm_) warm_ = gauss_newton(x, var, -1, warm_);
  }

  double distance(const Eigen::VectorXd& x, const Eigen::VectorXd& var, Eigen::Index v,
                  PosteriorScope scope) const {
    if (!have_warm_) throw RankDeficient("no starting point for the latent estimate");
    const Eigen::Index skip = scope == PosteriorScope::kLeaveOneOut ? v : -1;
    Eigen::Index views_used = 0;
    for (Eigen::Index u = 0; u < static_cast<Eigen::Index>(rig_.size()); ++u) {
      if (u != skip && usable(x(2 * u), var(2 * u)) && usable(x(2 * u + 1), var(2 * u + 1))) {
        ++views_used;
      }
    }
    if (views_used < 2) {
      throw RankDeficient("need two views to estimate a 3D latent");
    }
    const Point3 z = gauss_newton(x, var, skip, warm_);

    Eigen::Matrix3d info = Eigen::Matrix3d::Zero();
    Eigen::Index rows = 0;
    for (Eigen::Index u = 0; u < static_cast<Eigen::Index>(rig_.size()); ++u) {
      if (u == skip) continue;
      ProjectionWithJacobian pj;
      try {
        pj = project_with_jacobian(rig_[static_cast<std::size_t>(u)], z);
      } catch (const NonPositiveDepth&) {
        continue;
      }
      for (int c = 0; c < 2; ++c) {
        const Eigen::Index i = 2 * u + c;
        if (!usable(x(i), var(i))) continue;
        info.noalias() += pj.jacobian.row(c).transpose() * pj.jacobian.row(c) / var(i);
        ++rows;
      }
    }
    if (rows < 3) throw RankDeficient("too few observed rows for a 3D latent");
    const Eigen::MatrixXd B = invert_information(info);

    const ProjectionWithJacobian target = project_with_jacobian(rig_[static_cast<std::size_t>(v)], z);
    const Eigen::Vector2d r = x.segment<2>(2 * v) - target.pixel;
    Eigen::Matrix2d Q = target.jacobian * B * target.jacobian.transpose();
    Q(0, 0) += var(2 * v);
    Q(1, 1) += var(2 * v + 1);
    return quadratic_form(r, Q);
  }

 private:
  double cost(const Eigen::VectorXd& x, const Eigen::VectorXd& var, Eigen::Index skip,
              const Point3& z) const {
    double total = 0.0;
    for (Eigen::Index u = 0; u < static_cast<Eigen::Index>(rig_.size()); ++u) {
      if (u == skip) continue;
      if (!usable(x(2 * u), var(2 * u)) || !usable(x(2 * u + 1), var(2 * u + 1))) continue;
      const Eigen::Vector3d pc = rig_[static_cast<std::size_t>(u)].to_camera(z);
      if (!(pc.z() > kDepthEpsilon)) return std::numeric_limits<double>::infinity();
      const Point2 p = project(rig_[static_cast<std::size_t>(u)], z);
      for (int c = 0; c < 2; ++c) {
        const double e = x(2 * u + c) - p(c);
        total += e * e / var(2 * u + c);
      }
    }
    return total;
  }

  // Weighted Gauss-Newton with step halving over all views except `skip`.
  Point3 gauss_newton(const Eigen::VectorXd& x, const Eigen::VectorXd& var, Eigen::Index skip,
                      Point3 z) const {
    double current = cost(x, var, skip, z);
    if (!std::isfinite(current)) return z;
    for (int it = 0; it < 20; ++it) {
      Eigen::Matrix3d info = Eigen::Matrix3d::Zero();
      Eigen::Vector3d grad = Eigen::Vector3d::Zero();
      for (Eigen::Index u = 0; u < static_cast<Eigen::Index>(rig_.size()); ++u) {
        if (u == skip) continue;
        if (!usable(x(2 * u), var(2 * u)) || !usable(x(2 * u + 1), var(2 * u + 1))) continue;
        const ProjectionWithJacobian pj = project_with_jacobian(rig_[static_cast<std::size_t>(u)], z);
        for (int c = 0; c < 2; ++c) {
          const double w = 1.0 / var(2 * u + c);
          info.noalias() += w * pj.jacobian.row(c).transpose() * pj.jacobian.row(c);
          grad.noalias() += (w * (x(2 * u + c) - pj.pixel(c))) * pj.jacobian.row(c).transpose();
        }
      }
      Eigen::LDLT<Eigen::Matrix3d> ldlt(info);
      if (ldlt.info() != Eigen::Success) break;
      const Eigen::Vector3d step = ldlt.solve(grad);
      if (!step.allFinite()) break;
      // grad . step is twice the decrease predicted by the Gauss-Newton model.
      if (grad.dot(step) <= 1e-12 * (1.0 + current)) break;
      double scale = 1.0;
      bool accepted = false;
      for (int h = 0; h < 12; ++h, scale *= 0.5) {
        const Point3 trial = z + scale * step;
        const double c = cost(x, var, skip, trial);
        if (c <= current) {
          z = trial;
          current = c;
          accepted = true;
          break;
        }
      }
      if (!accepted || (scale * step).norm() <= 1e-12 * (1.0 + z.norm())) break;
    }
    return z;
  }

  const Rig& rig_;
  Point3 warm_ = Point3::Zero();
  bool have_warm_ = false;
};

template <typename Predictor>
InflationReport inflate_impl(const Eigen::MatrixXd& obs, const Eigen::MatrixXd& obs_var,
                             Predictor& predictor, const InflationOptions& options) {
  if (!(options.threshold > 0.0)) throw ConfigError("inflation threshold must be positive");
  if (!(options.factor > 1.0)) throw ConfigError("inflation factor must exceed 1");
  if (options.max_doublings < 0) throw ConfigError("max_doublings must be non-negative");
  if (obs.rows() != obs_var.rows() || obs.cols() != obs_var.cols() || obs.cols() % 2 != 0) {
    throw ShapeMismatch("inflate: observations and variances must both be T x 2V");
  }
  const Eigen::Index T = obs.rows();
  const Eigen::Index V = obs.cols() / 2;

  InflationReport report;
  report.threshold = options.threshold;
  report.max_doublings = options.max_doublings;
  report.inflated_vars = obs_var;
  report.n_doublings = Eigen::MatrixXi::Zero(T, V);
  report.final_distance = Eigen::MatrixXd::Constant(T, V, std::numeric_limits<double>::quiet_NaN());

  for (Eigen::Index t = 0; t < T; ++t) {
    const Eigen::VectorXd x = obs.row(t).transpose();
    Eigen::VectorXd var = obs_var.row(t).transpose();
    predictor.begin_frame(x, var);

    auto distance = [&](Eigen::Index v) -> std::optional<double> {
      if (!std::isfinite(x(2 * v)) || !std::isfinite(x(2 * v + 1))) return std::nullopt;
      try {
        return predictor.distance(x, var, v, options.scope);
      } catch (const RankDeficient&) {
        if (options.scope == PosteriorScope::kAllViews) return std::nullopt;
      }
      try {
        return predictor.distance(x, var, v, PosteriorScope::kAllViews);
      } catch (const RankDeficient&) {
        return std::nullopt;
      } catch (const NonPositiveDepth&) {
        return std::nullopt;
      }
    };

    std::vector<int> count(static_cast<std::size_t>(V), 0);
    // Distances are cached together with the variance version they saw.
    long version = 0;
    std::vector<std::optional<double>> cached(static_cast<std::size_t>(V));
    std::vector<long> cached_version(static_cast<std::size_t>(V), -1);
    auto current = [&](Eigen::Index v) {
      const auto i = static_cast<std::size_t>(v);
      if (cached_version[i] != version) {
        try {
          cached[i] = distance(v);
        } catch (const NonPositiveDepth&) {
          cached[i].reset();
        }
        cached_version[i] = version;
      }
      return cached[i];
    };
    auto bump = [&](Eigen::Index v) {
      var.segment<2>(2 * v) *= options.factor;
      ++count[static_cast<std::size_t>(v)];
      ++version;
    };
    // The worst breach is resolved first: a corrupted view also raises the
    // distances of the views it helps predict.
    for (;;) {
      Eigen::Index worst = -1;
      double worst_d = options.threshold;
      for (Eigen::Index v = 0; v < V; ++v) {
        if (count[static_cast<std::size_t>(v)] >= options.max_doublings) continue;
        const std::optional<double> d = current(v);
        if (d && *d > worst_d) {
          worst_d = *d;
          worst = v;
        }
      }
      if (worst < 0) break;
      if (V == 2) {
        for (Eigen::Index u = 0; u < V; ++u) {
          if (count[static_cast<std::size_t>(u)] < options.max_doublings) bump(u);
        }
      } else {
        bump(worst);
      }
    }

    for (Eigen::Index v = 0; v < V; ++v) {
      if (const std::optional<double> d = current(v)) report.final_distance(t, v) = *d;
      report.n_doublings(t, v) = count[static_cast<std::size_t>(v)];
    }
    report.inflated_vars.row(t) = var.transpose();
  }
  return report;
}

}  // namespace

LatentPosterior latent_posterior_uninformative(const Eigen::MatrixXd& W,
                                               const Eigen::VectorXd& var,
                                               const Eigen::VectorXd& x,
                                               const Eigen::VectorXd& mu) {
  check_shapes(W, var, x, mu);
  return posterior_from_rows(W, var, x, mu, -1);
}

double mahalanobis_view(const Eigen::MatrixXd& W, const Eigen::VectorXd& var,
                        const Eigen::VectorXd& x, const Eigen::VectorXd& mu, Eigen::Index view,
                        PosteriorScope scope) {
  check_shapes(W, var, x, mu);
  if (view < 0 || 2 * view + 1 >= W.rows()) throw ShapeMismatch("view index out of range");
  LinearObsModel model;
  model.W = W;
  model.mu = mu;
  return LinearPredictor(model).distance(x, var, view, scope);
}

std::vector<Eigen::Index> InflationReport::inflated_frames() const {
  std::vector<Eigen::Index> out;
  for (Eigen::Index t = 0; t < n_doublings.rows(); ++t) {
    if (n_doublings.row(t).maxCoeff() > 0) out.push_back(t);
  }
  return out;
}

InflationReport inflate(const Eigen::MatrixXd& obs, const Eigen::MatrixXd& obs_var,
                        const LinearObsModel& model, const InflationOptions& options) {
  if (obs.cols() != model.W.rows()) throw ShapeMismatch("inflate: model and data disagree on 2V");
  LinearPredictor predictor(model);
  return inflate_impl(obs, obs_var, predictor, options);
}

InflationReport inflate(const EnsembleSummary& summary, const LinearObsModel& model,
                        const InflationOptions& options) {
  return inflate(summary.median, summary.variance, model, options);
}

InflationReport inflate(const Eigen::MatrixXd& obs, const Eigen::MatrixXd& obs_var,
                        const NonlinearObsModel& model, const InflationOptions& options) {
  if (obs.cols() != static_cast<Eigen::Index>(2 * model.rig.size())) {
    throw ShapeMismatch("inflate: rig and data disagree on 2V");
  }
  ProjectionPredictor predictor(model);
  return inflate_impl(obs, obs_var, predictor, options);
}

InflationReport inflate(const EnsembleSummary& summary, const NonlinearObsModel& model,
                        const InflationOptions& options) {
  return inflate(summary.median, summary.variance, model, options);
}

}  // namespace mveks
