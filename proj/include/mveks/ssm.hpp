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

#include <functional>
#include <memory>
#include <vector>

#include <Eigen/Core>

namespace mveks {

/// Added once to a non-positive innovation variance before giving up.
inline constexpr double kInnovationJitter = 1e-9;

/// Random-walk linear-Gaussian state-space model:
///   z_0 ~ N(m_0, P_0),  z_t ~ N(z_{t-1}, Q),  x_t ~ N(W z_t + mu, D_t)
/// with D_t diagonal and supplied per step alongside the observations.
struct LinearGaussianModel {
  Eigen::VectorXd initial_mean;
  Eigen::MatrixXd initial_cov;
  Eigen::MatrixXd dynamics_cov;
  Eigen::MatrixXd obs_map;     ///< n x d
  Eigen::VectorXd obs_offset;  ///< n

  Eigen::Index state_dim() const { return initial_mean.size(); }
  Eigen::Index obs_dim() const { return obs_map.rows(); }
};

/// Differentiable observation function h: R^d -> R^n.
class ObservationMap {
 public:
  virtual ~ObservationMap() = default;
  virtual Eigen::Index input_dim() const = 0;
  virtual Eigen::Index output_dim() const = 0;
  /// Writes h(z) and dh/dz. Rows whose entry in `valid` is cleared cannot be
  /// evaluated at z and are treated as unobserved for that step.
  virtual void evaluate(const Eigen::VectorXd& z, Eigen::VectorXd& value,
                        Eigen::MatrixXd& jacobian, std::vector<char>& valid) const = 0;
};

/// Observation map built from a value-only function; the Jacobian comes from
/// central differences. Throws JacobianFailure on non-finite entries.
class FiniteDifferenceMap final : public ObservationMap {
 public:
  using Function = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

  FiniteDifferenceMap(Function fn, Eigen::Index input_dim, Eigen::Index output_dim,
                      double step = 1e-6);

  Eigen::Index input_dim() const override { return input_dim_; }
  Eigen::Index output_dim() const override { return output_dim_; }
  void evaluate(const Eigen::VectorXd& z, Eigen::VectorXd& value, Eigen::MatrixXd& jacobian,
                std::vector<char>& valid) const override;

 private:
  Function fn_;
  Eigen::Index input_dim_;
  Eigen::Index output_dim_;
  double step_;
};

/// Same dynamics as LinearGaussianModel with a nonlinear observation map.
struct NonlinearGaussianModel {
  Eigen::VectorXd initial_mean;
  Eigen::MatrixXd initial_cov;
  Eigen::MatrixXd dynamics_cov;
  std::shared_ptr<const ObservationMap> obs_map;

  Eigen::Index state_dim() const { return initial_mean.size(); }
};

struct PosteriorTrack {
  std::vector<Eigen::VectorXd> filtered_means;
  std::vector<Eigen::MatrixXd> filtered_covs;
  std::vector<Eigen::VectorXd> smoothed_means;
  std::vector<Eigen::MatrixXd> smoothed_covs;
  double log_likelihood = 0.0;

  /// Smoothed means stacked as a T x d matrix.
  Eigen::MatrixXd smoothed_mean_matrix() const;
};

// Observations are T x n; NaN entries are missing and contribute neither to
// the update nor to the likelihood. `obs_var` holds the diagonal of D_t.

PosteriorTrack kalman_smooth(const LinearGaussianModel& model, const Eigen::MatrixXd& obs,
                             const Eigen::MatrixXd& obs_var);
/// Forward pass only; returns the exact marginal log-likelihood.
double kalman_log_likelihood(const LinearGaussianModel& model, const Eigen::MatrixXd& obs,
                             const Eigen::MatrixXd& obs_var);

/// First-order extended smoother: h is linearized at each predicted mean, then
/// the linearized model is RTS-smoothed.
PosteriorTrack extended_kalman_smooth(const NonlinearGaussianModel& model,
                                      const Eigen::MatrixXd& obs, const Eigen::MatrixXd& obs_var);
double extended_kalman_log_likelihood(const NonlinearGaussianModel& model,
                                      const Eigen::MatrixXd& obs, const Eigen::MatrixXd& obs_var);

struct LoglikAndGradient {
  double loglik = 0.0;
  double d_log_s = 0.0;  ///< d loglik / d log s
};

/// Relative step for the finite-difference derivative in log s.
inline constexpr double kLogSmoothingStep = 1e-4;

/// Evaluates `loglik_of_s` at s and differentiates in log s by central
/// differences.
LoglikAndGradient loglik_gradient_log_s(const std::function<double(double)>& loglik_of_s, double s);

/// Linear model whose `dynamics_cov` holds the base covariance E; the
/// likelihood is evaluated at Q = s E.
LoglikAndGradient marginal_loglik_grad_s(const LinearGaussianModel& model_with_base_cov,
                                         const Eigen::MatrixXd& obs,
                                         const Eigen::MatrixXd& obs_var, double s);

struct SmoothingSearchOptions {
  double learning_rate = 0.25;
  int max_iterations = 100;
  double tolerance = 1e-3;  ///< stop when |delta log s| falls below this
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct SmoothingSearchResult {
  double s = 1.0;
  double loglik = 0.0;
  double initial_loglik = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Adaptive-moment gradient ascent on log s. The returned s is the best
/// iterate seen, so loglik >= initial_loglik always holds.
SmoothingSearchResult maximize_smoothing(const std::function<double(double)>& loglik_of_s,
                                         double s_init, const SmoothingSearchOptions& options = {});

}  // namespace mveks
