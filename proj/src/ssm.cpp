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

#include "mveks/ssm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include <Eigen/Cholesky>

#include "mveks/errors.hpp"

namespace mveks {

namespace {

// Reciprocal condition number below which the information-form update is
// not trusted and the sequential covariance-form update is used instead.
constexpr double kInformationRcond = 1e-12;
// Prior-to-observation variance ratio above which a step is assimilated in
// information form.
constexpr double kDiffuseRatio = 1e8;

}  // namespace

FiniteDifferenceMap::FiniteDifferenceMap(Function fn, Eigen::Index input_dim,
                                         Eigen::Index output_dim, double step)
    : fn_(std::move(fn)), input_dim_(input_dim), output_dim_(output_dim), step_(step) {}

void FiniteDifferenceMap::evaluate(const Eigen::VectorXd& z, Eigen::VectorXd& value,
                                   Eigen::MatrixXd& jacobian, std::vector<char>& valid) const {
  value = fn_(z);
  jacobian.resize(output_dim_, input_dim_);
  valid.assign(static_cast<std::size_t>(output_dim_), 1);
  Eigen::VectorXd probe = z;
  for (Eigen::Index j = 0; j < input_dim_; ++j) {
    const double h = step_ * std::max(1.0, std::abs(z(j)));
    probe(j) = z(j) + h;
    const Eigen::VectorXd plus = fn_(probe);
    probe(j) = z(j) - h;
    const Eigen::VectorXd minus = fn_(probe);
    probe(j) = z(j);
    jacobian.col(j) = (plus - minus) / (2.0 * h);
  }
  if (!jacobian.allFinite()) throw JacobianFailure("finite-difference Jacobian is not finite");
}

Eigen::MatrixXd PosteriorTrack::smoothed_mean_matrix() const {
  if (smoothed_means.empty()) return {};
  Eigen::MatrixXd out(static_cast<Eigen::Index>(smoothed_means.size()), smoothed_means.front().size());
  for (std::size_t t = 0; t < smoothed_means.size(); ++t) {
    out.row(static_cast<Eigen::Index>(t)) = smoothed_means[t].transpose();
  }
  return out;
}

namespace {

// Per-step linearization y ~ offset + H z; `valid` masks rows that cannot be
// used this step.
struct StepLinearization {
  const Eigen::MatrixXd* H = nullptr;
  const Eigen::VectorXd* offset = nullptr;
  const std::vector<char>* valid = nullptr;
};

class AffineLinearizer {
 public:
  explicit AffineLinearizer(const LinearGaussianModel& m)
      : model_(m), valid_(static_cast<std::size_t>(m.obs_dim()), 1) {}

  template <typename Vec>
  StepLinearization operator()(const Vec&) {
    return {&model_.obs_map, &model_.obs_offset, &valid_};
  }

 private:
  const LinearGaussianModel& model_;
  std::vector<char> valid_;
};

class ExtendedLinearizer {
 public:
  explicit ExtendedLinearizer(const ObservationMap& map) : map_(map), point_(map.input_dim()) {}

  template <typename Vec>
  StepLinearization operator()(const Vec& predicted) {
    point_ = predicted;
    map_.evaluate(point_, value_, jacobian_, valid_);
    if (!jacobian_.allFinite()) {
      for (Eigen::Index i = 0; i < jacobian_.rows(); ++i) {
        if (valid_[static_cast<std::size_t>(i)] && !jacobian_.row(i).allFinite()) {
          throw JacobianFailure("observation Jacobian has non-finite entries");
        }
      }
    }
    offset_ = value_ - jacobian_ * point_;
    return {&jacobian_, &offset_, &valid_};
  }

 private:
  const ObservationMap& map_;
  Eigen::VectorXd point_;
  Eigen::VectorXd value_;
  Eigen::VectorXd offset_;
  Eigen::MatrixXd jacobian_;
  std::vector<char> valid_;
};

template <int D>
struct Kernel {
  using Vec = Eigen::Matrix<double, D, 1>;
  using Mat = Eigen::Matrix<double, D, D>;
  using Row = Eigen::Matrix<double, 1, D>;

  struct Storage {
    std::vector<Vec> means;
    std::vector<Mat> covs;
  };

  // Joint update of all usable coordinates of one step in information form,
  //   P+ = (P^-1 + H^T R^-1 H)^-1,  m+ = m + P+ H^T R^-1 (y - offset - H m),
  // with the likelihood from the determinant lemma and Woodbury identity.
  // A large prior covariance (diffuse dynamics) makes the covariance-form
  // downdate lose roughly eps * |P| absolute precision; this form does not.
  // Returns false, leaving m and P untouched, when the prior is not diffuse
  // relative to the observations, P is too ill-conditioned to invert or an
  // observation variance is not positive.
  template <typename ObsRow>
  static bool information_update(Vec& m, Mat& P, const Eigen::MatrixXd& H,
                                 const Eigen::VectorXd& offset, const std::vector<char>& valid,
                                 const ObsRow& y, const ObsRow& r, double& loglik) {
    const Eigen::Index d = m.size();
    // Cheap bound on max_i h_i P h_i^T / r_i; below it the downdate is accurate.
    double max_h2 = 0.0;
    double min_r = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      if (!valid[static_cast<std::size_t>(i)] || std::isnan(y(i)) || !std::isfinite(r(i))) continue;
      max_h2 = std::max(max_h2, H.row(i).squaredNorm());
      min_r = std::min(min_r, r(i));
    }
    if (!(min_r > 0.0) || !(P.trace() * max_h2 > kDiffuseRatio * min_r)) return false;
    const Eigen::LLT<Mat> prior(P);
    if (prior.info() != Eigen::Success || !(prior.rcond() > kInformationRcond)) return false;
    Mat A = prior.solve(Mat::Identity(d, d));
    Vec b = Vec::Zero(d);
    double quad = 0.0;
    double log_det_r = 0.0;
    int used = 0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      if (!valid[static_cast<std::size_t>(i)] || std::isnan(y(i)) || !std::isfinite(r(i))) continue;
      if (!(r(i) > 0.0)) return false;
      const Row h = H.row(i);
      const double innovation = y(i) - offset(i) - h.dot(m);
      A.noalias() += h.transpose() * (h / r(i));
      b.noalias() += h.transpose() * (innovation / r(i));
      quad += innovation * innovation / r(i);
      log_det_r += std::log(r(i));
      ++used;
    }
    if (used == 0) return true;
    const Eigen::LLT<Mat> post(A);
    if (post.info() != Eigen::Success) return false;
    const Vec delta = post.solve(b);
    const double log_det_p = 2.0 * prior.matrixLLT().diagonal().array().log().sum();
    const double log_det_a = 2.0 * post.matrixLLT().diagonal().array().log().sum();
    m += delta;
    P = post.solve(Mat::Identity(d, d));
    loglik -= 0.5 * (used * std::log(2.0 * std::numbers::pi) + log_det_r + log_det_p + log_det_a +
                     quad - b.dot(delta));
    return true;
  }

  // Forward pass. Each step is assimilated jointly in information form when
  // possible, otherwise one coordinate at a time (exact for diagonal D_t).
  template <typename Linearizer>
  static double filter(const Eigen::VectorXd& m0, const Eigen::MatrixXd& P0,
                       const Eigen::MatrixXd& Qd, const Eigen::MatrixXd& obs,
                       const Eigen::MatrixXd& obs_var, Linearizer& linearize, Storage* store) {
    const Eigen::Index d = m0.size();
    const Eigen::Index T = obs.rows();
    const Eigen::Index n = obs.cols();
    Vec m = m0;
    Mat P = P0;
    const Mat Q = Qd;
    Vec ph = Vec::Zero(d);
    double loglik = 0.0;
    const double log_two_pi = std::log(2.0 * std::numbers::pi);
    if (store) {
      store->means.resize(static_cast<std::size_t>(T));
      store->covs.resize(static_cast<std::size_t>(T));
    }

    for (Eigen::Index t = 0; t < T; ++t) {
      if (t > 0) P += Q;
      const StepLinearization lin = linearize(m);
      const Eigen::MatrixXd& H = *lin.H;
      const Eigen::VectorXd& offset = *lin.offset;
      const std::vector<char>& valid = *lin.valid;
      if (!information_update(m, P, H, offset, valid, obs.row(t), obs_var.row(t), loglik)) {
        for (Eigen::Index i = 0; i < n; ++i) {
          const double y = obs(t, i);
          const double r = obs_var(t, i);
          if (!valid[static_cast<std::size_t>(i)] || std::isnan(y) || !std::isfinite(r)) continue;
          const Row h = H.row(i);
          ph.noalias() = P * h.transpose();
          double s = h.dot(ph) + r;
          if (!(s > 0.0) || !std::isfinite(s)) {
            s += kInnovationJitter;
            if (!(s > 0.0) || !std::isfinite(s)) {
              std::ostringstream msg;
              msg << "innovation variance " << s << " at step " << t << ", coordinate " << i;
              throw NumericalFailure(msg.str());
            }
          }
          const double innovation = y - offset(i) - h.dot(m);
          m.noalias() += ph * (innovation / s);
          // With the optimal gain the Joseph form (I - K h) P (I - K h)^T + r K K^T
          // reduces to this symmetric rank-one downdate.
          P.noalias() -= (ph / s) * ph.transpose();
          loglik -= 0.5 * (log_two_pi + std::log(s) + innovation * innovation / s);
        }
      }
      P = 0.5 * (P + P.transpose()).eval();
      if (!m.allFinite() || !P.allFinite()) {
        throw NumericalFailure("non-finite filter state at step " + std::to_string(t));
      }
      if (store) {
        store->means[static_cast<std::size_t>(t)] = m;
        store->covs[static_cast<std::size_t>(t)] = P;
      }
    }
    return loglik;
  }

  static PosteriorTrack smooth(const Storage& filt, const Eigen::MatrixXd& Qd, double loglik) {
    const std::size_t T = filt.means.size();
    const Mat Q = Qd;
    PosteriorTrack out;
    out.log_likelihood = loglik;
    out.filtered_means.reserve(T);
    out.filtered_covs.reserve(T);
    for (std::size_t t = 0; t < T; ++t) {
      out.filtered_means.emplace_back(filt.means[t]);
      out.filtered_covs.emplace_back(filt.covs[t]);
    }
    if (T == 0) return out;
    std::vector<Vec> sm(T);
    std::vector<Mat> sP(T);
    sm[T - 1] = filt.means[T - 1];
    sP[T - 1] = filt.covs[T - 1];
    for (std::size_t k = T - 1; k-- > 0;) {
      const Mat predicted = filt.covs[k] + Q;
      Eigen::LDLT<Mat> ldlt(predicted);
      if (ldlt.info() != Eigen::Success) {
        throw NumericalFailure("singular predicted covariance at step " + std::to_string(k + 1));
      }
      // G = P_k Ppred^{-1}; both symmetric so G^T = Ppred^{-1} P_k.
      const Mat gain = ldlt.solve(filt.covs[k]).transpose();
      sm[k] = filt.means[k] + gain * (sm[k + 1] - filt.means[k]);
      Mat cov = filt.covs[k] + gain * (sP[k + 1] - predicted) * gain.transpose();
      sP[k] = 0.5 * (cov + cov.transpose());
    }
    out.smoothed_means.reserve(T);
    out.smoothed_covs.reserve(T);
    for (std::size_t t = 0; t < T; ++t) {
      out.smoothed_means.emplace_back(sm[t]);
      out.smoothed_covs.emplace_back(sP[t]);
    }
    return out;
  }
};

void check_shapes(Eigen::Index d, Eigen::Index n, const Eigen::VectorXd& m0,
                  const Eigen::MatrixXd& P0, const Eigen::MatrixXd& Q, const Eigen::MatrixXd& obs,
                  const Eigen::MatrixXd& obs_var) {
  if (d < 1) throw ShapeMismatch("state dimension must be positive");
  if (m0.size() != d || P0.rows() != d || P0.cols() != d || Q.rows() != d || Q.cols() != d) {
    throw ShapeMismatch("state-space model: inconsistent state dimensions");
  }
  if (obs.cols() != n || obs_var.rows() != obs.rows() || obs_var.cols() != n) {
    throw ShapeMismatch("state-space model: observations must be T x " + std::to_string(n) +
                        " with matching variances");
  }
  if (obs.rows() < 1) throw ShapeMismatch("state-space model: need at least one time step");
}

void check_linear(const LinearGaussianModel& m, const Eigen::MatrixXd& obs,
                  const Eigen::MatrixXd& obs_var) {
  check_shapes(m.state_dim(), m.obs_dim(), m.initial_mean, m.initial_cov, m.dynamics_cov, obs,
               obs_var);
  if (m.obs_map.cols() != m.state_dim() || m.obs_offset.size() != m.obs_dim()) {
    throw ShapeMismatch("linear model: obs_map must be n x d and obs_offset length n");
  }
}

void check_nonlinear(const NonlinearGaussianModel& m, const Eigen::MatrixXd& obs,
                     const Eigen::MatrixXd& obs_var) {
  if (!m.obs_map) throw ConfigError("nonlinear model has no observation map");
  if (m.obs_map->input_dim() != m.state_dim()) {
    throw ShapeMismatch("nonlinear model: observation map input dimension != state dimension");
  }
  check_shapes(m.state_dim(), m.obs_map->output_dim(), m.initial_mean, m.initial_cov,
               m.dynamics_cov, obs, obs_var);
}

template <typename Linearizer, typename MakeLinearizer>
PosteriorTrack run_smoother(Eigen::Index d, const Eigen::VectorXd& m0, const Eigen::MatrixXd& P0,
                            const Eigen::MatrixXd& Q, const Eigen::MatrixXd& obs,
                            const Eigen::MatrixXd& obs_var, MakeLinearizer make) {
  auto run = [&](auto kernel) {
    using K = decltype(kernel);
    typename K::Storage store;
    Linearizer lin = make();
    const double ll = K::filter(m0, P0, Q, obs, obs_var, lin, &store);
    return K::smooth(store, Q, ll);
  };
  switch (d) {
    case 2: return run(Kernel<2>{});
    case 3: return run(Kernel<3>{});
    default: return run(Kernel<Eigen::Dynamic>{});
  }
}

template <typename Linearizer, typename MakeLinearizer>
double run_filter(Eigen::Index d, const Eigen::VectorXd& m0, const Eigen::MatrixXd& P0,
                  const Eigen::MatrixXd& Q, const Eigen::MatrixXd& obs,
                  const Eigen::MatrixXd& obs_var, MakeLinearizer make) {
  auto run = [&](auto kernel) {
    using K = decltype(kernel);
    Linearizer lin = make();
    return K::filter(m0, P0, Q, obs, obs_var, lin, nullptr);
  };
  switch (d) {
    case 2: return run(Kernel<2>{});
    case 3: return run(Kernel<3>{});
    default: return run(Kernel<Eigen::Dynamic>{});
  }
}

}  // namespace

PosteriorTrack kalman_smooth(const LinearGaussianModel& model, const Eigen::MatrixXd& obs,
                             const Eigen::MatrixXd& obs_var) {
  check_linear(model, obs, obs_var);
  return run_smoother<AffineLinearizer>(model.state_dim(), model.initial_mean, model.initial_cov,
                                        model.dynamics_cov, obs, obs_var,
                                        [&] { return AffineLinearizer(model); });
}

double kalman_log_likelihood(const LinearGaussianModel& model, const Eigen::MatrixXd& obs,
                             const Eigen::MatrixXd& obs_var) {
  check_linear(model, obs, obs_var);
  return run_filter<AffineLinearizer>(model.state_dim(), model.initial_mean, model.initial_cov,
                                      model.dynamics_cov, obs, obs_var,
                                      [&] { return AffineLinearizer(model); });
}

PosteriorTrack extended_kalman_smooth(const NonlinearGaussianModel& model,
                                      const Eigen::MatrixXd& obs, const Eigen::MatrixXd& obs_var) {
  check_nonlinear(model, obs, obs_var);
  return run_smoother<ExtendedLinearizer>(model.state_dim(), model.initial_mean, model.initial_cov,
                                          model.dynamics_cov, obs, obs_var,
                                          [&] { return ExtendedLinearizer(*model.obs_map); });
}

double extended_kalman_log_likelihood(const NonlinearGaussianModel& model,
                                      const Eigen::MatrixXd& obs, const Eigen::MatrixXd& obs_var) {
  check_nonlinear(model, obs, obs_var);
  return run_filter<ExtendedLinearizer>(model.state_dim(), model.initial_mean, model.initial_cov,
                                        model.dynamics_cov, obs, obs_var,
                                        [&] { return ExtendedLinearizer(*model.obs_map); });
}

LoglikAndGradient loglik_gradient_log_s(const std::function<double(double)>& loglik_of_s, double s) {
  if (!(s > 0.0)) throw ConfigError("smoothing parameter must be positive");
  const double h = kLogSmoothingStep;
  LoglikAndGradient out;
  out.loglik = loglik_of_s(s);
  const double plus = loglik_of_s(s * std::exp(h));
  const double minus = loglik_of_s(s * std::exp(-h));
  out.d_log_s = (plus - minus) / (2.0 * h);
  return out;
}

LoglikAndGradient marginal_loglik_grad_s(const LinearGaussianModel& model_with_base_cov,
                                         const Eigen::MatrixXd& obs,
                                         const Eigen::MatrixXd& obs_var, double s) {
  LinearGaussianModel scaled = model_with_base_cov;
  return loglik_gradient_log_s(
      [&](double trial) {
        scaled.dynamics_cov = trial * model_with_base_cov.dynamics_cov;
        return kalman_log_likelihood(scaled, obs, obs_var);
      },
      s);
}

SmoothingSearchResult maximize_smoothing(const std::function<double(double)>& loglik_of_s,
                                         double s_init, const SmoothingSearchOptions& options) {
  if (!(s_init > 0.0)) throw ConfigError("initial smoothing parameter must be positive");
  const double h = kLogSmoothingStep;
  double x = std::log(s_init);
  double m = 0.0;
  double v = 0.0;

  SmoothingSearchResult out;
  out.initial_loglik = loglik_of_s(s_init);
  double best_x = x;
  double best_value = out.initial_loglik;

  for (int it = 1; it <= options.max_iterations; ++it) {
    const double plus = loglik_of_s(std::exp(x + h));
    const double minus = loglik_of_s(std::exp(x - h));
    const double grad = (plus - minus) / (2.0 * h);
    // The midpoint of the difference pair tracks loglik(x) to O(h^2); it is
    // only used to rank iterates, the winner is re-evaluated exactly below.
    const double approx_value = 0.5 * (plus + minus);
    if (it > 1 && approx_value > best_value) {
      best_value = approx_value;
      best_x = x;
    }
    if (!std::isfinite(grad)) break;
    m = options.beta1 * m + (1.0 - options.beta1) * grad;
    v = options.beta2 * v + (1.0 - options.beta2) * grad * grad;
    const double m_hat = m / (1.0 - std::pow(options.beta1, it));
    const double v_hat = v / (1.0 - std::pow(options.beta2, it));
    const double step = options.learning_rate * m_hat / (std::sqrt(v_hat) + options.epsilon);
    x += step;
    out.iterations = it;
    if (std::abs(step) < options.tolerance) {
      out.converged = true;
      break;
    }
  }

  const double final_value = loglik_of_s(std::exp(x));
  if (final_value > best_value) {
    best_value = final_value;
    best_x = x;
  }
  double best_exact = best_x == x ? final_value : loglik_of_s(std::exp(best_x));
  if (!(best_exact >= out.initial_loglik)) {
    best_x = std::log(s_init);
    best_exact = out.initial_loglik;
  }
  out.s = std::exp(best_x);
  out.loglik = best_exact;
  return out;
}

}  // namespace mveks
