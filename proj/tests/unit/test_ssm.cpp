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

#include <cmath>
#include <limits>
#include <memory>
#include <random>

#include <Eigen/Eigenvalues>

#include "doctest.h"
#include "mveks/errors.hpp"
#include "mveks/ssm.hpp"
#include "oracles.hpp"

using namespace mveks;

namespace {

struct Instance {
  LinearGaussianModel model;
  Eigen::MatrixXd obs;
  Eigen::MatrixXd var;
};

Eigen::MatrixXd random_spd(std::mt19937_64& rng, Eigen::Index d, double floor) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd A(d, d);
  for (Eigen::Index i = 0; i < A.size(); ++i) A.data()[i] = n(rng);
  return A * A.transpose() + floor * Eigen::MatrixXd::Identity(d, d);
}

Instance random_instance(std::mt19937_64& rng, Eigen::Index d, Eigen::Index T, Eigen::Index n,
                         double missing_rate) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Instance inst;
  auto& m = inst.model;
  m.initial_mean = Eigen::VectorXd::NullaryExpr(d, [&] { return g(rng); });
  m.initial_cov = random_spd(rng, d, 0.1);
  m.dynamics_cov = 0.3 * random_spd(rng, d, 0.01);
  m.obs_map = Eigen::MatrixXd::NullaryExpr(n, d, [&] { return g(rng); });
  m.obs_offset = Eigen::VectorXd::NullaryExpr(n, [&] { return g(rng); });
  inst.obs.resize(T, n);
  inst.var.resize(T, n);
  for (Eigen::Index t = 0; t < T; ++t) {
    for (Eigen::Index i = 0; i < n; ++i) {
      inst.obs(t, i) = u(rng) < missing_rate ? std::numeric_limits<double>::quiet_NaN() : 3.0 * g(rng);
      inst.var(t, i) = 0.1 + 2.0 * u(rng);
    }
  }
  return inst;
}

oracle::DensePosterior dense(const Instance& inst) {
  const auto& m = inst.model;
  return oracle::dense_smoother(m.initial_mean, m.initial_cov, m.dynamics_cov, m.obs_map,
                                m.obs_offset, inst.obs, inst.var);
}

class AffineMap final : public ObservationMap {
 public:
  AffineMap(Eigen::MatrixXd W, Eigen::VectorXd mu) : W_(std::move(W)), mu_(std::move(mu)) {}
  Eigen::Index input_dim() const override { return W_.cols(); }
  Eigen::Index output_dim() const override { return W_.rows(); }
  void evaluate(const Eigen::VectorXd& z, Eigen::VectorXd& value, Eigen::MatrixXd& jacobian,
                std::vector<char>& valid) const override {
    value = W_ * z + mu_;
    jacobian = W_;
    valid.assign(static_cast<std::size_t>(W_.rows()), 1);
  }

 private:
  Eigen::MatrixXd W_;
  Eigen::VectorXd mu_;
};

double max_abs_diff(const PosteriorTrack& a, const oracle::DensePosterior& b) {
  double worst = 0.0;
  for (std::size_t t = 0; t < b.means.size(); ++t) {
    worst = std::max(worst, (a.smoothed_means[t] - b.means[t]).cwiseAbs().maxCoeff());
    worst = std::max(worst, (a.smoothed_covs[t] - b.covs[t]).cwiseAbs().maxCoeff());
  }
  return worst;
}

}  // namespace

TEST_CASE("kalman_smooth: prior only") {
  LinearGaussianModel m;
  m.initial_mean = Eigen::Vector2d(1.0, -2.0);
  m.initial_cov = Eigen::Matrix2d::Identity() * 3.0;
  m.dynamics_cov = Eigen::Matrix2d::Identity();
  m.obs_map = Eigen::MatrixXd::Identity(2, 2);
  m.obs_offset = Eigen::Vector2d::Zero();
  Eigen::MatrixXd obs = Eigen::MatrixXd::Constant(1, 2, std::numeric_limits<double>::quiet_NaN());
  const auto post = kalman_smooth(m, obs, Eigen::MatrixXd::Ones(1, 2));
  CHECK(post.smoothed_means[0] == m.initial_mean);
  CHECK(post.smoothed_covs[0] == m.initial_cov);
  CHECK(post.log_likelihood == 0.0);
}

TEST_CASE("kalman_smooth: scalar model against the joint Gaussian") {
  LinearGaussianModel m;
  m.initial_mean = Eigen::VectorXd::Constant(1, 0.5);
  m.initial_cov = Eigen::MatrixXd::Constant(1, 1, 2.0);
  m.dynamics_cov = Eigen::MatrixXd::Constant(1, 1, 0.7);
  m.obs_map = Eigen::MatrixXd::Constant(1, 1, 1.5);
  m.obs_offset = Eigen::VectorXd::Constant(1, -0.25);
  Eigen::MatrixXd obs(3, 1), var(3, 1);
  obs << 1.0, 2.5, -0.5;
  var << 0.4, 1.1, 0.3;

  // Direct 3 x 3 conditioning, written out for the scalar case.
  Eigen::Matrix3d prior;
  for (int s = 0; s < 3; ++s)
    for (int t = 0; t < 3; ++t) prior(s, t) = 2.0 + 0.7 * std::min(s, t);
  const Eigen::Matrix3d S = 2.25 * prior + Eigen::Matrix3d(Eigen::Vector3d(0.4, 1.1, 0.3).asDiagonal());
  const Eigen::Vector3d resid = Eigen::Vector3d(1.0, 2.5, -0.5) - Eigen::Vector3d::Constant(1.5 * 0.5 - 0.25);
  const Eigen::Vector3d mean = Eigen::Vector3d::Constant(0.5) + 1.5 * prior * S.inverse() * resid;
  const Eigen::Matrix3d cov = prior - 2.25 * prior * S.inverse() * prior;
  const double ll = -0.5 * (3 * std::log(2 * std::numbers::pi) + std::log(S.determinant()) +
                            resid.dot(S.inverse() * resid));

  const auto post = kalman_smooth(m, obs, var);
  for (int t = 0; t < 3; ++t) {
    CHECK(std::abs(post.smoothed_means[static_cast<std::size_t>(t)](0) - mean(t)) < 1e-10);
    CHECK(std::abs(post.smoothed_covs[static_cast<std::size_t>(t)](0, 0) - cov(t, t)) < 1e-10);
  }
  CHECK(std::abs(post.log_likelihood - ll) < 1e-10);
  CHECK(kalman_log_likelihood(m, obs, var) == post.log_likelihood);
}

TEST_CASE("kalman_smooth: randomized instances match the dense oracle") {
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<int> dim(1, 5);
  double worst = 0.0, worst_ll = 0.0;
  for (int i = 0; i < 200; ++i) {
    const int d = dim(rng);
    const int T = std::uniform_int_distribution<int>(1, 30 / d)(rng);
    const int n = std::uniform_int_distribution<int>(1, 6)(rng);
    const Instance inst = random_instance(rng, d, T, n, 0.15);
    const auto post = kalman_smooth(inst.model, inst.obs, inst.var);
    const auto ref = dense(inst);
    worst = std::max(worst, max_abs_diff(post, ref));
    worst_ll = std::max(worst_ll, std::abs(post.log_likelihood - ref.log_likelihood));
  }
  CHECK(worst <= 1e-8);
  CHECK(worst_ll <= 1e-8);
}

TEST_CASE("kalman_smooth: filtered covariances stay PSD over a long run") {
  std::mt19937_64 rng(3);
  Instance inst = random_instance(rng, 3, 2000, 6, 0.1);
  inst.model.dynamics_cov *= 1e-6;
  inst.var.array() *= 1e-3;
  const auto post = kalman_smooth(inst.model, inst.obs, inst.var);
  double min_eig = 1.0;
  for (const auto& P : post.filtered_covs) {
    CHECK((P - P.transpose()).cwiseAbs().maxCoeff() == 0.0);
    min_eig = std::min(min_eig, Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(P).eigenvalues().minCoeff());
  }
  for (const auto& P : post.smoothed_covs) {
    min_eig = std::min(min_eig, Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(P).eigenvalues().minCoeff());
  }
  CHECK(min_eig >= -1e-10);
  CHECK(std::isfinite(post.log_likelihood));
}

TEST_CASE("kalman_smooth: diffuse dynamics give per-step least squares") {
  std::mt19937_64 rng(4);
  Instance inst = random_instance(rng, 3, 8, 6, 0.0);
  inst.model.dynamics_cov = 1e12 * Eigen::MatrixXd::Identity(3, 3);
  inst.model.initial_cov = 1e12 * Eigen::MatrixXd::Identity(3, 3);
  const auto post = kalman_smooth(inst.model, inst.obs, inst.var);
  const Eigen::MatrixXd& W = inst.model.obs_map;
  for (Eigen::Index t = 0; t < 8; ++t) {
    const Eigen::VectorXd w = inst.var.row(t).transpose().cwiseInverse();
    const Eigen::MatrixXd A = W.transpose() * w.asDiagonal() * W;
    const Eigen::VectorXd b =
        W.transpose() * w.asDiagonal() * (inst.obs.row(t).transpose() - inst.model.obs_offset);
    const Eigen::VectorXd gls = A.ldlt().solve(b);
    const auto& got = post.smoothed_means[static_cast<std::size_t>(t)];
    CHECK((got - gls).norm() <= 1e-4 * std::max(1.0, gls.norm()));
  }
}

TEST_CASE("kalman_smooth: missing entries equal huge variances") {
  std::mt19937_64 rng(5);
  Instance inst = random_instance(rng, 2, 40, 4, 0.2);
  Instance filled = inst;
  for (Eigen::Index i = 0; i < inst.obs.size(); ++i) {
    if (std::isnan(inst.obs.data()[i])) {
      filled.obs.data()[i] = 5.0;
      filled.var.data()[i] = 1e12;
    }
  }
  const auto a = kalman_smooth(inst.model, inst.obs, inst.var);
  const auto b = kalman_smooth(filled.model, filled.obs, filled.var);
  CHECK((a.smoothed_mean_matrix() - b.smoothed_mean_matrix()).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("kalman_smooth: likelihood adds over independent blocks") {
  std::mt19937_64 rng(6);
  Instance a = random_instance(rng, 2, 15, 3, 0.1);
  Instance b = random_instance(rng, 1, 15, 2, 0.1);
  Instance joint;
  auto& m = joint.model;
  m.initial_mean.resize(3);
  m.initial_mean << a.model.initial_mean, b.model.initial_mean;
  m.initial_cov = Eigen::MatrixXd::Zero(3, 3);
  m.initial_cov.topLeftCorner(2, 2) = a.model.initial_cov;
  m.initial_cov(2, 2) = b.model.initial_cov(0, 0);
  m.dynamics_cov = Eigen::MatrixXd::Zero(3, 3);
  m.dynamics_cov.topLeftCorner(2, 2) = a.model.dynamics_cov;
  m.dynamics_cov(2, 2) = b.model.dynamics_cov(0, 0);
  m.obs_map = Eigen::MatrixXd::Zero(5, 3);
  m.obs_map.topLeftCorner(3, 2) = a.model.obs_map;
  m.obs_map.bottomRightCorner(2, 1) = b.model.obs_map;
  m.obs_offset.resize(5);
  m.obs_offset << a.model.obs_offset, b.model.obs_offset;
  joint.obs.resize(15, 5);
  joint.obs << a.obs, b.obs;
  joint.var.resize(15, 5);
  joint.var << a.var, b.var;
  const double total = kalman_log_likelihood(m, joint.obs, joint.var);
  const double sum = kalman_log_likelihood(a.model, a.obs, a.var) +
                     kalman_log_likelihood(b.model, b.obs, b.var);
  CHECK(std::abs(total - sum) < 1e-9 * std::abs(sum));
}

TEST_CASE("kalman_smooth: errors") {
  std::mt19937_64 rng(7);
  Instance inst = random_instance(rng, 2, 5, 3, 0.0);
  Instance neg = inst;
  neg.model.initial_cov.setZero();
  neg.var(0, 0) = -5.0;
  CHECK_THROWS_AS(kalman_smooth(neg.model, neg.obs, neg.var), NumericalFailure);
  CHECK_THROWS_AS(kalman_smooth(inst.model, inst.obs.leftCols(2), inst.var), ShapeMismatch);
  Instance zero = inst;
  zero.model.initial_cov.setZero();
  zero.var.setZero();
  CHECK_NOTHROW(kalman_smooth(zero.model, zero.obs.topRows(1), zero.var.topRows(1)));
}

TEST_CASE("extended_kalman_smooth: affine map reproduces the linear smoother") {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 20; ++i) {
    const int d = 1 + i % 4;
    const Instance inst = random_instance(rng, d, 25, 5, 0.1);
    NonlinearGaussianModel nl;
    nl.initial_mean = inst.model.initial_mean;
    nl.initial_cov = inst.model.initial_cov;
    nl.dynamics_cov = inst.model.dynamics_cov;
    nl.obs_map = std::make_shared<AffineMap>(inst.model.obs_map, inst.model.obs_offset);
    const auto lin = kalman_smooth(inst.model, inst.obs, inst.var);
    const auto ext = extended_kalman_smooth(nl, inst.obs, inst.var);
    CHECK((lin.smoothed_mean_matrix() - ext.smoothed_mean_matrix()).cwiseAbs().maxCoeff() < 1e-12);
    double cov_diff = 0.0;
    for (std::size_t t = 0; t < lin.smoothed_covs.size(); ++t) {
      cov_diff = std::max(cov_diff, (lin.smoothed_covs[t] - ext.smoothed_covs[t]).cwiseAbs().maxCoeff());
    }
    CHECK(cov_diff < 1e-12);
    CHECK(std::abs(lin.log_likelihood - ext.log_likelihood) < 1e-12 * std::max(1.0, std::abs(lin.log_likelihood)));
    CHECK(extended_kalman_log_likelihood(nl, inst.obs, inst.var) == doctest::Approx(ext.log_likelihood));
  }
}

TEST_CASE("extended_kalman_smooth: non-finite Jacobians are reported") {
  NonlinearGaussianModel nl;
  nl.initial_mean = Eigen::VectorXd::Zero(1);
  nl.initial_cov = Eigen::MatrixXd::Identity(1, 1);
  nl.dynamics_cov = Eigen::MatrixXd::Identity(1, 1);
  nl.obs_map = std::make_shared<FiniteDifferenceMap>(
      [](const Eigen::VectorXd& z) {
        Eigen::VectorXd out(1);
        out(0) = z(0) == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
        return out;
      },
      1, 1);
  CHECK_THROWS_AS(extended_kalman_smooth(nl, Eigen::MatrixXd::Ones(2, 1), Eigen::MatrixXd::Ones(2, 1)),
                  JacobianFailure);
}

TEST_CASE("FiniteDifferenceMap: central differences of a smooth map") {
  const FiniteDifferenceMap map(
      [](const Eigen::VectorXd& z) {
        Eigen::VectorXd out(2);
        out << std::sin(z(0)) * z(1), z(0) * z(0);
        return out;
      },
      2, 2);
  Eigen::VectorXd value, z(2);
  Eigen::MatrixXd jac;
  std::vector<char> valid;
  z << 0.3, -1.2;
  map.evaluate(z, value, jac, valid);
  Eigen::Matrix2d expected;
  expected << std::cos(0.3) * -1.2, std::sin(0.3), 0.6, 0.0;
  CHECK((jac - expected).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("marginal_loglik_grad_s: derivative matches a five-point stencil") {
  LinearGaussianModel m;
  m.initial_mean = Eigen::VectorXd::Zero(1);
  m.initial_cov = Eigen::MatrixXd::Constant(1, 1, 1.0);
  m.dynamics_cov = Eigen::MatrixXd::Constant(1, 1, 0.5);
  m.obs_map = Eigen::MatrixXd::Ones(1, 1);
  m.obs_offset = Eigen::VectorXd::Zero(1);
  Eigen::MatrixXd obs(3, 1), var(3, 1);
  obs << 0.2, 1.4, -0.3;
  var << 0.3, 0.3, 0.5;
  auto ll = [&](double log_s) {
    LinearGaussianModel scaled = m;
    scaled.dynamics_cov *= std::exp(log_s);
    return kalman_log_likelihood(scaled, obs, var);
  };
  for (double s : {0.05, 0.7, 3.0, 40.0}) {
    const auto got = marginal_loglik_grad_s(m, obs, var, s);
    const double x = std::log(s);
    const double h = 1e-3;
    const double stencil = (-ll(x + 2 * h) + 8 * ll(x + h) - 8 * ll(x - h) + ll(x - 2 * h)) / (12 * h);
    CHECK(std::abs(got.d_log_s - stencil) < 1e-6);
    CHECK(got.loglik == ll(x));
  }
  CHECK_THROWS_AS(marginal_loglik_grad_s(m, obs, var, 0.0), ConfigError);
}

TEST_CASE("maximize_smoothing: concave objective") {
  auto objective = [](double s) { return -std::pow(std::log(s) - 2.0, 2); };
  const auto res = maximize_smoothing(objective, 1.0);
  CHECK(res.converged);
  CHECK(std::abs(std::log(res.s) - 2.0) < 0.05);
  CHECK(res.loglik >= res.initial_loglik);
  CHECK(res.loglik >= objective(10 * res.s));
  CHECK(res.loglik >= objective(0.1 * res.s));
  CHECK(res.iterations <= 100);
}

TEST_CASE("maximize_smoothing: never returns a worse point than the start") {
  // Starting at the optimum of a sharp peak, the first Adam step overshoots.
  auto objective = [](double s) { return -1e4 * std::pow(std::log(s), 2); };
  const auto res = maximize_smoothing(objective, 1.0);
  CHECK(res.loglik >= res.initial_loglik);
  CHECK(res.s == doctest::Approx(1.0));

  SmoothingSearchOptions few;
  few.max_iterations = 3;
  const auto capped = maximize_smoothing([](double s) { return std::log(s); }, 1.0, few);
  CHECK_FALSE(capped.converged);
  CHECK(capped.iterations == 3);
  CHECK(capped.s > 1.0);
}
