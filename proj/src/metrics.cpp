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

#include "mveks/metrics.hpp"

#include <cmath>
#include <limits>

#include <Eigen/QR>

#include "mveks/errors.hpp"

namespace mveks {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_thresholds(const std::vector<double>& thresholds) {
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (!(thresholds[i] >= 0.0)) throw ConfigError("error_vs_esd: thresholds must be non-negative");
    if (i > 0 && !(thresholds[i] > thresholds[i - 1])) {
      throw ConfigError("error_vs_esd: thresholds must be strictly ascending");
    }
  }
}

}  // namespace

Eigen::MatrixXd pixel_error(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols() || pred.cols() % 2 != 0) {
    throw ShapeMismatch("pixel_error: prediction and truth must both be T x 2V");
  }
  Eigen::MatrixXd err(pred.rows(), pred.cols() / 2);
  for (Eigen::Index t = 0; t < pred.rows(); ++t) {
    for (Eigen::Index v = 0; v < err.cols(); ++v) {
      const double dx = pred(t, 2 * v) - truth(t, 2 * v);
      const double dy = pred(t, 2 * v + 1) - truth(t, 2 * v + 1);
      err(t, v) = std::hypot(dx, dy);
    }
  }
  return err;
}

double mean_pixel_error(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth) {
  const Eigen::MatrixXd err = pixel_error(pred, truth);
  double sum = 0.0;
  long n = 0;
  for (Eigen::Index i = 0; i < err.size(); ++i) {
    if (std::isfinite(err(i))) {
      sum += err(i);
      ++n;
    }
  }
  return n > 0 ? sum / static_cast<double>(n) : kNaN;
}

ErrorCurve error_vs_esd(const std::vector<Eigen::MatrixXd>& pred,
                        const std::vector<Eigen::MatrixXd>& truth,
                        const std::vector<Eigen::MatrixXd>& esd,
                        const std::vector<double>& thresholds, EsdPooling pooling) {
  check_thresholds(thresholds);
  if (pred.size() != truth.size() || pred.size() != esd.size()) {
    throw ShapeMismatch("error_vs_esd: one matrix per keypoint in each argument");
  }
  std::vector<double> errors;
  std::vector<double> spreads;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    if (esd[k].rows() != pred[k].rows() || esd[k].cols() != pred[k].cols()) {
      throw ShapeMismatch("error_vs_esd: e.s.d. must match the prediction shape");
    }
    const Eigen::MatrixXd err = pixel_error(pred[k], truth[k]);
    for (Eigen::Index t = 0; t < err.rows(); ++t) {
      for (Eigen::Index v = 0; v < err.cols(); ++v) {
        const double sx = esd[k](t, 2 * v);
        const double sy = esd[k](t, 2 * v + 1);
        const double s = pooling == EsdPooling::kMax ? std::max(sx, sy) : 0.5 * (sx + sy);
        if (!std::isfinite(err(t, v)) || !std::isfinite(s)) continue;
        errors.push_back(err(t, v));
        spreads.push_back(s);
      }
    }
  }

  ErrorCurve curve;
  curve.thresholds = thresholds;
  for (double thr : thresholds) {
    double sum = 0.0;
    long n = 0;
    for (std::size_t i = 0; i < errors.size(); ++i) {
      if (spreads[i] > thr) {
        sum += errors[i];
        ++n;
      }
    }
    curve.count.push_back(n);
    curve.mean_error.push_back(n > 0 ? std::optional<double>(sum / static_cast<double>(n)) : std::nullopt);
    curve.fraction_included.push_back(
        errors.empty() ? 0.0 : static_cast<double>(n) / static_cast<double>(errors.size()));
  }
  return curve;
}

ErrorCurve error_vs_esd(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth,
                        const Eigen::MatrixXd& esd, const std::vector<double>& thresholds,
                        EsdPooling pooling) {
  return error_vs_esd(std::vector<Eigen::MatrixXd>{pred}, std::vector<Eigen::MatrixXd>{truth},
                      std::vector<Eigen::MatrixXd>{esd}, thresholds, pooling);
}

double reprojection_error_3d(const Rig& rig, const Eigen::VectorXd& row) {
  if (row.size() != static_cast<Eigen::Index>(2 * rig.size())) {
    throw ShapeMismatch("reprojection_error_3d: row must have 2V entries");
  }
  const Point3 p = triangulate_median(rig, row);
  double sum = 0.0;
  int n = 0;
  for (std::size_t v = 0; v < rig.size(); ++v) {
    const Point2 q(row(static_cast<Eigen::Index>(2 * v)), row(static_cast<Eigen::Index>(2 * v + 1)));
    if (is_missing(q)) continue;
    sum += (project(rig[v], p) - q).norm();
    ++n;
  }
  return sum / n;
}

double reprojection_error_pca(const PcaResult& pca, const Eigen::VectorXd& row, Eigen::Index dim) {
  if (row.size() != pca.mean.size() || row.size() % 2 != 0) {
    throw ShapeMismatch("reprojection_error_pca: row does not match the PCA dimension");
  }
  if (dim < 1 || dim > pca.components.cols()) throw ConfigError("reprojection_error_pca: bad dimension");
  std::vector<Eigen::Index> views;
  for (Eigen::Index v = 0; v < row.size() / 2; ++v) {
    if (std::isfinite(row(2 * v)) && std::isfinite(row(2 * v + 1))) views.push_back(v);
  }
  if (views.size() < 2 || static_cast<Eigen::Index>(2 * views.size()) < dim) {
    throw InsufficientViews("reprojection_error_pca: need at least two observed views");
  }
  const auto n = static_cast<Eigen::Index>(2 * views.size());
  Eigen::MatrixXd C(n, dim);
  Eigen::VectorXd y(n);
  for (std::size_t i = 0; i < views.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(2 * i);
    C.middleRows<2>(r) = pca.components.block(2 * views[i], 0, 2, dim);
    y.segment<2>(r) = row.segment<2>(2 * views[i]) - pca.mean.segment<2>(2 * views[i]);
  }
  const Eigen::VectorXd z = C.colPivHouseholderQr().solve(y);
  const Eigen::VectorXd resid = C * z - y;
  double sum = 0.0;
  for (std::size_t i = 0; i < views.size(); ++i) sum += resid.segment<2>(static_cast<Eigen::Index>(2 * i)).norm();
  return sum / static_cast<double>(views.size());
}

Eigen::VectorXd reprojection_error_3d(const Rig& rig, const Eigen::MatrixXd& obs) {
  Eigen::VectorXd out(obs.rows());
  for (Eigen::Index t = 0; t < obs.rows(); ++t) {
    try {
      out(t) = reprojection_error_3d(rig, Eigen::VectorXd(obs.row(t).transpose()));
    } catch (const InsufficientViews&) {
      out(t) = kNaN;
    } catch (const DegenerateGeometry&) {
      out(t) = kNaN;
    } catch (const NonPositiveDepth&) {
      out(t) = kNaN;
    }
  }
  return out;
}

Eigen::VectorXd reprojection_error_pca(const PcaResult& pca, const Eigen::MatrixXd& obs,
                                       Eigen::Index dim) {
  Eigen::VectorXd out(obs.rows());
  for (Eigen::Index t = 0; t < obs.rows(); ++t) {
    try {
      out(t) = reprojection_error_pca(pca, Eigen::VectorXd(obs.row(t).transpose()), dim);
    } catch (const InsufficientViews&) {
      out(t) = kNaN;
    }
  }
  return out;
}

}  // namespace mveks
