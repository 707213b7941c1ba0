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

#include "mveks/ensemble.hpp"

#include <algorithm>
#include <cmath>

#include "mveks/errors.hpp"
#include "stats_util.hpp"

namespace mveks {

void EnsembleSeries::validate() const {
  if (frame_index.empty()) throw DataError("keypoint '" + keypoint + "': no frames");
  if (view_names.size() < 2) throw DataError("keypoint '" + keypoint + "': need at least two views");
  if (members.empty()) throw EmptyEnsemble("keypoint '" + keypoint + "': no ensemble members");
  const auto rows = static_cast<Eigen::Index>(frame_index.size());
  const auto cols = static_cast<Eigen::Index>(2 * view_names.size());
  for (const auto& m : members) {
    if (m.rows() != rows || m.cols() != cols) {
      throw ShapeMismatch("keypoint '" + keypoint + "': ensemble member has shape " +
                          std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                          ", expected " + std::to_string(rows) + "x" + std::to_string(cols));
    }
  }
}

EnsembleSummary summarize(const EnsembleSeries& series) {
  series.validate();
  const auto rows = static_cast<Eigen::Index>(series.num_frames());
  const auto cols = static_cast<Eigen::Index>(2 * series.num_views());

  EnsembleSummary out;
  out.median.resize(rows, cols);
  out.variance.resize(rows, cols);
  std::vector<double> values;
  values.reserve(series.num_members());
  for (Eigen::Index t = 0; t < rows; ++t) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      values.clear();
      for (const auto& m : series.members) {
        const double v = m(t, c);
        if (std::isfinite(v)) values.push_back(v);
      }
      if (values.empty()) {
        throw EmptyEnsemble("keypoint '" + series.keypoint + "': frame " +
                            std::to_string(series.frame_index[static_cast<std::size_t>(t)]) +
                            " column " + std::to_string(c) + " has no valid ensemble member");
      }
      double var = kVarianceFloorMissing;
      if (values.size() >= 2) {
        double mean = 0.0;
        for (double v : values) mean += v;
        mean /= static_cast<double>(values.size());
        double ss = 0.0;
        for (double v : values) ss += (v - mean) * (v - mean);
        var = ss / static_cast<double>(values.size() - 1);
      }
      out.variance(t, c) = std::max(var, kVarianceFloor);
      out.median(t, c) = detail::median_inplace(values);
    }
  }
  refresh_esd(out);
  return out;
}

void refresh_esd(EnsembleSummary& summary) { summary.esd = summary.variance.cwiseSqrt(); }

BoolMatrix esd_filter_mask(const EnsembleSummary& summary, double threshold) {
  const Eigen::Index views = summary.num_views();
  BoolMatrix mask(summary.num_frames(), views);
  for (Eigen::Index t = 0; t < summary.num_frames(); ++t) {
    for (Eigen::Index v = 0; v < views; ++v) {
      mask(t, v) = std::max(summary.esd(t, 2 * v), summary.esd(t, 2 * v + 1)) > threshold;
    }
  }
  return mask;
}

}  // namespace mveks
