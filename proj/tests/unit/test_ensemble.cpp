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

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "mveks/ensemble.hpp"
#include "mveks/errors.hpp"
#include "mveks/synth.hpp"

using namespace mveks;

namespace {

EnsembleSeries make_series(Eigen::Index T, int V, std::vector<Eigen::MatrixXd> members) {
  EnsembleSeries s;
  s.keypoint = "kp";
  for (int v = 0; v < V; ++v) s.view_names.push_back("v" + std::to_string(v));
  for (Eigen::Index t = 0; t < T; ++t) s.frame_index.push_back(t);
  s.members = std::move(members);
  return s;
}

std::vector<Eigen::MatrixXd> random_members(std::mt19937_64& rng, int M, Eigen::Index T, int V,
                                            double sigma) {
  std::normal_distribution<double> n(100.0, sigma);
  std::vector<Eigen::MatrixXd> out;
  for (int m = 0; m < M; ++m) {
    Eigen::MatrixXd x(T, 2 * V);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
    out.push_back(x);
  }
  return out;
}

}  // namespace

TEST_CASE("summarize: hand arithmetic") {
  Eigen::MatrixXd a(1, 4), b(1, 4), c(1, 4);
  a << 1, 0, 5, 5;
  b << 2, 0, 5, 5;
  c << 9, 0, 5, 5;
  const auto sum = summarize(make_series(1, 2, {a, b, c}));
  CHECK(sum.median(0, 0) == 2.0);
  CHECK(sum.variance(0, 0) == doctest::Approx(19.0).epsilon(1e-14));
  CHECK(sum.esd(0, 0) == doctest::Approx(std::sqrt(19.0)));
  // Identical members hit the floor exactly.
  CHECK(sum.variance(0, 1) == kVarianceFloor);
  CHECK(sum.variance(0, 2) == kVarianceFloor);
}

TEST_CASE("summarize: single member and missing entries") {
  std::mt19937_64 rng(1);
  auto one = random_members(rng, 1, 5, 3, 2.0);
  const auto sum = summarize(make_series(5, 3, one));
  CHECK(sum.median == one[0]);
  CHECK((sum.variance.array() == kVarianceFloorMissing).all());

  auto members = random_members(rng, 4, 3, 2, 2.0);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  members[0](0, 0) = nan;
  members[1](1, 1) = nan;
  members[2](1, 1) = nan;
  members[3](1, 1) = nan;
  const auto partial = summarize(make_series(3, 2, members));
  std::vector<double> rest = {members[1](0, 0), members[2](0, 0), members[3](0, 0)};
  std::sort(rest.begin(), rest.end());
  CHECK(partial.median(0, 0) == rest[1]);
  CHECK(partial.median(1, 1) == members[0](1, 1));
  CHECK(partial.variance(1, 1) == kVarianceFloorMissing);

  members[0](2, 3) = nan;
  for (auto& m : members) m(2, 3) = nan;
  CHECK_THROWS_AS(summarize(make_series(3, 2, members)), EmptyEnsemble);
}

TEST_CASE("summarize: even member count averages the central pair") {
  Eigen::MatrixXd a(1, 4), b(1, 4), c(1, 4), d(1, 4);
  a << 1, 0, 0, 0;
  b << 4, 0, 0, 0;
  c << 2, 0, 0, 0;
  d << 10, 0, 0, 0;
  CHECK(summarize(make_series(1, 2, {a, b, c, d})).median(0, 0) == 3.0);
}

TEST_CASE("summarize: Monte Carlo variance matches sigma^2") {
  std::mt19937_64 rng(2);
  const double sigma = 3.0;
  const auto sum = summarize(make_series(10000, 2, random_members(rng, 5, 10000, 2, sigma)));
  for (Eigen::Index c = 0; c < 4; ++c) {
    CHECK(sum.variance.col(c).mean() == doctest::Approx(sigma * sigma).epsilon(0.05));
  }
}

TEST_CASE("summarize: permutation, translation and scaling properties") {
  std::mt19937_64 rng(3);
  auto members = random_members(rng, 5, 50, 3, 4.0);
  const auto base = summarize(make_series(50, 3, members));

  auto shuffled = members;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  const auto perm = summarize(make_series(50, 3, shuffled));
  CHECK(perm.median == base.median);
  CHECK((perm.variance - base.variance).cwiseAbs().maxCoeff() < 1e-10);

  auto moved = members;
  for (auto& m : moved) m.array() += 37.5;
  const auto trans = summarize(make_series(50, 3, moved));
  CHECK((trans.variance - base.variance).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((trans.median.array() - base.median.array() - 37.5).abs().maxCoeff() < 1e-12);

  auto scaled = members;
  for (auto& m : scaled) m *= 3.0;
  const auto sc = summarize(make_series(50, 3, scaled));
  CHECK((sc.variance - 9.0 * base.variance).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("summarize: invalid series") {
  std::mt19937_64 rng(4);
  auto members = random_members(rng, 2, 4, 2, 1.0);
  auto series = make_series(4, 2, members);
  series.members[1].conservativeResize(3, 4);
  CHECK_THROWS_AS(summarize(series), ShapeMismatch);
  auto empty = make_series(4, 2, {});
  CHECK_THROWS_AS(summarize(empty), EmptyEnsemble);
}

TEST_CASE("esd_filter_mask") {
  std::mt19937_64 rng(5);
  const auto sum = summarize(make_series(20, 3, random_members(rng, 3, 20, 3, 2.0)));
  const BoolMatrix all = esd_filter_mask(sum, 0.0);
  CHECK(all.rows() == 20);
  CHECK(all.cols() == 3);
  CHECK(all.all());
  CHECK_FALSE(esd_filter_mask(sum, std::numeric_limits<double>::infinity()).any());
  const BoolMatrix two = esd_filter_mask(sum, 2.0);
  for (Eigen::Index t = 0; t < 20; ++t)
    for (Eigen::Index v = 0; v < 3; ++v)
      CHECK(two(t, v) == (std::max(sum.esd(t, 2 * v), sum.esd(t, 2 * v + 1)) > 2.0));
}

TEST_CASE("esd_filter_mask flags injected outliers") {
  SynthConfig cfg;
  cfg.seed = 7;
  cfg.num_frames = 2000;
  cfg.num_members = 3;
  cfg.noise.sigma_default = 0.5;
  cfg.noise.outlier_rate = 0.01;
  const SynthResult synth = generate(cfg);
  const auto sum = summarize(synth.series[0]);
  const BoolMatrix mask = esd_filter_mask(sum, 3.0);
  long flagged = 0, total = 0;
  for (const auto& rec : synth.ledger) {
    if (rec.kind != CorruptionKind::kOutlier) continue;
    ++total;
    flagged += mask(rec.frame, rec.view) ? 1 : 0;
  }
  REQUIRE(total > 50);
  CHECK(static_cast<double>(flagged) >= 0.9 * static_cast<double>(total));
}
