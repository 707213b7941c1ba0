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
#include <filesystem>
#include <random>
#include <set>

#include "doctest.h"
#include "mveks/csv_io.hpp"
#include "mveks/errors.hpp"
#include "mveks/nonlinear_eks.hpp"
#include "mveks/pipeline.hpp"
#include "mveks/selection.hpp"
#include "mveks/synth.hpp"

using namespace mveks;

namespace {

std::vector<FrameScore> make_scores(const std::vector<double>& s, const std::string& video = "v") {
  std::vector<FrameScore> out;
  for (std::size_t i = 0; i < s.size(); ++i) out.push_back({video, static_cast<long>(i), s[i]});
  return out;
}

std::set<long> frame_set(const std::vector<SelectedFrame>& sel) {
  std::set<long> out;
  for (const auto& f : sel) out.insert(f.frame);
  return out;
}

}  // namespace

TEST_CASE("quality_filter: ordering and ties") {
  const auto equal = quality_filter(make_scores(std::vector<double>(10, 1.0)), 4);
  REQUIRE(equal.size() == 4);
  for (long i = 0; i < 4; ++i) CHECK(equal[static_cast<std::size_t>(i)].frame == i);

  std::vector<FrameScore> mixed = make_scores({3.0, 1.0, 2.0, 1.0}, "b");
  const auto more = make_scores({1.0, 0.5}, "a");
  mixed.insert(mixed.end(), more.begin(), more.end());
  const auto kept = quality_filter(mixed, 3);
  REQUIRE(kept.size() == 3);
  CHECK((kept[0].video == "a" && kept[0].frame == 1));
  CHECK((kept[1].video == "a" && kept[1].frame == 0));
  CHECK((kept[2].video == "b" && kept[2].frame == 1));

  CHECK(quality_filter(make_scores({1.0, 2.0}), 10).size() == 2);
  CHECK_THROWS_AS(quality_filter(make_scores({1.0}), 0), ConfigError);

  std::mt19937_64 rng(1);
  std::exponential_distribution<double> e(1.0);
  std::vector<double> s(200);
  for (double& x : s) x = e(rng);
  const auto top = quality_filter(make_scores(s), 50);
  double worst_kept = 0.0;
  for (const auto& f : top) worst_kept = std::max(worst_kept, f.sigma2_max);
  std::set<long> kept_ids;
  for (const auto& f : top) kept_ids.insert(f.frame);
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!kept_ids.count(static_cast<long>(i))) CHECK(worst_kept <= s[i]);
  }
}

TEST_CASE("quality_filter: corrupted frames are rejected") {
  SynthConfig cfg;
  cfg.seed = 2;
  cfg.num_frames = 2000;
  cfg.num_keypoints = 4;
  cfg.noise.outlier_rate = 0.0015;
  const auto r = generate(cfg);
  const auto bad = r.corrupted_frames();
  const long n_bad = std::count(bad.begin(), bad.end(), 1);
  CHECK(n_bad > 100);
  CHECK(n_bad < 300);

  std::vector<double> s(2000, 0.0);
  for (const auto& series : r.series) {
    const auto sum = summarize(series);
    for (Eigen::Index t = 0; t < 2000; ++t) s[static_cast<std::size_t>(t)] = std::max(s[static_cast<std::size_t>(t)], sum.variance.row(t).maxCoeff());
  }
  const auto kept = quality_filter(make_scores(s), 1000);
  long clean = 0;
  for (const auto& f : kept) clean += bad[static_cast<std::size_t>(f.frame)] ? 0 : 1;
  CHECK(clean >= 950);
}

TEST_CASE("kmeans and diversity_select") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 0.1);
  Eigen::MatrixXd pts(100, 3);
  for (Eigen::Index i = 0; i < 100; ++i) {
    pts.row(i) << g(rng), g(rng), g(rng);
    if (i >= 50) pts(i, 0) += 10.0;
  }
  const auto scores = make_scores(std::vector<double>(100, 1.0));
  const auto sel = diversity_select(scores, pts, 2, 0);
  REQUIRE(sel.size() == 2);
  CHECK(((sel[0].frame < 50) != (sel[1].frame < 50)));

  const KMeansResult km = kmeans(pts, 2);
  for (Eigen::Index i = 1; i < 50; ++i) CHECK(km.labels[static_cast<std::size_t>(i)] == km.labels[0]);
  for (Eigen::Index i = 51; i < 100; ++i) CHECK(km.labels[static_cast<std::size_t>(i)] == km.labels[50]);

  // Closest member to its center, checked directly.
  for (const auto& f : sel) {
    const int j = f.cluster;
    double best = INFINITY;
    for (Eigen::Index i = 0; i < 100; ++i) {
      if (km.labels[static_cast<std::size_t>(i)] == j) best = std::min(best, (pts.row(i) - km.centers.row(j)).squaredNorm());
    }
    CHECK((pts.row(f.frame) - km.centers.row(j)).squaredNorm() == best);
  }

  const auto all = diversity_select(make_scores(std::vector<double>(12, 1.0)), pts.topRows(12), 12, 0);
  CHECK(all.size() == 12);
  CHECK(frame_set(all).size() == 12);

  CHECK_THROWS_AS(diversity_select(make_scores({1.0, 1.0}), pts.topRows(2), 3, 0), TooFewFrames);

  const auto a = diversity_select(scores, pts, 7, 42);
  const auto b = diversity_select(scores, pts, 7, 42);
  CHECK(frame_set(a) == frame_set(b));

  const auto rnd = random_select(scores, 10, 5);
  CHECK(rnd.size() == 10);
  CHECK(frame_set(rnd).size() == 10);
  CHECK(frame_set(rnd) == frame_set(random_select(scores, 10, 5)));
}

TEST_CASE("center_poses removes per-frame translation") {
  Eigen::MatrixXd p(2, 9);
  p << 0, 0, 0, 1, 1, 1, 5, 5, 5,
       10, 20, 30, 11, 21, 31, 15, 25, 35;
  const Eigen::MatrixXd c = center_poses(p);
  CHECK((c.row(0) - c.row(1)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(c(0, 3) == 0.0);
  CHECK_THROWS_AS(center_poses(p, 2), ShapeMismatch);
}

TEST_CASE("PCA poses select the same pose states as triangulated poses") {
  // Twelve well separated postures held for 50 frames each with jitter.
  SynthConfig cfg;
  cfg.seed = 4;
  cfg.num_frames = 600;
  cfg.num_keypoints = 4;
  const auto base = generate(cfg);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<Eigen::MatrixXd> shapes(12, Eigen::MatrixXd(4, 3));
  for (auto& s : shapes) s = Eigen::MatrixXd::NullaryExpr(4, 3, [&] { return 0.6 * g(rng); });

  TrackSet tracks;
  tracks.views = base.rig.names();
  tracks.keypoints = base.keypoints;
  for (long t = 0; t < 600; ++t) tracks.frames.push_back(t);
  std::vector<int> state(600);
  for (int k = 0; k < 4; ++k) {
    Eigen::MatrixXd x(600, 12);
    for (long t = 0; t < 600; ++t) {
      const int st = static_cast<int>(t / 50);
      state[static_cast<std::size_t>(t)] = st;
      const Point3 p = shapes[static_cast<std::size_t>(st)].row(k).transpose() +
                       Point3(0.03 * g(rng), 0.03 * g(rng), 0.03 * g(rng));
      x.row(t) = project_rig(base.rig, p).transpose();
    }
    tracks.means.push_back(x);
  }
  const auto scores = make_scores(std::vector<double>(600, 1.0));
  auto states_of = [&](PoseSource src) {
    const Eigen::MatrixXd poses = center_poses(poses_from_tracks(tracks, base.rig, src));
    std::set<int> out;
    for (const auto& f : diversity_select(scores, poses, 12, 0)) out.insert(state[static_cast<std::size_t>(f.frame)]);
    return out;
  };
  const auto tri = states_of(PoseSource::kTriangulate);
  const auto pc = states_of(PoseSource::kPca);
  std::set<int> both, either;
  std::set_intersection(tri.begin(), tri.end(), pc.begin(), pc.end(), std::inserter(both, both.end()));
  std::set_union(tri.begin(), tri.end(), pc.begin(), pc.end(), std::inserter(either, either.end()));
  CHECK(static_cast<double>(both.size()) / static_cast<double>(either.size()) >= 0.8);
}

TEST_CASE("pseudo-labels: gather, combine and re-ingest") {
  SynthConfig cfg;
  cfg.seed = 5;
  cfg.num_frames = 200;
  cfg.num_keypoints = 3;
  const auto r = generate(cfg);
  const auto views = r.rig.names();
  std::vector<Eigen::MatrixXd> tracks = r.truth2d;
  std::vector<long> frames;
  for (long t = 0; t < 200; ++t) frames.push_back(100 + t);

  std::vector<SelectedFrame> sel{{"vid", 105, 0, 1.0}, {"vid", 150, 1, 2.0}, {"vid", 299, 2, 0.5}};
  const auto labels = gather_pseudolabels(sel, frames, tracks, views, r.keypoints);
  REQUIRE(labels.coords.size() == views.size());
  CHECK(labels.coords[1](1, 2) == tracks[1](50, 2));
  CHECK_THROWS_AS(gather_pseudolabels({{"vid", 50, 0, 0.0}}, frames, tracks, views, r.keypoints), DataError);

  const auto pass = combine_labels(PseudoLabelSet{views, r.keypoints, "eks", {}, std::vector<Eigen::MatrixXd>(views.size(), Eigen::MatrixXd(0, 6))});
  CHECK(pass.size() == views.size());
  CHECK(pass[0].frames.empty());

  std::vector<KeypointTable> gt;
  for (std::size_t v = 0; v < views.size(); ++v) {
    KeypointTable t;
    t.keypoints = r.keypoints;
    t.frames = {1, 2};
    t.videos = {"vid", "vid"};
    t.coords = Eigen::MatrixXd::Constant(2, 6, 7.0);
    gt.push_back(t);
  }
  const auto gt_only = combine_labels(gather_pseudolabels({}, frames, tracks, views, r.keypoints), gt);
  CHECK(gt_only[0].coords == gt[0].coords);
  CHECK(gt_only[0].frames == gt[0].frames);
  CHECK(gt_only[0].provenance == std::vector<std::string>{"label", "label"});

  const auto merged = combine_labels(labels, gt);
  CHECK(merged[0].frames.size() == 5);
  CHECK(merged[0].provenance.back() == "pseudo");
  auto clash = gt;
  for (auto& t : clash) t.frames[1] = 150;
  CHECK_THROWS_AS(combine_labels(labels, clash), CollisionError);
  for (auto& t : clash) t.videos[1] = "other";
  CHECK_NOTHROW(combine_labels(labels, clash));

  const auto root = std::filesystem::temp_directory_path() / "mveks_test_labels";
  std::filesystem::remove_all(root);
  write_label_dir(combine_labels(labels), views, root / "model_0");
  const auto series = load_prediction_dir(root, views);
  REQUIRE(series.size() == 3);
  for (std::size_t k = 0; k < 3; ++k) {
    REQUIRE(series[k].members.size() == 1);
    CHECK(series[k].frame_index == std::vector<long>{105, 150, 299});
    for (std::size_t v = 0; v < views.size(); ++v) {
      const auto c = static_cast<Eigen::Index>(2 * v);
      CHECK(series[k].members[0].middleCols<2>(c) == labels.coords[v].middleCols<2>(2 * static_cast<Eigen::Index>(k)));
    }
  }

  write_selection_manifest(sel, root / "selection.jsonl");
  const auto back = read_selection_manifest(root / "selection.jsonl");
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].video == sel[i].video);
    CHECK(back[i].frame == sel[i].frame);
    CHECK(back[i].cluster == sel[i].cluster);
    CHECK(back[i].sigma2_max == sel[i].sigma2_max);
  }
  std::filesystem::remove_all(root);
}

TEST_CASE("select_frames honours N_f and N_v per video") {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<FrameScore> scores;
  for (long i = 0; i < 300; ++i) scores.push_back({i < 150 ? "a" : "b", i, std::abs(g(rng))});
  const Eigen::MatrixXd poses = Eigen::MatrixXd::NullaryExpr(300, 6, [&] { return g(rng); });
  const auto sel = select_frames(scores, poses, 100, 10, 0);
  std::map<std::string, int> per_video;
  for (const auto& f : sel) ++per_video[f.video];
  CHECK(per_video["a"] == 10);
  CHECK(per_video["b"] == 10);
  const auto kept = quality_filter(scores, 100);
  std::set<long> kept_ids;
  for (const auto& f : kept) kept_ids.insert(f.frame);
  for (const auto& f : sel) CHECK(kept_ids.count(f.frame) == 1);
}
