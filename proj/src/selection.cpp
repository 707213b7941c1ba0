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

#include "mveks/selection.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <unordered_map>

#include "json.hpp"
#include "mveks/errors.hpp"
#include "stats_util.hpp"

namespace mveks {

namespace {

bool score_less(const FrameScore& a, const FrameScore& b) {
  if (a.sigma2_max != b.sigma2_max) return a.sigma2_max < b.sigma2_max;
  if (a.video != b.video) return a.video < b.video;
  return a.frame < b.frame;
}

std::vector<std::size_t> quality_order(const std::vector<FrameScore>& scores, std::size_t n_f) {
  if (n_f < 1) throw ConfigError("quality_filter: N_f must be at least 1");
  for (const auto& s : scores) {
    if (!(s.sigma2_max >= 0.0)) {
      throw DataError("quality_filter: sigma2_max must be a non-negative number");
    }
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return score_less(scores[a], scores[b]); });
  order.resize(std::min(n_f, order.size()));
  return order;
}

int nearest_center(const Eigen::MatrixXd& centers, const Eigen::VectorXd& point, double* dist2) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < centers.rows(); ++j) {
    const double d = (centers.row(j).transpose() - point).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(j);
    }
  }
  if (dist2) *dist2 = best_d;
  return best;
}

}  // namespace

std::vector<FrameScore> quality_filter(std::vector<FrameScore> scores, std::size_t n_f) {
  const std::vector<std::size_t> order = quality_order(scores, n_f);
  std::vector<FrameScore> out;
  out.reserve(order.size());
  for (std::size_t i : order) out.push_back(scores[i]);
  return out;
}

KMeansResult kmeans(const Eigen::MatrixXd& points, int k, const KMeansOptions& options) {
  const Eigen::Index n = points.rows();
  if (k < 1) throw ConfigError("kmeans: need at least one cluster");
  if (n < k) throw TooFewFrames("kmeans: " + std::to_string(n) + " points for " + std::to_string(k) + " clusters");
  if (!points.allFinite()) throw DataError("kmeans: points must be finite");

  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  KMeansResult out;
  out.centers.resize(k, points.cols());

  // k-means++ seeding.
  std::vector<char> chosen(static_cast<std::size_t>(n), 0);
  auto first = static_cast<Eigen::Index>(unit(rng) * static_cast<double>(n));
  first = std::min(first, n - 1);
  out.centers.row(0) = points.row(first);
  chosen[static_cast<std::size_t>(first)] = 1;
  Eigen::VectorXd d2 = (points.rowwise() - out.centers.row(0)).rowwise().squaredNorm();
  for (int j = 1; j < k; ++j) {
    const double total = d2.sum();
    Eigen::Index pick = -1;
    if (total > 0.0) {
      const double target = unit(rng) * total;
      double acc = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += d2(i);
        if (acc > target && d2(i) > 0.0) {
          pick = i;
          break;
        }
      }
      if (pick < 0) {
        for (Eigen::Index i = n; i-- > 0;) {
          if (d2(i) > 0.0) {
            pick = i;
            break;
          }
        }
      }
    } else {
      unit(rng);
      for (Eigen::Index i = 0; i < n; ++i) {
        if (!chosen[static_cast<std::size_t>(i)]) {
          pick = i;
          break;
        }
      }
    }
    out.centers.row(j) = points.row(pick);
    chosen[static_cast<std::size_t>(pick)] = 1;
    d2 = d2.cwiseMin((points.rowwise() - out.centers.row(j)).rowwise().squaredNorm());
  }

  out.labels.assign(static_cast<std::size_t>(n), 0);
  for (int it = 1; it <= options.max_iterations; ++it) {
    for (Eigen::Index i = 0; i < n; ++i) {
      out.labels[static_cast<std::size_t>(i)] = nearest_center(out.centers, points.row(i).transpose(), nullptr);
    }
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, points.cols());
    std::vector<Eigen::Index> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int c = out.labels[static_cast<std::size_t>(i)];
      sums.row(c) += points.row(i);
      ++counts[static_cast<std::size_t>(c)];
    }
    double movement = 0.0;
    for (int j = 0; j < k; ++j) {
      if (counts[static_cast<std::size_t>(j)] == 0) continue;
      const Eigen::RowVectorXd next = sums.row(j) / static_cast<double>(counts[static_cast<std::size_t>(j)]);
      movement = std::max(movement, (next - out.centers.row(j)).norm());
      out.centers.row(j) = next;
    }
    out.iterations = it;
    if (movement <= options.tolerance) break;
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    out.labels[static_cast<std::size_t>(i)] = nearest_center(out.centers, points.row(i).transpose(), nullptr);
  }
  return out;
}

Eigen::MatrixXd center_poses(const Eigen::MatrixXd& poses, int axes) {
  if (axes < 1 || poses.cols() % axes != 0) {
    throw ShapeMismatch("center_poses: columns must be a multiple of the axis count");
  }
  const Eigen::Index kps = poses.cols() / axes;
  Eigen::MatrixXd out = poses;
  std::vector<double> buf;
  for (Eigen::Index t = 0; t < poses.rows(); ++t) {
    for (int a = 0; a < axes; ++a) {
      buf.clear();
      for (Eigen::Index k = 0; k < kps; ++k) buf.push_back(poses(t, k * axes + a));
      const double med = detail::median_inplace(buf);
      for (Eigen::Index k = 0; k < kps; ++k) out(t, k * axes + a) -= med;
    }
  }
  return out;
}

std::vector<SelectedFrame> diversity_select(const std::vector<FrameScore>& frames,
                                            const Eigen::MatrixXd& poses, int n_v,
                                            std::uint64_t seed) {
  if (n_v < 1) throw ConfigError("diversity_select: N_v must be at least 1");
  if (frames.size() < static_cast<std::size_t>(n_v)) {
    throw TooFewFrames("diversity_select: " + std::to_string(frames.size()) +
                       " candidate frames for " + std::to_string(n_v) + " clusters");
  }
  if (poses.rows() != static_cast<Eigen::Index>(frames.size())) {
    throw ShapeMismatch("diversity_select: one pose row per frame required");
  }
  KMeansOptions opts;
  opts.seed = seed;
  const KMeansResult km = kmeans(poses, n_v, opts);

  std::vector<SelectedFrame> out;
  for (int j = 0; j < n_v; ++j) {
    Eigen::Index best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < poses.rows(); ++i) {
      if (km.labels[static_cast<std::size_t>(i)] != j) continue;
      const double d = (poses.row(i) - km.centers.row(j)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    if (best < 0) continue;
    const FrameScore& f = frames[static_cast<std::size_t>(best)];
    out.push_back({f.video, f.frame, j, f.sigma2_max});
  }
  return out;
}

std::vector<SelectedFrame> random_select(const std::vector<FrameScore>& frames, int n_v,
                                         std::uint64_t seed) {
  if (n_v < 1) throw ConfigError("random_select: N_v must be at least 1");
  std::vector<std::size_t> idx(frames.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t take = std::min(idx.size(), static_cast<std::size_t>(n_v));
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t span = idx.size() - i;
    const std::size_t j = i + std::min(span - 1, static_cast<std::size_t>(unit(rng) * static_cast<double>(span)));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(take);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (frames[a].video != frames[b].video) return frames[a].video < frames[b].video;
    return frames[a].frame < frames[b].frame;
  });
  std::vector<SelectedFrame> out;
  for (std::size_t i : idx) out.push_back({frames[i].video, frames[i].frame, -1, frames[i].sigma2_max});
  return out;
}

std::vector<SelectedFrame> select_frames(const std::vector<FrameScore>& scores,
                                         const Eigen::MatrixXd& poses, std::size_t n_f, int n_v,
                                         std::uint64_t seed) {
  if (poses.rows() != static_cast<Eigen::Index>(scores.size())) {
    throw ShapeMismatch("select_frames: one pose row per score required");
  }
  const std::vector<std::size_t> kept = quality_order(scores, n_f);
  std::map<std::string, std::vector<std::size_t>> by_video;
  for (std::size_t i : kept) by_video[scores[i].video].push_back(i);

  std::vector<SelectedFrame> out;
  for (auto& [video, rows] : by_video) {
    std::sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) { return scores[a].frame < scores[b].frame; });
    std::vector<FrameScore> frames;
    Eigen::MatrixXd sub(static_cast<Eigen::Index>(rows.size()), poses.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      frames.push_back(scores[rows[r]]);
      sub.row(static_cast<Eigen::Index>(r)) = poses.row(static_cast<Eigen::Index>(rows[r]));
    }
    const int clusters = std::min(n_v, static_cast<int>(frames.size()));
    const auto picked = diversity_select(frames, sub, clusters, seed);
    out.insert(out.end(), picked.begin(), picked.end());
  }
  return out;
}

PseudoLabelSet gather_pseudolabels(const std::vector<SelectedFrame>& selected,
                                   const std::vector<long>& frame_index,
                                   const std::vector<Eigen::MatrixXd>& tracks,
                                   const std::vector<std::string>& views,
                                   const std::vector<std::string>& keypoints,
                                   const std::string& source) {
  if (tracks.size() != keypoints.size()) throw ShapeMismatch("gather_pseudolabels: one track per keypoint");
  const auto V = static_cast<Eigen::Index>(views.size());
  std::unordered_map<long, Eigen::Index> row_of;
  for (std::size_t i = 0; i < frame_index.size(); ++i) row_of[frame_index[i]] = static_cast<Eigen::Index>(i);
  for (const auto& tr : tracks) {
    if (tr.rows() != static_cast<Eigen::Index>(frame_index.size()) || tr.cols() != 2 * V) {
      throw ShapeMismatch("gather_pseudolabels: tracks must be T x 2V");
    }
  }

  PseudoLabelSet set;
  set.views = views;
  set.keypoints = keypoints;
  set.source = source;
  set.frames = selected;
  const auto N = static_cast<Eigen::Index>(selected.size());
  const auto K = static_cast<Eigen::Index>(keypoints.size());
  set.coords.assign(views.size(), Eigen::MatrixXd(N, 2 * K));
  for (Eigen::Index i = 0; i < N; ++i) {
    const auto it = row_of.find(selected[static_cast<std::size_t>(i)].frame);
    if (it == row_of.end()) {
      throw DataError("selected frame " + std::to_string(selected[static_cast<std::size_t>(i)].frame) +
                      " is not in the smoothed output");
    }
    for (Eigen::Index v = 0; v < V; ++v) {
      for (Eigen::Index k = 0; k < K; ++k) {
        set.coords[static_cast<std::size_t>(v)].block<1, 2>(i, 2 * k) =
            tracks[static_cast<std::size_t>(k)].block<1, 2>(it->second, 2 * v);
      }
    }
  }
  return set;
}

std::vector<KeypointTable> combine_labels(const PseudoLabelSet& pseudo,
                                          const std::vector<KeypointTable>& ground_truth) {
  if (!ground_truth.empty() && ground_truth.size() != pseudo.views.size()) {
    throw ShapeMismatch("combine_labels: one ground-truth table per view required");
  }
  const auto K = static_cast<Eigen::Index>(pseudo.keypoints.size());
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<KeypointTable> out;
  for (std::size_t v = 0; v < pseudo.views.size(); ++v) {
    const KeypointTable* gt = ground_truth.empty() ? nullptr : &ground_truth[v];
    if (gt && gt->keypoints != pseudo.keypoints) {
      throw ShapeMismatch("combine_labels: ground truth keypoints differ for view " + pseudo.views[v]);
    }
    const auto G = gt ? static_cast<Eigen::Index>(gt->frames.size()) : 0;
    const auto N = static_cast<Eigen::Index>(pseudo.frames.size());

    // Frames without a video id collide with any video.
    for (Eigen::Index i = 0; i < N; ++i) {
      const auto& p = pseudo.frames[static_cast<std::size_t>(i)];
      for (Eigen::Index g = 0; g < G; ++g) {
        const std::string gv = gt->videos.empty() ? "" : gt->videos[static_cast<std::size_t>(g)];
        if (gt->frames[static_cast<std::size_t>(g)] == p.frame &&
            (gv.empty() || p.video.empty() || gv == p.video)) {
          throw CollisionError("pseudo-label frame " + std::to_string(p.frame) + " of video '" +
                               p.video + "' is already labeled");
        }
      }
    }

    KeypointTable table;
    table.keypoints = pseudo.keypoints;
    table.coords.resize(G + N, 2 * K);
    table.likelihood = Eigen::MatrixXd::Constant(G + N, K, nan);
    for (Eigen::Index g = 0; g < G; ++g) {
      table.frames.push_back(gt->frames[static_cast<std::size_t>(g)]);
      table.videos.push_back(gt->videos.empty() ? "" : gt->videos[static_cast<std::size_t>(g)]);
      table.provenance.push_back("label");
      table.coords.row(g) = gt->coords.row(g);
      if (gt->likelihood.rows() == G) table.likelihood.row(g) = gt->likelihood.row(g);
    }
    for (Eigen::Index i = 0; i < N; ++i) {
      const auto& p = pseudo.frames[static_cast<std::size_t>(i)];
      table.frames.push_back(p.frame);
      table.videos.push_back(p.video);
      table.provenance.push_back("pseudo");
      table.coords.row(G + i) = pseudo.coords[v].row(i);
    }
    out.push_back(std::move(table));
  }
  return out;
}

void write_label_dir(const std::vector<KeypointTable>& tables, const std::vector<std::string>& views,
                     const std::filesystem::path& dir) {
  if (tables.size() != views.size()) throw ShapeMismatch("write_label_dir: one table per view");
  std::filesystem::create_directories(dir);
  for (std::size_t v = 0; v < views.size(); ++v) write_keypoint_csv(tables[v], dir / (views[v] + ".csv"));
}

void write_selection_manifest(const std::vector<SelectedFrame>& selected,
                              const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& s : selected) {
    const nlohmann::json line = {
        {"video", s.video}, {"frame", s.frame}, {"cluster", s.cluster}, {"sigma2_max", s.sigma2_max}};
    out << line.dump() << '\n';
  }
}

std::vector<SelectedFrame> read_selection_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::vector<SelectedFrame> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("video").get<std::string>(), j.at("frame").get<long>(),
                     j.at("cluster").get<int>(), j.at("sigma2_max").get<double>()});
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ": " + e.what());
    }
  }
  return out;
}

}  // namespace mveks
