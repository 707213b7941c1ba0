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

#include "mveks/synth.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include <Eigen/Cholesky>

#include "mveks/calibration_io.hpp"
#include "mveks/csv_io.hpp"
#include "mveks/errors.hpp"
#include "mveks/nonlinear_eks.hpp"

namespace mveks {

namespace {

using json = nlohmann::json;

// Independent streams so that, e.g., raising an outlier rate leaves the clean
// member noise untouched.
enum Stream : std::uint64_t { kMotionStream = 0, kNoiseStream = 1, kCorruptionStream = 2 };

std::mt19937_64 make_stream(std::uint64_t seed, Stream stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

double sigma_for(const NoiseSpec& noise, int view) {
  return noise.sigma.empty() ? noise.sigma_default : noise.sigma[static_cast<std::size_t>(view)];
}

double s_for(const MotionSpec& motion, int keypoint) {
  return motion.s_true.empty() ? motion.s_default
                               : motion.s_true[static_cast<std::size_t>(keypoint)];
}

bool in_unit_interval(double p) { return p >= 0.0 && p <= 1.0; }

Eigen::Vector3d vec3(const json& j) {
  if (!j.is_array() || j.size() != 3) throw ConfigError("expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

json to_json(const Eigen::Vector3d& v) { return json::array({v(0), v(1), v(2)}); }

}  // namespace

Rig make_rig(const RigSpec& spec) {
  if (spec.num_views < 2) throw ConfigError("a rig needs at least two views");
  std::vector<Eigen::Vector3d> positions;
  std::vector<Eigen::Vector3d> ups;
  if (spec.layout == RigLayout::kOctahedron) {
    if (spec.num_views != 6) throw ConfigError("octahedral layout needs exactly 6 views");
    const double r = spec.distance;
    positions = {{r, 0, 0}, {-r, 0, 0}, {0, r, 0}, {0, -r, 0}, {0, 0, r}, {0, 0, -r}};
    ups = {{0, 0, 1}, {0, 0, 1}, {0, 0, 1}, {0, 0, 1}, {0, 1, 0}, {0, 1, 0}};
  } else {
    const double span = spec.azimuth_span > 0.0 ? spec.azimuth_span : 2.0 * std::numbers::pi;
    const double step = span / spec.num_views;
    for (int v = 0; v < spec.num_views; ++v) {
      const double az = step * v;
      const double ce = std::cos(spec.elevation);
      positions.emplace_back(spec.distance * ce * std::cos(az), spec.distance * ce * std::sin(az),
                             spec.distance * std::sin(spec.elevation));
      ups.emplace_back(0, 0, 1);
    }
  }
  std::vector<CameraModel> cams;
  for (int v = 0; v < spec.num_views; ++v) {
    CameraModel cam = look_at_camera("cam" + std::to_string(v), positions[static_cast<std::size_t>(v)],
                                     Eigen::Vector3d::Zero(), ups[static_cast<std::size_t>(v)]);
    cam.fx = cam.fy = spec.focal;
    cam.cx = 0.5 * spec.width;
    cam.cy = 0.5 * spec.height;
    cam.distortion = spec.distortion;
    cams.push_back(std::move(cam));
  }
  return Rig(std::move(cams));
}

void SynthConfig::validate() const {
  if (num_frames < 2) throw ConfigError("synth: need at least two frames");
  if (num_keypoints < 1) throw ConfigError("synth: need at least one keypoint");
  if (num_members < 1) throw ConfigError("synth: need at least one ensemble member");
  if (rig.num_views < 2) throw ConfigError("synth: need at least two views");
  if (!(rig.focal > 0.0) || rig.width <= 0 || rig.height <= 0 || !(rig.distance > 0.0)) {
    throw ConfigError("synth: rig focal, image size and distance must be positive");
  }
  if (!motion.s_true.empty() && motion.s_true.size() != static_cast<std::size_t>(num_keypoints)) {
    throw ConfigError("synth: s_true must list one value per keypoint");
  }
  if (!(motion.s_default > 0.0)) throw ConfigError("synth: s must be positive");
  for (double s : motion.s_true) {
    if (!(s > 0.0)) throw ConfigError("synth: s must be positive");
  }
  Eigen::LLT<Eigen::Matrix3d> llt(motion.E);
  if (llt.info() != Eigen::Success) throw ConfigError("synth: E must be positive definite");
  if (!(motion.sinusoid_period > 0.0)) throw ConfigError("synth: sinusoid period must be positive");
  if (!noise.sigma.empty() && noise.sigma.size() != static_cast<std::size_t>(rig.num_views)) {
    throw ConfigError("synth: sigma must list one value per view");
  }
  if (!(noise.sigma_default > 0.0)) throw ConfigError("synth: sigma must be positive");
  for (double s : noise.sigma) {
    if (!(s > 0.0)) throw ConfigError("synth: sigma must be positive");
  }
  if (!in_unit_interval(noise.outlier_rate) || !in_unit_interval(noise.confident_outlier_rate)) {
    throw ConfigError("synth: rates must lie in [0, 1]");
  }
  for (const auto& w : noise.occlusions) {
    if (w.view < 0 || w.view >= rig.num_views) throw ConfigError("synth: occlusion view out of range");
    if (w.keypoint < -1 || w.keypoint >= num_keypoints) {
      throw ConfigError("synth: occlusion keypoint out of range");
    }
    if (w.length < 0) throw ConfigError("synth: occlusion length must be non-negative");
  }
}

SynthConfig synth_config_from_json(const json& doc) {
  SynthConfig c;
  c.seed = doc.value("seed", c.seed);
  c.num_frames = doc.value("num_frames", c.num_frames);
  c.num_keypoints = doc.value("num_keypoints", c.num_keypoints);
  c.num_members = doc.value("num_members", c.num_members);
  if (doc.contains("rig")) {
    const json& r = doc["rig"];
    c.rig.num_views = r.value("num_views", c.rig.num_views);
    const std::string layout = r.value("layout", std::string("ring"));
    if (layout == "ring") {
      c.rig.layout = RigLayout::kRing;
    } else if (layout == "octahedron") {
      c.rig.layout = RigLayout::kOctahedron;
    } else {
      throw ConfigError("synth: unknown rig layout '" + layout + "'");
    }
    c.rig.distance = r.value("distance", c.rig.distance);
    c.rig.elevation = r.value("elevation", c.rig.elevation);
    c.rig.azimuth_span = r.value("azimuth_span", c.rig.azimuth_span);
    c.rig.focal = r.value("focal", c.rig.focal);
    c.rig.width = r.value("width", c.rig.width);
    c.rig.height = r.value("height", c.rig.height);
    if (r.contains("distortion")) {
      const json& d = r["distortion"];
      c.rig.distortion.k1 = d.value("k1", 0.0);
      c.rig.distortion.k2 = d.value("k2", 0.0);
      c.rig.distortion.p1 = d.value("p1", 0.0);
      c.rig.distortion.p2 = d.value("p2", 0.0);
    }
  }
  if (doc.contains("motion")) {
    const json& m = doc["motion"];
    if (m.contains("s_true")) c.motion.s_true = m["s_true"].get<std::vector<double>>();
    c.motion.s_default = m.value("s_default", c.motion.s_default);
    if (m.contains("E")) {
      const json& e = m["E"];
      if (e.is_number()) {
        c.motion.E = e.get<double>() * Eigen::Matrix3d::Identity();
      } else {
        if (!e.is_array() || e.size() != 3) throw ConfigError("synth: E must be a number or 3x3");
        for (int i = 0; i < 3; ++i) c.motion.E.row(i) = vec3(e[static_cast<std::size_t>(i)]).transpose();
      }
    }
    if (m.contains("sinusoid_amplitude")) c.motion.sinusoid_amplitude = vec3(m["sinusoid_amplitude"]);
    c.motion.sinusoid_period = m.value("sinusoid_period", c.motion.sinusoid_period);
    c.motion.keypoint_spread = m.value("keypoint_spread", c.motion.keypoint_spread);
    if (m.contains("center")) c.motion.center = vec3(m["center"]);
  }
  if (doc.contains("noise")) {
    const json& n = doc["noise"];
    if (n.contains("sigma")) c.noise.sigma = n["sigma"].get<std::vector<double>>();
    c.noise.sigma_default = n.value("sigma_default", c.noise.sigma_default);
    c.noise.outlier_rate = n.value("outlier_rate", c.noise.outlier_rate);
    c.noise.confident_outlier_rate = n.value("confident_outlier_rate", c.noise.confident_outlier_rate);
    c.noise.confident_outlier_magnitude =
        n.value("confident_outlier_magnitude", c.noise.confident_outlier_magnitude);
    for (const json& w : n.value("occlusions", json::array())) {
      OcclusionWindow o;
      o.view = w.at("view").get<int>();
      o.keypoint = w.value("keypoint", -1);
      o.start = w.at("start").get<long>();
      o.length = w.at("length").get<long>();
      const auto b = w.at("bias").get<std::vector<double>>();
      if (b.size() != 2) throw ConfigError("synth: occlusion bias must have two entries");
      o.bias = {b[0], b[1]};
      c.noise.occlusions.push_back(o);
    }
  }
  c.validate();
  return c;
}

json synth_config_to_json(const SynthConfig& c) {
  json occl = json::array();
  for (const auto& o : c.noise.occlusions) {
    occl.push_back({{"view", o.view},
                    {"keypoint", o.keypoint},
                    {"start", o.start},
                    {"length", o.length},
                    {"bias", {o.bias(0), o.bias(1)}}});
  }
  json E = json::array();
  for (int i = 0; i < 3; ++i) E.push_back(to_json(Eigen::Vector3d(c.motion.E.row(i).transpose())));
  return {
      {"seed", c.seed},
      {"num_frames", c.num_frames},
      {"num_keypoints", c.num_keypoints},
      {"num_members", c.num_members},
      {"rig",
       {{"num_views", c.rig.num_views},
        {"layout", c.rig.layout == RigLayout::kRing ? "ring" : "octahedron"},
        {"distance", c.rig.distance},
        {"elevation", c.rig.elevation},
        {"azimuth_span", c.rig.azimuth_span},
        {"focal", c.rig.focal},
        {"width", c.rig.width},
        {"height", c.rig.height},
        {"distortion",
         {{"k1", c.rig.distortion.k1},
          {"k2", c.rig.distortion.k2},
          {"p1", c.rig.distortion.p1},
          {"p2", c.rig.distortion.p2}}}}},
      {"motion",
       {{"s_true", c.motion.s_true},
        {"s_default", c.motion.s_default},
        {"E", E},
        {"sinusoid_amplitude", to_json(c.motion.sinusoid_amplitude)},
        {"sinusoid_period", c.motion.sinusoid_period},
        {"keypoint_spread", c.motion.keypoint_spread},
        {"center", to_json(c.motion.center)}}},
      {"noise",
       {{"sigma", c.noise.sigma},
        {"sigma_default", c.noise.sigma_default},
        {"outlier_rate", c.noise.outlier_rate},
        {"confident_outlier_rate", c.noise.confident_outlier_rate},
        {"confident_outlier_magnitude", c.noise.confident_outlier_magnitude},
        {"occlusions", occl}}},
  };
}

std::string to_string(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::kOutlier:
      return "outlier";
    case CorruptionKind::kConfident:
      return "confident";
    case CorruptionKind::kOcclusion:
      return "occlusion";
  }
  return "unknown";
}

BoolMatrix SynthResult::corrupted_cells() const {
  const Eigen::Index T = truth3d.empty() ? 0 : truth3d.front().rows();
  BoolMatrix mask = BoolMatrix::Constant(T, static_cast<Eigen::Index>(keypoints.size()), false);
  for (const auto& rec : ledger) mask(rec.frame, rec.keypoint) = true;
  return mask;
}

std::vector<char> SynthResult::corrupted_frames() const {
  const std::size_t T = truth3d.empty() ? 0 : static_cast<std::size_t>(truth3d.front().rows());
  std::vector<char> out(T, 0);
  for (const auto& rec : ledger) out[static_cast<std::size_t>(rec.frame)] = 1;
  return out;
}

SynthResult generate(const SynthConfig& config) {
  config.validate();
  SynthResult out;
  out.config = config;
  out.rig = make_rig(config.rig);

  const long T = config.num_frames;
  const int K = config.num_keypoints;
  const int V = config.rig.num_views;
  const int M = config.num_members;
  const std::vector<std::string> views = out.rig.names();

  std::mt19937_64 motion_rng = make_stream(config.seed, kMotionStream);
  std::mt19937_64 noise_rng = make_stream(config.seed, kNoiseStream);
  std::mt19937_64 corrupt_rng = make_stream(config.seed, kCorruptionStream);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<long> frames(static_cast<std::size_t>(T));
  for (long t = 0; t < T; ++t) frames[static_cast<std::size_t>(t)] = t;

  const Eigen::Matrix3d L = Eigen::LLT<Eigen::Matrix3d>(config.motion.E).matrixL();
  const double two_pi = 2.0 * std::numbers::pi;

  for (int k = 0; k < K; ++k) {
    out.keypoints.push_back("kp" + std::to_string(k));
    const double scale = std::sqrt(s_for(config.motion, k));
    Eigen::Vector3d offset;
    for (int i = 0; i < 3; ++i) {
      offset(i) = config.motion.keypoint_spread * (2.0 * unit(motion_rng) - 1.0);
    }
    Eigen::Vector3d phase;
    for (int i = 0; i < 3; ++i) phase(i) = two_pi * unit(motion_rng);

    Eigen::MatrixXd walk(T, 3);
    Eigen::Vector3d z = config.motion.center + offset;
    for (long t = 0; t < T; ++t) {
      if (t > 0) {
        Eigen::Vector3d n(normal(motion_rng), normal(motion_rng), normal(motion_rng));
        z += scale * (L * n);
      }
      walk.row(t) = z.transpose();
    }
    Eigen::MatrixXd truth = walk;
    for (long t = 0; t < T; ++t) {
      for (int i = 0; i < 3; ++i) {
        truth(t, i) += config.motion.sinusoid_amplitude(i) *
                       std::sin(two_pi * static_cast<double>(t) / config.motion.sinusoid_period + phase(i));
      }
    }
    Eigen::MatrixXd truth2d(T, 2 * V);
    for (long t = 0; t < T; ++t) truth2d.row(t) = project_rig(out.rig, truth.row(t).transpose()).transpose();
    out.truth3d.push_back(std::move(truth));
    out.truth2d.push_back(std::move(truth2d));
  }

  for (int k = 0; k < K; ++k) {
    const Eigen::MatrixXd& clean = out.truth2d[static_cast<std::size_t>(k)];
    EnsembleSeries series;
    series.keypoint = out.keypoints[static_cast<std::size_t>(k)];
    series.view_names = views;
    series.frame_index = frames;
    for (int m = 0; m < M; ++m) {
      Eigen::MatrixXd member(T, 2 * V);
      for (long t = 0; t < T; ++t) {
        for (int v = 0; v < V; ++v) {
          const double sigma = sigma_for(config.noise, v);
          for (int c = 0; c < 2; ++c) member(t, 2 * v + c) = clean(t, 2 * v + c) + sigma * normal(noise_rng);
        }
      }
      series.members.push_back(std::move(member));
    }

    // Uniform replacement outliers, per member, frame and view.
    for (int m = 0; m < M; ++m) {
      Eigen::MatrixXd& member = series.members[static_cast<std::size_t>(m)];
      for (long t = 0; t < T; ++t) {
        for (int v = 0; v < V; ++v) {
          const double u = unit(corrupt_rng);
          const double px = config.rig.width * unit(corrupt_rng);
          const double py = config.rig.height * unit(corrupt_rng);
          if (u >= config.noise.outlier_rate) continue;
          member(t, 2 * v) = px;
          member(t, 2 * v + 1) = py;
          out.ledger.push_back({t, k, v, m, CorruptionKind::kOutlier,
                                Eigen::Vector2d(px, py) - clean.row(t).segment<2>(2 * v).transpose()});
        }
      }
    }

    // Confident mistakes: one view, same bias for every member.
    for (long t = 0; t < T; ++t) {
      const double u = unit(corrupt_rng);
      const int v = std::min(V - 1, static_cast<int>(V * unit(corrupt_rng)));
      const double angle = two_pi * unit(corrupt_rng);
      if (u >= config.noise.confident_outlier_rate) continue;
      const Eigen::Vector2d bias =
          config.noise.confident_outlier_magnitude * Eigen::Vector2d(std::cos(angle), std::sin(angle));
      for (auto& member : series.members) member.row(t).segment<2>(2 * v) += bias.transpose();
      out.ledger.push_back({t, k, v, -1, CorruptionKind::kConfident, bias});
    }

    for (const auto& w : config.noise.occlusions) {
      if (w.keypoint != -1 && w.keypoint != k) continue;
      for (long t = std::max(0L, w.start); t < std::min(T, w.start + w.length); ++t) {
        for (auto& member : series.members) member.row(t).segment<2>(2 * w.view) += w.bias.transpose();
        out.ledger.push_back({t, k, w.view, -1, CorruptionKind::kOcclusion, w.bias});
      }
    }
    out.series.push_back(std::move(series));
  }
  return out;
}

void write_synth(const SynthResult& result, const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "truth");
  save_calibration(result.rig, out_dir / "calibration.json");

  const auto K = static_cast<Eigen::Index>(result.keypoints.size());
  const std::vector<std::string> views = result.rig.names();
  std::vector<long> frames = result.series.empty() ? std::vector<long>{} : result.series.front().frame_index;
  const auto T = static_cast<Eigen::Index>(frames.size());

  auto table_for = [&](auto&& coords_of) {
    KeypointTable table;
    table.frames = frames;
    table.keypoints = result.keypoints;
    table.coords.resize(T, 2 * K);
    table.likelihood = Eigen::MatrixXd::Ones(T, K);
    for (Eigen::Index k = 0; k < K; ++k) table.coords.middleCols<2>(2 * k) = coords_of(k);
    return table;
  };

  for (std::size_t v = 0; v < views.size(); ++v) {
    const auto col = static_cast<Eigen::Index>(2 * v);
    for (int m = 0; m < result.config.num_members; ++m) {
      const fs::path dir = out_dir / "predictions" / ("model_" + std::to_string(m));
      fs::create_directories(dir);
      write_keypoint_csv(table_for([&](Eigen::Index k) -> Eigen::MatrixXd {
                           return result.series[static_cast<std::size_t>(k)]
                               .members[static_cast<std::size_t>(m)]
                               .middleCols<2>(col);
                         }),
                         dir / (views[v] + ".csv"));
    }
    write_keypoint_csv(table_for([&](Eigen::Index k) -> Eigen::MatrixXd {
                         return result.truth2d[static_cast<std::size_t>(k)].middleCols<2>(col);
                       }),
                       out_dir / "truth" / (views[v] + ".csv"));
  }

  CsvDocument truth3d;
  truth3d.header.push_back("frame");
  for (const auto& name : result.keypoints) {
    for (const char* axis : {"_X", "_Y", "_Z"}) truth3d.header.push_back(name + axis);
  }
  for (Eigen::Index t = 0; t < T; ++t) {
    std::vector<std::string> row{std::to_string(frames[static_cast<std::size_t>(t)])};
    for (Eigen::Index k = 0; k < K; ++k) {
      for (int i = 0; i < 3; ++i) row.push_back(format_double(result.truth3d[static_cast<std::size_t>(k)](t, i)));
    }
    truth3d.rows.push_back(std::move(row));
  }
  write_csv(truth3d, out_dir / "truth3d.csv");

  CsvDocument ledger;
  ledger.header = {"frame", "keypoint", "view", "member", "kind", "dx", "dy"};
  for (const auto& rec : result.ledger) {
    ledger.rows.push_back({std::to_string(frames[static_cast<std::size_t>(rec.frame)]),
                           result.keypoints[static_cast<std::size_t>(rec.keypoint)],
                           views[static_cast<std::size_t>(rec.view)], std::to_string(rec.member),
                           to_string(rec.kind), format_double(rec.offset(0)), format_double(rec.offset(1))});
  }
  write_csv(ledger, out_dir / "ledger.csv");

  std::ofstream cfg(out_dir / "synth_config.json");
  if (!cfg) throw DataError("cannot write " + (out_dir / "synth_config.json").string());
  cfg << synth_config_to_json(result.config).dump(2) << '\n';
}

}  // namespace mveks
