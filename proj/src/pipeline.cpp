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

#include "mveks/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <map>
#include <thread>

#include "mveks/calibration_io.hpp"
#include "mveks/csv_io.hpp"
#include "mveks/errors.hpp"
#include "mveks/nonlinear_eks.hpp"

namespace mveks {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

template <typename Enum>
Enum parse_enum(const std::string& text, std::initializer_list<std::pair<const char*, Enum>> table,
                const char* what) {
  for (const auto& [name, value] : table) {
    if (text == name) return value;
  }
  std::string options;
  for (const auto& [name, value] : table) options += std::string(options.empty() ? "" : ", ") + name;
  throw ConfigError(std::string("unknown ") + what + " '" + text + "' (expected one of " + options + ")");
}

SmoothMode parse_mode(const std::string& s) {
  return parse_enum<SmoothMode>(
      s, {{"linear", SmoothMode::kLinear}, {"nonlinear", SmoothMode::kNonlinear}, {"auto", SmoothMode::kAuto}},
      "mode");
}

PosteriorScope parse_scope(const std::string& s) {
  return parse_enum<PosteriorScope>(
      s, {{"leave_one_out", PosteriorScope::kLeaveOneOut}, {"all_views", PosteriorScope::kAllViews}},
      "inflation scope");
}

ScoreSource parse_score(const std::string& s) {
  return parse_enum<ScoreSource>(s, {{"postvar", ScoreSource::kPosterior}, {"ensvar", ScoreSource::kEnsemble}},
                                 "score");
}

PoseSource parse_pose(const std::string& s) {
  return parse_enum<PoseSource>(s, {{"triangulate", PoseSource::kTriangulate}, {"pca", PoseSource::kPca}},
                                "pose source");
}

SelectionStrategy parse_strategy(const std::string& s) {
  return parse_enum<SelectionStrategy>(
      s, {{"targeted", SelectionStrategy::kTargeted}, {"random", SelectionStrategy::kRandom}}, "strategy");
}

std::string matrix_cell(double v) { return format_double(v); }

void write_json(const json& doc, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads. The first failure in
// index order is rethrown after all workers finish.
template <typename Fn>
void parallel_for(std::size_t n, int jobs, Fn fn) {
  std::vector<std::exception_ptr> errors(n);
  auto body = [&](std::size_t i) {
    try {
      fn(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, jobs)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) body(i);
      });
    }
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

std::string to_string(SmoothMode mode) {
  switch (mode) {
    case SmoothMode::kLinear: return "linear";
    case SmoothMode::kNonlinear: return "nonlinear";
    case SmoothMode::kAuto: return "auto";
  }
  return "auto";
}

std::string to_string(ScoreSource source) {
  return source == ScoreSource::kPosterior ? "postvar" : "ensvar";
}

std::string to_string(PoseSource source) {
  return source == PoseSource::kTriangulate ? "triangulate" : "pca";
}

std::string to_string(SelectionStrategy strategy) {
  return strategy == SelectionStrategy::kTargeted ? "targeted" : "random";
}

std::string to_string(PosteriorScope scope) {
  return scope == PosteriorScope::kLeaveOneOut ? "leave_one_out" : "all_views";
}

void RunConfig::validate() const {
  if (mode == SmoothMode::kNonlinear && calibration.empty()) {
    throw ConfigError("nonlinear mode requires a calibration file");
  }
  if (latent_dim < 0) throw ConfigError("latent_dim must be positive (or 0 for automatic)");
  if (!(variance_target > 0.0 && variance_target <= 1.0)) {
    throw ConfigError("variance_target must lie in (0, 1]");
  }
  if (!(low_variance_quantile > 0.0 && low_variance_quantile <= 1.0)) {
    throw ConfigError("low_variance_quantile must lie in (0, 1]");
  }
  if (!(inflation_options.threshold > 0.0)) throw ConfigError("inflation threshold must be positive");
  if (!(inflation_options.factor > 1.0)) throw ConfigError("inflation factor must exceed 1");
  if (inflation_options.max_doublings < 0) throw ConfigError("max_doublings must be non-negative");
  if (!(fixed_s > 0.0)) throw ConfigError("fixed smoothing parameter must be positive");
  if (!(search.learning_rate > 0.0) || search.max_iterations < 0 || !(search.tolerance > 0.0)) {
    throw ConfigError("invalid smoothing search settings");
  }
  if (selection.n_f < 1) throw ConfigError("selection n_f must be at least 1");
  if (selection.n_v < 1) throw ConfigError("selection n_v must be at least 1");
  if (jobs < 0) throw ConfigError("jobs must be non-negative");
}

int RunConfig::resolved_jobs() const {
  if (jobs > 0) return jobs;
  if (const char* env = std::getenv(kJobsEnvVar)) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<int>(v);
    throw ConfigError(std::string(kJobsEnvVar) + " must be a positive integer");
  }
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

RunConfig run_config_from_json(const json& doc, RunConfig c) {
  try {
    if (doc.contains("input_dir")) c.input_dir = doc["input_dir"].get<std::string>();
    if (doc.contains("calibration")) {
      c.calibration = doc["calibration"].is_null() ? "" : doc["calibration"].get<std::string>();
    }
    if (doc.contains("views")) c.views = doc["views"].get<std::vector<std::string>>();
    if (doc.contains("output_dir")) c.output_dir = doc["output_dir"].get<std::string>();
    c.video = doc.value("video", c.video);
    if (doc.contains("mode")) c.mode = parse_mode(doc["mode"].get<std::string>());
    if (doc.contains("latent_dim")) {
      const json& d = doc["latent_dim"];
      if (d.is_string()) {
        const std::string s = d.get<std::string>();
        if (s != "auto-99" && s != "auto") throw ConfigError("latent_dim must be an integer or \"auto-99\"");
        c.latent_dim = 0;
      } else {
        c.latent_dim = d.get<int>();
      }
    }
    c.variance_target = doc.value("variance_target", c.variance_target);
    c.low_variance_quantile = doc.value("low_variance_quantile", c.low_variance_quantile);
    if (doc.contains("inflation")) {
      const json& j = doc["inflation"];
      c.inflation = j.value("enabled", c.inflation);
      c.inflation_options.threshold = j.value("threshold", c.inflation_options.threshold);
      c.inflation_options.factor = j.value("factor", c.inflation_options.factor);
      c.inflation_options.max_doublings = j.value("max_doublings", c.inflation_options.max_doublings);
      if (j.contains("scope")) c.inflation_options.scope = parse_scope(j["scope"].get<std::string>());
    }
    if (doc.contains("smoothing")) {
      const json& j = doc["smoothing"];
      if (j.contains("mode")) {
        const std::string m = j["mode"].get<std::string>();
        if (m != "auto" && m != "fixed") throw ConfigError("smoothing mode must be \"auto\" or \"fixed\"");
        c.optimize_smoothing = m == "auto";
      }
      c.fixed_s = j.value("s", c.fixed_s);
      c.search.learning_rate = j.value("learning_rate", c.search.learning_rate);
      c.search.max_iterations = j.value("max_iterations", c.search.max_iterations);
      c.search.tolerance = j.value("tolerance", c.search.tolerance);
    }
    if (doc.contains("selection")) {
      const json& j = doc["selection"];
      c.selection.n_f = j.value("n_f", c.selection.n_f);
      c.selection.n_v = j.value("n_v", c.selection.n_v);
      if (j.contains("score")) c.selection.score = parse_score(j["score"].get<std::string>());
      if (j.contains("pose3d")) c.selection.pose3d = parse_pose(j["pose3d"].get<std::string>());
      if (j.contains("strategy")) c.selection.strategy = parse_strategy(j["strategy"].get<std::string>());
      c.selection.center_poses = j.value("center_poses", c.selection.center_poses);
      c.selection.seed = j.value("seed", c.selection.seed);
    }
    c.seed = doc.value("seed", c.seed);
    c.jobs = doc.value("jobs", c.jobs);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  return c;
}

json run_config_to_json(const RunConfig& c) {
  return {
      {"input_dir", c.input_dir.string()},
      {"calibration", c.calibration.empty() ? json(nullptr) : json(c.calibration.string())},
      {"views", c.views},
      {"output_dir", c.output_dir.string()},
      {"video", c.video},
      {"mode", to_string(c.mode)},
      {"latent_dim", c.latent_dim == 0 ? json("auto-99") : json(c.latent_dim)},
      {"variance_target", c.variance_target},
      {"low_variance_quantile", c.low_variance_quantile},
      {"inflation",
       {{"enabled", c.inflation},
        {"threshold", c.inflation_options.threshold},
        {"factor", c.inflation_options.factor},
        {"max_doublings", c.inflation_options.max_doublings},
        {"scope", to_string(c.inflation_options.scope)}}},
      {"smoothing",
       {{"mode", c.optimize_smoothing ? "auto" : "fixed"},
        {"s", c.fixed_s},
        {"learning_rate", c.search.learning_rate},
        {"max_iterations", c.search.max_iterations},
        {"tolerance", c.search.tolerance}}},
      {"selection",
       {{"n_f", c.selection.n_f},
        {"n_v", c.selection.n_v},
        {"score", to_string(c.selection.score)},
        {"pose3d", to_string(c.selection.pose3d)},
        {"strategy", to_string(c.selection.strategy)},
        {"center_poses", c.selection.center_poses},
        {"seed", c.selection.seed}}},
      {"seed", c.seed},
      {"jobs", c.jobs},
  };
}

RunConfig load_run_config(const fs::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return run_config_from_json(doc, std::move(base));
}

Rig align_rig(const Rig& rig, const std::vector<std::string>& views) {
  std::vector<CameraModel> cams;
  for (const auto& v : views) {
    const auto it = std::find_if(rig.cameras().begin(), rig.cameras().end(),
                                 [&](const CameraModel& c) { return c.name == v; });
    if (it == rig.cameras().end()) throw ConfigError("calibration has no camera named '" + v + "'");
    cams.push_back(*it);
  }
  return Rig(std::move(cams));
}

namespace {

SmoothRun prepare_run(const std::vector<EnsembleSeries>& series, const std::optional<Rig>& rig,
                      const RunConfig& config) {
  // A rig handed over in memory stands in for the calibration file.
  RunConfig checked = config;
  if (rig && checked.calibration.empty()) checked.calibration = "<in-memory>";
  checked.validate();
  if (series.empty()) throw DataError("no keypoints to smooth");
  SmoothRun run;
  run.config = config;
  run.views = series.front().view_names;
  run.frames = series.front().frame_index;
  for (const auto& s : series) {
    s.validate();
    if (s.view_names != run.views || s.frame_index != run.frames) {
      throw ShapeMismatch("keypoint '" + s.keypoint + "' has different views or frames");
    }
    run.keypoints.push_back(s.keypoint);
  }
  if (config.mode == SmoothMode::kNonlinear && !rig) {
    throw ConfigError("nonlinear mode requires a calibration");
  }
  run.mode = config.mode == SmoothMode::kAuto ? (rig ? SmoothMode::kNonlinear : SmoothMode::kLinear)
                                              : config.mode;
  if (rig) run.rig = align_rig(*rig, run.views);
  run.results.resize(series.size());
  return run;
}

void process_keypoint(const EnsembleSeries& series, const SmoothRun& run, bool smooth_track,
                      KeypointResult& out) {
  const RunConfig& config = run.config;
  out.keypoint = series.keypoint;
  out.summary = summarize(series);
  const Eigen::MatrixXd& obs = out.summary.median;

  auto finish = [&](auto& model) {
    out.obs_var = out.summary.variance;
    if (config.inflation) {
      out.inflation = inflate(obs, out.summary.variance, model, config.inflation_options);
      out.obs_var = out.inflation->inflated_vars;
    }
    if (!smooth_track) return;
    if (config.optimize_smoothing) {
      const SmoothingSearchResult res = optimize_smoothing(model, obs, out.obs_var, config.search);
      model.s = res.s;
      out.initial_loglik = res.initial_loglik;
      out.iterations = res.iterations;
      out.converged = res.converged;
    } else {
      model.s = config.fixed_s;
    }
    out.s = model.s;
    out.track = smooth(model, obs, out.obs_var);
    out.track.s_selected = model.s;
  };

  if (run.mode == SmoothMode::kNonlinear) {
    NonlinearObsModel model = fit_nonlinear_params(*run.rig, out.summary);
    out.latent_dim = 3;
    finish(model);
  } else {
    const Eigen::Index d =
        config.latent_dim > 0
            ? config.latent_dim
            : choose_latent_dim(out.summary, config.variance_target, config.low_variance_quantile);
    LinearObsModel model = fit_params(out.summary, d, config.low_variance_quantile);
    out.latent_dim = d;
    out.explained_variance = model.explained_variance;
    finish(model);
  }
}

std::optional<Rig> load_rig(const RunConfig& config) {
  if (config.calibration.empty()) return std::nullopt;
  return load_calibration(config.calibration);
}

}  // namespace

SmoothRun smooth_ensembles(const std::vector<EnsembleSeries>& series, const std::optional<Rig>& rig,
                           const RunConfig& config) {
  SmoothRun run = prepare_run(series, rig, config);
  parallel_for(series.size(), config.resolved_jobs(),
               [&](std::size_t k) { process_keypoint(series[k], run, true, run.results[k]); });
  return run;
}

SmoothRun run_smooth(const RunConfig& config) {
  config.validate();
  const std::optional<Rig> rig = load_rig(config);
  return smooth_ensembles(load_prediction_dir(config.input_dir, config.views), rig, config);
}

SmoothRun run_inflation_report(const RunConfig& config) {
  config.validate();
  const std::optional<Rig> rig = load_rig(config);
  const auto series = load_prediction_dir(config.input_dir, config.views);
  RunConfig cfg = config;
  cfg.inflation = true;
  SmoothRun run = prepare_run(series, rig, cfg);
  parallel_for(series.size(), cfg.resolved_jobs(),
               [&](std::size_t k) { process_keypoint(series[k], run, false, run.results[k]); });
  return run;
}

json smooth_manifest(const SmoothRun& run) {
  json kps = json::array();
  long total_cells = 0;
  for (const auto& r : run.results) {
    long cells = 0;
    long frames = 0;
    if (r.inflation) {
      cells = (r.inflation->n_doublings.array() > 0).count();
      frames = static_cast<long>(r.inflation->inflated_frames().size());
    }
    total_cells += cells;
    kps.push_back({{"keypoint", r.keypoint},
                   {"latent_dim", r.latent_dim},
                   {"explained_variance", r.explained_variance},
                   {"s", r.s},
                   {"loglik", r.track.loglik},
                   {"initial_loglik", r.initial_loglik},
                   {"iterations", r.iterations},
                   {"converged", r.converged},
                   {"inflated_cells", cells},
                   {"inflated_frames", frames}});
  }
  return {{"version", kVersion},
          {"config", run_config_to_json(run.config)},
          {"mode", to_string(run.mode)},
          {"seed", run.config.seed},
          {"views", run.views},
          {"keypoints", run.keypoints},
          {"num_frames", run.frames.size()},
          {"inflated_cells", total_cells},
          {"results", kps}};
}

void write_inflation_report(const SmoothRun& run, const fs::path& path) {
  CsvDocument doc;
  doc.header = {"frame", "view", "keypoint", "n_doublings", "final_distance"};
  for (std::size_t t = 0; t < run.frames.size(); ++t) {
    for (const auto& r : run.results) {
      if (!r.inflation) continue;
      for (std::size_t v = 0; v < run.views.size(); ++v) {
        const int n = r.inflation->n_doublings(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(v));
        if (n == 0) continue;
        doc.rows.push_back({std::to_string(run.frames[t]), run.views[v], r.keypoint, std::to_string(n),
                            matrix_cell(r.inflation->final_distance(static_cast<Eigen::Index>(t),
                                                                    static_cast<Eigen::Index>(v)))});
      }
    }
  }
  write_csv(doc, path);
}

void write_smooth_outputs(const SmoothRun& run, const fs::path& dir) {
  fs::create_directories(dir / "ensemble");
  const auto T = static_cast<Eigen::Index>(run.frames.size());
  const auto K = static_cast<Eigen::Index>(run.keypoints.size());
  for (std::size_t v = 0; v < run.views.size(); ++v) {
    const auto col = static_cast<Eigen::Index>(2 * v);
    KeypointTable table;
    table.frames = run.frames;
    table.keypoints = run.keypoints;
    table.coords.resize(T, 2 * K);
    table.postvar.resize(T, 2 * K);
    for (Eigen::Index k = 0; k < K; ++k) {
      const KeypointResult& r = run.results[static_cast<std::size_t>(k)];
      table.coords.middleCols<2>(2 * k) = r.track.means.middleCols<2>(col);
      table.postvar.middleCols<2>(2 * k) = r.track.pred_vars.middleCols<2>(col);
    }
    write_keypoint_csv(table, dir / (run.views[v] + ".csv"));

    CsvDocument ens;
    ens.header.push_back("frame");
    for (const auto& kp : run.keypoints) {
      for (const char* suffix : {"_x", "_y", "_var_x", "_var_y", "_obsvar_x", "_obsvar_y"}) {
        ens.header.push_back(kp + suffix);
      }
    }
    for (Eigen::Index t = 0; t < T; ++t) {
      std::vector<std::string> row{std::to_string(run.frames[static_cast<std::size_t>(t)])};
      for (const auto& r : run.results) {
        for (const Eigen::MatrixXd* m : {&r.summary.median, &r.summary.variance, &r.obs_var}) {
          row.push_back(matrix_cell((*m)(t, col)));
          row.push_back(matrix_cell((*m)(t, col + 1)));
        }
      }
      ens.rows.push_back(std::move(row));
    }
    write_csv(ens, dir / "ensemble" / (run.views[v] + ".csv"));
  }

  if (run.mode == SmoothMode::kNonlinear) {
    fs::create_directories(dir / "3d");
    for (const auto& r : run.results) {
      CsvDocument doc;
      doc.header = {"frame", "X", "Y", "Z", "var_X", "var_Y", "var_Z"};
      for (Eigen::Index t = 0; t < T; ++t) {
        std::vector<std::string> row{std::to_string(run.frames[static_cast<std::size_t>(t)])};
        for (int i = 0; i < 3; ++i) row.push_back(matrix_cell(r.track.latent_means(t, i)));
        for (int i = 0; i < 3; ++i) row.push_back(matrix_cell(r.track.latent_covs[static_cast<std::size_t>(t)](i, i)));
        doc.rows.push_back(std::move(row));
      }
      write_csv(doc, dir / "3d" / (r.keypoint + ".csv"));
    }
  }
  write_inflation_report(run, dir / "inflation_report.csv");
  write_json(smooth_manifest(run), dir / "manifest.json");
}

TrackSet read_track_dir(const fs::path& dir, const std::vector<std::string>& views) {
  if (views.empty()) throw ConfigError("read_track_dir: no views given");
  TrackSet out;
  out.views = views;
  const auto V = static_cast<Eigen::Index>(views.size());
  for (std::size_t v = 0; v < views.size(); ++v) {
    const KeypointTable tab = read_keypoint_csv(dir / (views[v] + ".csv"));
    if (v == 0) {
      out.keypoints = tab.keypoints;
      out.frames = tab.frames;
      const auto T = static_cast<Eigen::Index>(tab.frames.size());
      out.means.assign(tab.keypoints.size(), Eigen::MatrixXd(T, 2 * V));
      if (tab.postvar.size() > 0) out.variance.assign(tab.keypoints.size(), Eigen::MatrixXd(T, 2 * V));
    } else if (tab.keypoints != out.keypoints || tab.frames != out.frames) {
      throw DataError(dir.string() + ": views disagree on keypoints or frames");
    } else if ((tab.postvar.size() > 0) != !out.variance.empty()) {
      throw DataError(dir.string() + ": views disagree on postvar columns");
    }
    for (std::size_t k = 0; k < out.keypoints.size(); ++k) {
      const auto c = static_cast<Eigen::Index>(2 * k);
      out.means[k].middleCols<2>(static_cast<Eigen::Index>(2 * v)) = tab.coords.middleCols<2>(c);
      if (!out.variance.empty()) {
        out.variance[k].middleCols<2>(static_cast<Eigen::Index>(2 * v)) = tab.postvar.middleCols<2>(c);
      }
    }
  }
  return out;
}

TrackSet read_ensemble_dir(const fs::path& dir, const std::vector<std::string>& views) {
  TrackSet out = read_track_dir(dir, views);
  out.variance.assign(out.keypoints.size(), Eigen::MatrixXd());
  for (auto& m : out.variance) m.resize(static_cast<Eigen::Index>(out.frames.size()), static_cast<Eigen::Index>(2 * views.size()));
  for (std::size_t v = 0; v < views.size(); ++v) {
    const fs::path path = dir / (views[v] + ".csv");
    const CsvDocument doc = read_csv(path);
    for (std::size_t k = 0; k < out.keypoints.size(); ++k) {
      for (int c = 0; c < 2; ++c) {
        const int col = doc.column(out.keypoints[k] + (c == 0 ? "_var_x" : "_var_y"));
        if (col < 0) throw DataError(path.string() + ": missing ensemble variance for " + out.keypoints[k]);
        for (std::size_t t = 0; t < doc.rows.size(); ++t) {
          out.variance[k](static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(2 * v + c)) =
              parse_double(doc.rows[t][static_cast<std::size_t>(col)]);
        }
      }
    }
  }
  return out;
}

TrackSet track_set_from_run(const SmoothRun& run) {
  TrackSet out;
  out.views = run.views;
  out.keypoints = run.keypoints;
  out.frames = run.frames;
  for (const auto& r : run.results) {
    out.means.push_back(r.track.means);
    out.variance.push_back(r.track.pred_vars);
  }
  return out;
}

Eigen::MatrixXd poses_from_tracks(const TrackSet& tracks, const std::optional<Rig>& rig,
                                  PoseSource source) {
  const auto T = static_cast<Eigen::Index>(tracks.frames.size());
  const auto K = static_cast<Eigen::Index>(tracks.keypoints.size());
  Eigen::MatrixXd poses(T, 3 * K);
  if (source == PoseSource::kTriangulate) {
    if (!rig) throw ConfigError("triangulated poses need a calibration");
    const Rig aligned = align_rig(*rig, tracks.views);
    for (Eigen::Index k = 0; k < K; ++k) {
      poses.middleCols<3>(3 * k) = triangulate_track(aligned, tracks.means[static_cast<std::size_t>(k)]);
    }
    return poses;
  }
  // One basis shared by all keypoints, so that every keypoint lands in the
  // same 3D frame.
  const Eigen::Index cols = K > 0 ? tracks.means.front().cols() : 0;
  Eigen::MatrixXd stacked(T * K, cols);
  for (Eigen::Index k = 0; k < K; ++k) {
    const Eigen::MatrixXd& x = tracks.means[static_cast<std::size_t>(k)];
    if (!x.allFinite()) throw DataError("PCA poses need complete tracks");
    stacked.middleRows(k * T, T) = x;
  }
  const PcaResult p = pca(stacked);
  if (p.components.cols() < 3) throw DataError("PCA poses need at least three coordinates");
  for (Eigen::Index k = 0; k < K; ++k) {
    poses.middleCols<3>(3 * k) =
        (stacked.middleRows(k * T, T).rowwise() - p.mean.transpose()) * p.components.leftCols<3>();
  }
  return poses;
}

SelectionResult select_pseudolabels(const TrackSet& tracks, const TrackSet& scored,
                                    const std::optional<Rig>& rig, const SelectionConfig& config,
                                    const std::string& video) {
  if (scored.variance.size() != scored.keypoints.size() || scored.frames != tracks.frames) {
    throw DataError("frame scores need variances on the same frames as the tracks");
  }
  SelectionResult out;
  const auto T = static_cast<Eigen::Index>(tracks.frames.size());
  for (Eigen::Index t = 0; t < T; ++t) {
    double worst = 0.0;
    for (const auto& var : scored.variance) {
      for (Eigen::Index c = 0; c < var.cols(); ++c) {
        const double x = var(t, c);
        if (std::isfinite(x)) worst = std::max(worst, x);
      }
    }
    out.scores.push_back({video, tracks.frames[static_cast<std::size_t>(t)], worst});
  }
  if (config.strategy == SelectionStrategy::kRandom) {
    out.selected = random_select(out.scores, config.n_v, config.seed);
  } else {
    Eigen::MatrixXd poses = poses_from_tracks(tracks, rig, config.pose3d);
    if (config.center_poses) poses = center_poses(poses);
    out.selected = select_frames(out.scores, poses, config.n_f, config.n_v, config.seed);
  }
  out.labels = gather_pseudolabels(out.selected, tracks.frames, tracks.means, tracks.views,
                                   tracks.keypoints, "eks");
  return out;
}

json evaluate_tracks(const TrackSet& pred, const TrackSet& truth, const std::optional<TrackSet>& esd,
                     const std::optional<Rig>& rig, const EvaluationOptions& options) {
  if (pred.views != truth.views) throw ShapeMismatch("evaluate: prediction and truth views differ");
  // Align truth keypoints and frames to the prediction.
  std::map<long, Eigen::Index> truth_row;
  for (std::size_t i = 0; i < truth.frames.size(); ++i) truth_row[truth.frames[i]] = static_cast<Eigen::Index>(i);
  const auto T = static_cast<Eigen::Index>(pred.frames.size());
  const auto V = static_cast<Eigen::Index>(pred.views.size());
  std::vector<Eigen::MatrixXd> aligned;
  for (const auto& kp : pred.keypoints) {
    const auto it = std::find(truth.keypoints.begin(), truth.keypoints.end(), kp);
    if (it == truth.keypoints.end()) throw ShapeMismatch("evaluate: truth lacks keypoint '" + kp + "'");
    const Eigen::MatrixXd& src = truth.means[static_cast<std::size_t>(it - truth.keypoints.begin())];
    Eigen::MatrixXd m = Eigen::MatrixXd::Constant(T, 2 * V, std::numeric_limits<double>::quiet_NaN());
    for (Eigen::Index t = 0; t < T; ++t) {
      const auto row = truth_row.find(pred.frames[static_cast<std::size_t>(t)]);
      if (row != truth_row.end()) m.row(t) = src.row(row->second);
    }
    aligned.push_back(std::move(m));
  }

  double sum = 0.0;
  long n = 0;
  std::vector<double> view_sum(static_cast<std::size_t>(V), 0.0);
  std::vector<long> view_n(static_cast<std::size_t>(V), 0);
  json per_kp = json::object();
  for (std::size_t k = 0; k < pred.keypoints.size(); ++k) {
    const Eigen::MatrixXd err = pixel_error(pred.means[k], aligned[k]);
    double ks = 0.0;
    long kn = 0;
    for (Eigen::Index t = 0; t < T; ++t) {
      for (Eigen::Index v = 0; v < V; ++v) {
        if (!std::isfinite(err(t, v))) continue;
        ks += err(t, v);
        ++kn;
        view_sum[static_cast<std::size_t>(v)] += err(t, v);
        ++view_n[static_cast<std::size_t>(v)];
      }
    }
    sum += ks;
    n += kn;
    per_kp[pred.keypoints[k]] = kn > 0 ? json(ks / static_cast<double>(kn)) : json(nullptr);
  }
  json per_view = json::object();
  for (Eigen::Index v = 0; v < V; ++v) {
    const auto i = static_cast<std::size_t>(v);
    per_view[pred.views[i]] = view_n[i] > 0 ? json(view_sum[i] / static_cast<double>(view_n[i])) : json(nullptr);
  }

  json doc = {{"mean_pixel_error", n > 0 ? json(sum / static_cast<double>(n)) : json(nullptr)},
              {"num_entries", n},
              {"per_view", per_view},
              {"per_keypoint", per_kp}};

  if (esd) {
    if (esd->frames != pred.frames || esd->keypoints != pred.keypoints || esd->variance.size() != pred.keypoints.size()) {
      throw ShapeMismatch("evaluate: ensemble variances do not align with predictions");
    }
    std::vector<Eigen::MatrixXd> spread;
    for (const auto& var : esd->variance) spread.push_back(var.cwiseSqrt());
    const ErrorCurve curve = error_vs_esd(pred.means, aligned, spread, options.thresholds, options.pooling);
    json rows = json::array();
    for (std::size_t i = 0; i < curve.thresholds.size(); ++i) {
      rows.push_back({{"threshold", curve.thresholds[i]},
                      {"mean_error", curve.mean_error[i] ? json(*curve.mean_error[i]) : json(nullptr)},
                      {"fraction_included", curve.fraction_included[i]},
                      {"count", curve.count[i]}});
    }
    doc["error_vs_esd"] = rows;
    doc["esd_pooling"] = options.pooling == EsdPooling::kMax ? "max" : "mean";
  }
  if (rig) {
    const Rig aligned_rig = align_rig(*rig, pred.views);
    double rs = 0.0;
    long rn = 0;
    for (const auto& m : pred.means) {
      const Eigen::VectorXd r = reprojection_error_3d(aligned_rig, m);
      for (Eigen::Index t = 0; t < r.size(); ++t) {
        if (std::isfinite(r(t))) {
          rs += r(t);
          ++rn;
        }
      }
    }
    doc["mean_reprojection_error"] = rn > 0 ? json(rs / static_cast<double>(rn)) : json(nullptr);
  }
  return doc;
}

}  // namespace mveks
