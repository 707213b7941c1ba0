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

// mveks command-line front end.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mveks/calibration_io.hpp"
#include "mveks/csv_io.hpp"
#include "mveks/errors.hpp"
#include "mveks/nonlinear_eks.hpp"
#include "mveks/pipeline.hpp"
#include "mveks/synth.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace mveks;

namespace {

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<std::string> csv_stems(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("directory " + dir.string() + " not found");
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".csv") out.push_back(e.path().stem().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Views of a smoothing output directory: from its manifest when present.
std::vector<std::string> views_of(const fs::path& dir, const std::string& flag) {
  if (!flag.empty()) return split_list(flag);
  const fs::path manifest = dir / "manifest.json";
  if (fs::exists(manifest)) {
    std::ifstream in(manifest);
    const json doc = json::parse(in);
    if (doc.contains("views")) return doc["views"].get<std::vector<std::string>>();
  }
  std::vector<std::string> stems = csv_stems(dir);
  stems.erase(std::remove(stems.begin(), stems.end(), "inflation_report"), stems.end());
  return stems;
}

void write_json_file(const json& doc, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

// Flags shared by `smooth` and `inflate-report`; only flags that were given
// override the config file.
struct RunFlags {
  std::string config;
  std::string input;
  std::string calibration;
  std::string views;
  std::string output;
  std::string mode;
  std::string latent_dim;
  std::string inflation;
  double threshold = 5.0;
  double factor = 2.0;
  int max_doublings = 30;
  std::string scope;
  std::string smoothing;
  double learning_rate = 0.25;
  std::uint64_t seed = 0;
  int jobs = 0;
  std::string video;

  CLI::Option* threshold_opt = nullptr;
  CLI::Option* factor_opt = nullptr;
  CLI::Option* doublings_opt = nullptr;
  CLI::Option* lr_opt = nullptr;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* jobs_opt = nullptr;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", config, "JSON run configuration");
    cmd->add_option("-i,--input", input, "prediction directory holding <model>/<view>.csv");
    cmd->add_option("-c,--calibration", calibration, "camera calibration JSON");
    cmd->add_option("--views", views, "comma-separated view names (default: CSV stems)");
    cmd->add_option("-o,--output", output, "output directory");
    cmd->add_option("--mode", mode, "linear | nonlinear | auto (nonlinear iff calibrated)")
        ->check(CLI::IsMember({"linear", "nonlinear", "auto"}));
    cmd->add_option("--latent-dim", latent_dim,
                    "latent dimension or auto-99 (default: smallest d with >= 99% variance)");
    cmd->add_option("--inflation", inflation, "on | off (default: on)")
        ->check(CLI::IsMember({"on", "off"}));
    threshold_opt = cmd->add_option("--threshold", threshold, "Mahalanobis threshold (default: 5)");
    factor_opt = cmd->add_option("--factor", factor, "variance inflation factor (default: 2)");
    doublings_opt = cmd->add_option("--max-doublings", max_doublings, "inflation steps per cell");
    cmd->add_option("--scope", scope, "leave_one_out | all_views posterior for inflation")
        ->check(CLI::IsMember({"leave_one_out", "all_views"}));
    cmd->add_option("--smoothing", smoothing, "auto, or a fixed smoothing parameter s");
    lr_opt = cmd->add_option("--lr", learning_rate, "Adam learning rate on log s (default: 0.25)");
    seed_opt = cmd->add_option("--seed", seed, "random seed recorded in the manifest");
    jobs_opt = cmd->add_option("--jobs", jobs, std::string("worker threads (default: $") + kJobsEnvVar + " or all cores)");
    cmd->add_option("--video", video, "video id attached to outputs");
  }

  RunConfig resolve() const {
    RunConfig c = config.empty() ? RunConfig{} : load_run_config(config);
    if (!input.empty()) c.input_dir = input;
    if (!calibration.empty()) c.calibration = calibration;
    if (!views.empty()) c.views = split_list(views);
    if (!output.empty()) c.output_dir = output;
    if (!mode.empty()) c = run_config_from_json({{"mode", mode}}, c);
    if (!latent_dim.empty()) {
      if (latent_dim == "auto-99" || latent_dim == "auto") {
        c.latent_dim = 0;
      } else {
        try {
          c.latent_dim = std::stoi(latent_dim);
        } catch (const std::exception&) {
          throw ConfigError("--latent-dim must be an integer or auto-99");
        }
      }
    }
    if (!inflation.empty()) c.inflation = inflation == "on";
    if (threshold_opt->count()) c.inflation_options.threshold = threshold;
    if (factor_opt->count()) c.inflation_options.factor = factor;
    if (doublings_opt->count()) c.inflation_options.max_doublings = max_doublings;
    if (!scope.empty()) c = run_config_from_json({{"inflation", {{"scope", scope}}}}, c);
    if (!smoothing.empty()) {
      if (smoothing == "auto") {
        c.optimize_smoothing = true;
      } else {
        try {
          c.fixed_s = std::stod(smoothing);
        } catch (const std::exception&) {
          throw ConfigError("--smoothing must be 'auto' or a positive number");
        }
        c.optimize_smoothing = false;
      }
    }
    if (lr_opt->count()) c.search.learning_rate = learning_rate;
    if (seed_opt->count()) c.seed = seed;
    if (jobs_opt->count()) c.jobs = jobs;
    if (!video.empty()) c.video = video;
    if (c.input_dir.empty()) throw ConfigError("no input directory (use --input or the config file)");
    c.validate();
    return c;
  }
};

int cmd_smooth(const RunFlags& flags) {
  const RunConfig config = flags.resolve();
  const SmoothRun run = run_smooth(config);
  write_smooth_outputs(run, config.output_dir);
  long cells = 0;
  for (const auto& r : run.results) {
    if (r.inflation) cells += (r.inflation->n_doublings.array() > 0).count();
  }
  std::cout << "smoothed " << run.keypoints.size() << " keypoints x " << run.frames.size()
            << " frames (" << to_string(run.mode) << "), inflated cells: " << cells << " -> "
            << config.output_dir.string() << '\n';
  return 0;
}

int cmd_inflate_report(const RunFlags& flags) {
  const RunConfig config = flags.resolve();
  const SmoothRun run = run_inflation_report(config);
  fs::create_directories(config.output_dir);
  write_inflation_report(run, config.output_dir / "inflation_report.csv");
  write_json_file(smooth_manifest(run), config.output_dir / "manifest.json");
  std::cout << "wrote " << (config.output_dir / "inflation_report.csv").string() << '\n';
  return 0;
}

struct SelectFlags {
  std::string smooth_dir;
  std::string calibration;
  std::string views;
  std::string labels;
  std::string output;
  std::size_t n_f = 450;
  int n_v = 25;
  std::uint64_t seed = 0;
  std::string score = "postvar";
  std::string pose3d = "triangulate";
  std::string strategy = "targeted";
  bool no_center = false;
  std::string video = "video0";
};

int cmd_select(const SelectFlags& f) {
  SelectionConfig cfg;
  cfg.n_f = f.n_f;
  cfg.n_v = f.n_v;
  cfg.seed = f.seed;
  cfg.center_poses = !f.no_center;
  const RunConfig parsed = run_config_from_json(
      {{"selection", {{"score", f.score}, {"pose3d", f.pose3d}, {"strategy", f.strategy}}}});
  cfg.score = parsed.selection.score;
  cfg.pose3d = parsed.selection.pose3d;
  cfg.strategy = parsed.selection.strategy;
  if (cfg.n_f < 1 || cfg.n_v < 1) throw ConfigError("--nf and --nv must be at least 1");

  const fs::path dir = f.smooth_dir;
  const std::vector<std::string> views = views_of(dir, f.views);
  const TrackSet tracks = read_track_dir(dir, views);
  const TrackSet scored = cfg.score == ScoreSource::kPosterior ? tracks : read_ensemble_dir(dir / "ensemble", views);
  if (scored.variance.empty()) throw DataError("no variances available for scoring in " + dir.string());
  std::optional<Rig> rig;
  if (!f.calibration.empty()) rig = load_calibration(f.calibration);
  if (!rig && cfg.pose3d == PoseSource::kTriangulate && cfg.strategy == SelectionStrategy::kTargeted) {
    throw ConfigError("--pose3d triangulate needs --calibration (or use --pose3d pca)");
  }
  const SelectionResult res = select_pseudolabels(tracks, scored, rig, cfg, f.video);

  std::vector<KeypointTable> truth;
  if (!f.labels.empty()) {
    for (const auto& v : views) truth.push_back(read_keypoint_csv(fs::path(f.labels) / (v + ".csv")));
  }
  const fs::path out = f.output.empty() ? dir / "selection" : fs::path(f.output);
  fs::create_directories(out);
  write_selection_manifest(res.selected, out / "selection.jsonl");
  write_label_dir(combine_labels(res.labels, truth), views, out / "labels");
  std::cout << "selected " << res.selected.size() << " frames -> " << out.string() << '\n';
  return 0;
}

struct EvaluateFlags {
  std::string pred;
  std::string truth;
  std::string ensemble;
  std::string calibration;
  std::string views;
  std::string thresholds;
  std::string pooling = "max";
  std::string output;
  std::string csv;
};

int cmd_evaluate(const EvaluateFlags& f) {
  const std::vector<std::string> views = views_of(f.pred, f.views);
  const TrackSet pred = read_track_dir(f.pred, views);
  const TrackSet truth = read_track_dir(f.truth, views);
  std::optional<TrackSet> ens;
  if (!f.ensemble.empty()) {
    // Accept the smoothing output directory as well as its ensemble/ child.
    const fs::path nested = fs::path(f.ensemble) / "ensemble";
    ens = read_ensemble_dir(fs::is_directory(nested) ? nested : fs::path(f.ensemble), views);
  }
  std::optional<Rig> rig;
  if (!f.calibration.empty()) rig = load_calibration(f.calibration);
  EvaluationOptions opts;
  if (!f.thresholds.empty()) {
    opts.thresholds.clear();
    for (const auto& t : split_list(f.thresholds)) opts.thresholds.push_back(parse_double(t));
  }
  if (f.pooling == "mean") opts.pooling = EsdPooling::kMean;
  const json metrics = evaluate_tracks(pred, truth, ens, rig, opts);
  if (f.output.empty()) {
    std::cout << metrics.dump(2) << '\n';
  } else {
    write_json_file(metrics, f.output);
  }
  if (!f.csv.empty()) {
    if (!metrics.contains("error_vs_esd")) throw ConfigError("--csv needs --ensemble for e.s.d. strata");
    CsvDocument doc;
    doc.header = {"threshold", "error", "fraction"};
    for (const auto& row : metrics["error_vs_esd"]) {
      doc.rows.push_back({format_double(row["threshold"].get<double>()),
                          row["mean_error"].is_null() ? "" : format_double(row["mean_error"].get<double>()),
                          format_double(row["fraction_included"].get<double>())});
    }
    write_csv(doc, f.csv);
  }
  return 0;
}

struct SynthFlags {
  std::string config;
  std::string output = "synth_out";
  long frames = 0;
  int keypoints = 0;
  int views = 0;
  int members = 0;
  std::uint64_t seed = 0;
  double sigma = 0.0;
  double outlier_rate = -1.0;
  double confident_rate = -1.0;
  double k1 = 0.0;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* k1_opt = nullptr;
};

int cmd_synth(const SynthFlags& f) {
  SynthConfig c;
  if (!f.config.empty()) {
    std::ifstream in(f.config);
    if (!in) throw ConfigError("cannot open " + f.config);
    try {
      c = synth_config_from_json(json::parse(in));
    } catch (const json::exception& e) {
      throw ConfigError(f.config + ": " + e.what());
    }
  }
  if (f.frames > 0) c.num_frames = f.frames;
  if (f.keypoints > 0) c.num_keypoints = f.keypoints;
  if (f.views > 0) c.rig.num_views = f.views;
  if (f.members > 0) c.num_members = f.members;
  if (f.seed_opt->count()) c.seed = f.seed;
  if (f.sigma > 0.0) c.noise.sigma_default = f.sigma;
  if (f.outlier_rate >= 0.0) c.noise.outlier_rate = f.outlier_rate;
  if (f.confident_rate >= 0.0) c.noise.confident_outlier_rate = f.confident_rate;
  if (f.k1_opt->count()) c.rig.distortion.k1 = f.k1;
  const SynthResult result = generate(c);
  write_synth(result, f.output);
  std::cout << "wrote synthetic data (" << c.num_frames << " frames, " << c.num_keypoints
            << " keypoints, " << c.rig.num_views << " views, " << c.num_members << " members, "
            << result.ledger.size() << " corruptions) -> " << f.output << '\n';
  return 0;
}

struct TriangulateFlags {
  std::string input;
  std::string calibration;
  std::string views;
  std::string output;
};

int cmd_triangulate(const TriangulateFlags& f) {
  const Rig calibrated = load_calibration(f.calibration);
  const std::vector<std::string> views = f.views.empty() ? calibrated.names() : split_list(f.views);
  const TrackSet tracks = read_track_dir(f.input, views);
  const Rig rig = align_rig(calibrated, views);
  fs::create_directories(f.output);
  for (std::size_t k = 0; k < tracks.keypoints.size(); ++k) {
    CsvDocument doc;
    doc.header = {"frame", "X", "Y", "Z", "reprojection_error"};
    const Eigen::MatrixXd& obs = tracks.means[k];
    for (Eigen::Index t = 0; t < obs.rows(); ++t) {
      std::vector<std::string> row{std::to_string(tracks.frames[static_cast<std::size_t>(t)])};
      try {
        const Point3 p = triangulate_median(rig, obs.row(t).transpose());
        for (int i = 0; i < 3; ++i) row.push_back(format_double(p(i)));
        row.push_back(format_double(reprojection_error_3d(rig, Eigen::VectorXd(obs.row(t).transpose()))));
      } catch (const InsufficientViews&) {
        row.insert(row.end(), 4, "nan");
      } catch (const DegenerateGeometry&) {
        row.insert(row.end(), 4, "nan");
      } catch (const NonPositiveDepth&) {
        row.insert(row.end(), 4, "nan");
      }
      doc.rows.push_back(std::move(row));
    }
    write_csv(doc, fs::path(f.output) / (tracks.keypoints[k] + ".csv"));
  }
  std::cout << "triangulated " << tracks.keypoints.size() << " keypoints -> " << f.output << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-view ensemble Kalman smoothing of pose-estimation outputs"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  RunFlags smooth_flags;
  auto* smooth = app.add_subcommand("smooth", "ensemble summary, variance inflation and smoothing");
  smooth_flags.add_to(smooth);

  RunFlags report_flags;
  auto* report = app.add_subcommand("inflate-report", "run variance inflation only and list inflated cells");
  report_flags.add_to(report);

  SelectFlags sel;
  auto* select = app.add_subcommand("select-frames", "choose pseudo-label frames from smoothing output");
  select->add_option("-s,--smooth-dir", sel.smooth_dir, "output directory of `smooth`")->required();
  select->add_option("-c,--calibration", sel.calibration, "camera calibration JSON");
  select->add_option("--views", sel.views, "comma-separated view names");
  select->add_option("--labels", sel.labels, "ground-truth label directory to merge with");
  select->add_option("-o,--output", sel.output, "output directory (default: <smooth-dir>/selection)");
  select->add_option("--nf", sel.n_f, "frames kept by the variance filter (default: 450)");
  select->add_option("--nv", sel.n_v, "k-means clusters per video (default: 25)");
  select->add_option("--seed", sel.seed, "k-means / random seed");
  select->add_option("--score", sel.score, "postvar | ensvar")->check(CLI::IsMember({"postvar", "ensvar"}));
  select->add_option("--pose3d", sel.pose3d, "triangulate | pca")->check(CLI::IsMember({"triangulate", "pca"}));
  select->add_option("--strategy", sel.strategy, "targeted | random")->check(CLI::IsMember({"targeted", "random"}));
  select->add_flag("--no-center", sel.no_center, "cluster raw poses instead of median-centered ones");
  select->add_option("--video", sel.video, "video id for the selection manifest");

  EvaluateFlags ev;
  auto* evaluate = app.add_subcommand("evaluate", "pixel error against ground truth");
  evaluate->add_option("-p,--pred", ev.pred, "directory of per-view prediction CSVs")->required();
  evaluate->add_option("-t,--truth", ev.truth, "directory of per-view ground-truth CSVs")->required();
  evaluate->add_option("-e,--ensemble", ev.ensemble, "output of `smooth`, or its ensemble/ directory (for e.s.d.)");
  evaluate->add_option("-c,--calibration", ev.calibration, "calibration for reprojection error");
  evaluate->add_option("--views", ev.views, "comma-separated view names");
  evaluate->add_option("--thresholds", ev.thresholds, "comma-separated e.s.d. thresholds in pixels");
  evaluate->add_option("--pooling", ev.pooling, "max | mean of x/y e.s.d.")->check(CLI::IsMember({"max", "mean"}));
  evaluate->add_option("-o,--output", ev.output, "metrics JSON path (default: stdout)");
  evaluate->add_option("--csv", ev.csv, "threshold,error,fraction CSV path");

  SynthFlags sy;
  auto* synth = app.add_subcommand("synth", "generate a synthetic rig, trajectories and ensembles");
  synth->add_option("--config", sy.config, "synthetic data JSON configuration");
  synth->add_option("-o,--output", sy.output, "output directory");
  synth->add_option("--frames", sy.frames, "number of frames");
  synth->add_option("--keypoints", sy.keypoints, "number of keypoints");
  synth->add_option("--views", sy.views, "number of cameras");
  synth->add_option("--members", sy.members, "ensemble size");
  sy.seed_opt = synth->add_option("--seed", sy.seed, "random seed");
  synth->add_option("--sigma", sy.sigma, "member noise standard deviation (pixels)");
  synth->add_option("--outlier-rate", sy.outlier_rate, "uniform outlier probability per member/view/frame");
  synth->add_option("--confident-rate", sy.confident_rate, "shared single-view bias probability per frame");
  sy.k1_opt = synth->add_option("--k1", sy.k1, "radial distortion k1 of every camera");

  TriangulateFlags tr;
  auto* triangulate = app.add_subcommand("triangulate", "median-of-pairs triangulation of per-view CSVs");
  triangulate->add_option("-i,--input", tr.input, "directory of per-view keypoint CSVs")->required();
  triangulate->add_option("-c,--calibration", tr.calibration, "camera calibration JSON")->required();
  triangulate->add_option("--views", tr.views, "comma-separated view names (default: calibration cameras)");
  triangulate->add_option("-o,--output", tr.output, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ErrorCategory::kConfig);
  }

  try {
    if (*smooth) return cmd_smooth(smooth_flags);
    if (*report) return cmd_inflate_report(report_flags);
    if (*select) return cmd_select(sel);
    if (*evaluate) return cmd_evaluate(ev);
    if (*synth) return cmd_synth(sy);
    if (*triangulate) return cmd_triangulate(tr);
  } catch (const Error& e) {
    std::cerr << "mveks: " << e.what() << '\n';
    return e.exit_code();
  } catch (const json::exception& e) {
    std::cerr << "mveks: " << e.what() << '\n';
    return static_cast<int>(ErrorCategory::kConfig);
  } catch (const std::exception& e) {
    std::cerr << "mveks: " << e.what() << '\n';
    return static_cast<int>(ErrorCategory::kData);
  }
  return 0;
}
