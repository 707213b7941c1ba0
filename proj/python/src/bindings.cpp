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

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "mveks/calibration_io.hpp"
#include "mveks/camera.hpp"
#include "mveks/ensemble.hpp"
#include "mveks/errors.hpp"
#include "mveks/inflation.hpp"
#include "mveks/linear_eks.hpp"
#include "mveks/metrics.hpp"
#include "mveks/nonlinear_eks.hpp"
#include "mveks/pipeline.hpp"
#include "mveks/selection.hpp"
#include "mveks/ssm.hpp"
#include "mveks/synth.hpp"

namespace py = pybind11;
using namespace mveks;

namespace {

EnsembleSeries make_series(const std::vector<Eigen::MatrixXd>& members) {
  if (members.empty()) throw EmptyEnsemble("at least one ensemble member is required");
  EnsembleSeries s;
  s.members = members;
  const Eigen::Index T = members.front().rows();
  const Eigen::Index V = members.front().cols() / 2;
  for (Eigen::Index t = 0; t < T; ++t) s.frame_index.push_back(static_cast<long>(t));
  for (Eigen::Index v = 0; v < V; ++v) s.view_names.push_back("view" + std::to_string(v));
  s.validate();
  return s;
}

py::dict posterior_dict(const PosteriorTrack& p) {
  py::dict d;
  d["means"] = p.smoothed_mean_matrix();
  d["covs"] = p.smoothed_covs;
  d["log_likelihood"] = p.log_likelihood;
  return d;
}

}  // namespace

PYBIND11_MODULE(_mveks, m) {
  m.doc() = "Multi-view ensemble Kalman smoothing";
  m.attr("__version__") = kVersion;

  // Python-side hierarchy mirrors the error categories.
  static PyObject* base = PyErr_NewException("mveks.MveksError", PyExc_RuntimeError, nullptr);
  static PyObject* config_exc = PyErr_NewException("mveks.ConfigError", base, nullptr);
  static PyObject* data_exc = PyErr_NewException("mveks.DataError", base, nullptr);
  static PyObject* numerical_exc = PyErr_NewException("mveks.NumericalError", base, nullptr);
  m.attr("MveksError") = py::handle(base);
  m.attr("ConfigError") = py::handle(config_exc);
  m.attr("DataError") = py::handle(data_exc);
  m.attr("NumericalError") = py::handle(numerical_exc);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      PyObject* type = base;
      switch (e.category()) {
        case ErrorCategory::kConfig: type = config_exc; break;
        case ErrorCategory::kData: type = data_exc; break;
        case ErrorCategory::kNumerical: type = numerical_exc; break;
      }
      PyErr_SetString(type, e.what());
    }
  });

  // Cameras and geometry.
  py::class_<Distortion>(m, "Distortion")
      .def(py::init<>())
      .def(py::init([](double k1, double k2, double p1, double p2) { return Distortion{k1, k2, p1, p2}; }),
           py::arg("k1") = 0.0, py::arg("k2") = 0.0, py::arg("p1") = 0.0, py::arg("p2") = 0.0)
      .def_readwrite("k1", &Distortion::k1)
      .def_readwrite("k2", &Distortion::k2)
      .def_readwrite("p1", &Distortion::p1)
      .def_readwrite("p2", &Distortion::p2);

  py::class_<CameraModel>(m, "Camera")
      .def(py::init<>())
      .def_readwrite("name", &CameraModel::name)
      .def_readwrite("rotation", &CameraModel::rotation)
      .def_readwrite("translation", &CameraModel::translation)
      .def_readwrite("fx", &CameraModel::fx)
      .def_readwrite("fy", &CameraModel::fy)
      .def_readwrite("cx", &CameraModel::cx)
      .def_readwrite("cy", &CameraModel::cy)
      .def_readwrite("distortion", &CameraModel::distortion)
      .def("validate", &CameraModel::validate);

  py::class_<Rig>(m, "Rig")
      .def(py::init<std::vector<CameraModel>>())
      .def("__len__", &Rig::size)
      .def("__getitem__", [](const Rig& r, std::size_t i) {
        if (i >= r.size()) throw py::index_error();
        return r[i];
      })
      .def_property_readonly("names", &Rig::names)
      .def_property_readonly("cameras", &Rig::cameras);

  m.def("load_calibration", &load_calibration, py::arg("path"));
  m.def("save_calibration", &save_calibration, py::arg("rig"), py::arg("path"));
  m.def("project", &project, py::arg("camera"), py::arg("point"));
  m.def("project_with_jacobian", [](const CameraModel& cam, const Point3& p) {
    const auto r = project_with_jacobian(cam, p);
    return py::make_tuple(r.pixel, r.jacobian);
  }, py::arg("camera"), py::arg("point"));
  m.def("undistort", &undistort, py::arg("camera"), py::arg("pixel"));
  m.def("project_rig", &project_rig, py::arg("rig"), py::arg("point"));
  m.def("triangulate", [](const Rig& rig, const Eigen::VectorXd& row) { return triangulate_median(rig, row); },
        py::arg("rig"), py::arg("observations"),
        "Median over view pairs of DLT triangulations; observations are stacked [x_1, y_1, ...].");
  m.def("triangulate_track", &triangulate_track, py::arg("rig"), py::arg("observations"));

  // Ensembles.
  py::class_<EnsembleSummary>(m, "EnsembleSummary")
      .def_readonly("median", &EnsembleSummary::median)
      .def_readonly("variance", &EnsembleSummary::variance)
      .def_readonly("esd", &EnsembleSummary::esd);
  m.def("summarize", [](const std::vector<Eigen::MatrixXd>& members) { return summarize(make_series(members)); },
        py::arg("members"), "Per-cell median, variance and standard deviation of T x 2V member predictions.");

  // Linear-Gaussian smoothing.
  m.def("kalman_smooth",
        [](const Eigen::VectorXd& m0, const Eigen::MatrixXd& P0, const Eigen::MatrixXd& Q,
           const Eigen::MatrixXd& W, const Eigen::VectorXd& mu, const Eigen::MatrixXd& obs,
           const Eigen::MatrixXd& obs_var) {
          LinearGaussianModel model{m0, P0, Q, W, mu};
          return posterior_dict(kalman_smooth(model, obs, obs_var));
        },
        py::arg("initial_mean"), py::arg("initial_cov"), py::arg("dynamics_cov"), py::arg("obs_map"),
        py::arg("obs_offset"), py::arg("obs"), py::arg("obs_var"));

  py::class_<LinearObsModel>(m, "LinearModel")
      .def_readwrite("W", &LinearObsModel::W)
      .def_readwrite("mu", &LinearObsModel::mu)
      .def_readwrite("E", &LinearObsModel::E)
      .def_readwrite("s", &LinearObsModel::s)
      .def_readwrite("initial_mean", &LinearObsModel::initial_mean)
      .def_readwrite("initial_cov", &LinearObsModel::initial_cov)
      .def_readonly("explained_variance", &LinearObsModel::explained_variance)
      .def_property_readonly("latent_dim", &LinearObsModel::latent_dim);

  py::class_<NonlinearObsModel>(m, "NonlinearModel")
      .def_readwrite("E", &NonlinearObsModel::E)
      .def_readwrite("s", &NonlinearObsModel::s)
      .def_readonly("init_track", &NonlinearObsModel::init_track)
      .def_readwrite("initial_mean", &NonlinearObsModel::initial_mean)
      .def_readwrite("initial_cov", &NonlinearObsModel::initial_cov)
      .def_readonly("rig", &NonlinearObsModel::rig);

  py::class_<SmoothedTrack>(m, "SmoothedTrack")
      .def_readonly("means", &SmoothedTrack::means)
      .def_readonly("pred_vars", &SmoothedTrack::pred_vars)
      .def_readonly("latent_means", &SmoothedTrack::latent_means)
      .def_readonly("loglik", &SmoothedTrack::loglik);

  py::class_<SmoothingSearchResult>(m, "SmoothingSearchResult")
      .def_readonly("s", &SmoothingSearchResult::s)
      .def_readonly("loglik", &SmoothingSearchResult::loglik)
      .def_readonly("initial_loglik", &SmoothingSearchResult::initial_loglik)
      .def_readonly("iterations", &SmoothingSearchResult::iterations)
      .def_readonly("converged", &SmoothingSearchResult::converged);

  m.def("fit_params",
        [](const Eigen::MatrixXd& median, const Eigen::MatrixXd& variance, Eigen::Index d, double quantile) {
          EnsembleSummary s{median, variance, variance.cwiseSqrt()};
          return fit_params(s, d, quantile);
        },
        py::arg("median"), py::arg("variance"), py::arg("latent_dim") = 3,
        py::arg("quantile") = kDefaultLowVarianceQuantile);
  m.def("fit_nonlinear_params", py::overload_cast<const Rig&, const Eigen::MatrixXd&>(&fit_nonlinear_params),
        py::arg("rig"), py::arg("obs"));
  m.def("linearize_rig", &linearize_rig, py::arg("rig"), py::arg("anchor"), py::arg("E"), py::arg("s") = 1.0);

  m.def("optimize_smoothing",
        [](const LinearObsModel& model, const Eigen::MatrixXd& obs, const Eigen::MatrixXd& var) {
          return optimize_smoothing(model, obs, var);
        },
        py::arg("model"), py::arg("obs"), py::arg("obs_var"));
  m.def("optimize_smoothing",
        [](const NonlinearObsModel& model, const Eigen::MatrixXd& obs, const Eigen::MatrixXd& var) {
          return optimize_smoothing(model, obs, var);
        },
        py::arg("model"), py::arg("obs"), py::arg("obs_var"));
  m.def("smooth", py::overload_cast<const LinearObsModel&, const Eigen::MatrixXd&, const Eigen::MatrixXd&>(&smooth),
        py::arg("model"), py::arg("obs"), py::arg("obs_var"));
  m.def("smooth",
        py::overload_cast<const NonlinearObsModel&, const Eigen::MatrixXd&, const Eigen::MatrixXd&>(&smooth),
        py::arg("model"), py::arg("obs"), py::arg("obs_var"));

  // Variance inflation.
  py::enum_<PosteriorScope>(m, "PosteriorScope")
      .value("LEAVE_ONE_OUT", PosteriorScope::kLeaveOneOut)
      .value("ALL_VIEWS", PosteriorScope::kAllViews);
  py::class_<InflationOptions>(m, "InflationOptions")
      .def(py::init<>())
      .def_readwrite("threshold", &InflationOptions::threshold)
      .def_readwrite("factor", &InflationOptions::factor)
      .def_readwrite("max_doublings", &InflationOptions::max_doublings)
      .def_readwrite("scope", &InflationOptions::scope);
  py::class_<InflationReport>(m, "InflationReport")
      .def_readonly("inflated_vars", &InflationReport::inflated_vars)
      .def_readonly("n_doublings", &InflationReport::n_doublings)
      .def_readonly("final_distance", &InflationReport::final_distance)
      .def_readonly("threshold", &InflationReport::threshold)
      .def("inflated_frames", &InflationReport::inflated_frames);
  m.def("inflate",
        py::overload_cast<const Eigen::MatrixXd&, const Eigen::MatrixXd&, const LinearObsModel&,
                          const InflationOptions&>(&inflate),
        py::arg("obs"), py::arg("obs_var"), py::arg("model"), py::arg("options") = InflationOptions{});
  m.def("inflate",
        py::overload_cast<const Eigen::MatrixXd&, const Eigen::MatrixXd&, const NonlinearObsModel&,
                          const InflationOptions&>(&inflate),
        py::arg("obs"), py::arg("obs_var"), py::arg("model"), py::arg("options") = InflationOptions{});
  m.def("mahalanobis_view", &mahalanobis_view, py::arg("W"), py::arg("var"), py::arg("x"), py::arg("mu"),
        py::arg("view"), py::arg("scope") = PosteriorScope::kLeaveOneOut);

  // Synthetic data. The configuration travels as a JSON string.
  py::class_<SynthResult>(m, "SynthResult")
      .def_readonly("rig", &SynthResult::rig)
      .def_readonly("keypoints", &SynthResult::keypoints)
      .def_readonly("truth3d", &SynthResult::truth3d)
      .def_readonly("truth2d", &SynthResult::truth2d)
      .def_property_readonly("members", [](const SynthResult& r) {
        std::vector<std::vector<Eigen::MatrixXd>> out;
        for (const auto& s : r.series) out.push_back(s.members);
        return out;
      })
      .def_property_readonly("ledger", [](const SynthResult& r) {
        py::list out;
        for (const auto& rec : r.ledger) {
          py::dict d;
          d["frame"] = rec.frame;
          d["keypoint"] = rec.keypoint;
          d["view"] = rec.view;
          d["member"] = rec.member;
          d["kind"] = to_string(rec.kind);
          d["offset"] = Eigen::Vector2d(rec.offset);
          out.append(d);
        }
        return out;
      })
      .def("corrupted_frames", [](const SynthResult& r) {
        std::vector<bool> out;
        for (char c : r.corrupted_frames()) out.push_back(c != 0);
        return out;
      });
  m.def("_generate", [](const std::string& config) {
    return generate(synth_config_from_json(nlohmann::json::parse(config)));
  });
  m.def("_default_synth_config", [] { return synth_config_to_json(SynthConfig{}).dump(); });
  m.def("write_synth", &write_synth, py::arg("result"), py::arg("out_dir"));

  // Selection.
  py::class_<FrameScore>(m, "FrameScore")
      .def(py::init([](std::string video, long frame, double s) { return FrameScore{std::move(video), frame, s}; }),
           py::arg("video"), py::arg("frame"), py::arg("sigma2_max"))
      .def_readonly("video", &FrameScore::video)
      .def_readonly("frame", &FrameScore::frame)
      .def_readonly("sigma2_max", &FrameScore::sigma2_max);
  py::class_<SelectedFrame>(m, "SelectedFrame")
      .def_readonly("video", &SelectedFrame::video)
      .def_readonly("frame", &SelectedFrame::frame)
      .def_readonly("cluster", &SelectedFrame::cluster)
      .def_readonly("sigma2_max", &SelectedFrame::sigma2_max);
  m.def("quality_filter", &quality_filter, py::arg("scores"), py::arg("n_f"));
  m.def("diversity_select", &diversity_select, py::arg("frames"), py::arg("poses"), py::arg("n_v"),
        py::arg("seed") = 0);
  m.def("random_select", &random_select, py::arg("frames"), py::arg("n_v"), py::arg("seed") = 0);
  m.def("select_frames", &select_frames, py::arg("scores"), py::arg("poses"), py::arg("n_f"), py::arg("n_v"),
        py::arg("seed") = 0);
  m.def("center_poses", &center_poses, py::arg("poses"), py::arg("axes") = 3);

  // Metrics.
  py::class_<ErrorCurve>(m, "ErrorCurve")
      .def_readonly("thresholds", &ErrorCurve::thresholds)
      .def_readonly("mean_error", &ErrorCurve::mean_error)
      .def_readonly("fraction_included", &ErrorCurve::fraction_included)
      .def_readonly("count", &ErrorCurve::count);
  m.def("pixel_error", &pixel_error, py::arg("pred"), py::arg("truth"));
  m.def("mean_pixel_error", &mean_pixel_error, py::arg("pred"), py::arg("truth"));
  m.def("error_vs_esd",
        [](const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth, const Eigen::MatrixXd& esd,
           const std::vector<double>& thresholds) { return error_vs_esd(pred, truth, esd, thresholds); },
        py::arg("pred"), py::arg("truth"), py::arg("esd"), py::arg("thresholds"));
  m.def("reprojection_error_3d",
        py::overload_cast<const Rig&, const Eigen::MatrixXd&>(&reprojection_error_3d), py::arg("rig"),
        py::arg("obs"));

  // Whole pipeline over a prediction directory.
  m.def("_run_smooth", [](const std::string& config, const std::filesystem::path& out) {
    const RunConfig cfg = run_config_from_json(nlohmann::json::parse(config));
    const SmoothRun run = run_smooth(cfg);
    write_smooth_outputs(run, out);
    return smooth_manifest(run).dump();
  });
}
