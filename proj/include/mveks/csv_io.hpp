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

#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "mveks/ensemble.hpp"

namespace mveks {

/// Formats with 17 significant digits (round-trips every double); NaN is
/// written as "nan".
std::string format_double(double value);

/// Parses a CSV number; empty fields and "nan" (any case) become NaN.
double parse_double(std::string_view field);

/// Minimal CSV document: header plus string cells. No quoting support; the
/// formats used here never embed commas.
struct CsvDocument {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Index of `name` in the header, or -1.
  int column(std::string_view name) const;
};

CsvDocument read_csv(const std::filesystem::path& path);
void write_csv(const CsvDocument& doc, const std::filesystem::path& path);

/// One per-view keypoint table in the ingestion schema
/// `frame,<kp>_x,<kp>_y,<kp>_likelihood,...`. Optional `video` and
/// `provenance` columns are carried through when present, as are the
/// `<kp>_postvar_x,<kp>_postvar_y` columns of smoother output; other unknown
/// columns are ignored on read. Columns ending in `_postvar_x`, `_var_x` or
/// `_obsvar_x` are reserved for variances and never start a keypoint. Likelihood and postvar columns are written only
/// when the corresponding matrix is non-empty.
struct KeypointTable {
  std::vector<long> frames;
  std::vector<std::string> keypoints;
  Eigen::MatrixXd coords;      ///< T x 2K, [kp0_x, kp0_y, kp1_x, ...]
  Eigen::MatrixXd likelihood;  ///< T x K; NaN when the column is absent
  Eigen::MatrixXd postvar;     ///< T x 2K; empty when absent
  std::vector<std::string> videos;
  std::vector<std::string> provenance;
};

KeypointTable read_keypoint_csv(const std::filesystem::path& path);
void write_keypoint_csv(const KeypointTable& table, const std::filesystem::path& path);

/// Reads `<root>/<model_i>/<view>.csv` for every model directory (sorted by
/// name) and returns one EnsembleSeries per keypoint. When `views` is empty the
/// view list is the sorted set of CSV stems in the first model directory.
std::vector<EnsembleSeries> load_prediction_dir(const std::filesystem::path& root,
                                                std::vector<std::string> views = {});

}  // namespace mveks
