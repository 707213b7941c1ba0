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

#include "mveks/csv_io.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <map>
#include <limits>
#include <sstream>

#include "mveks/errors.hpp"

namespace mveks {

namespace fs = std::filesystem;

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view field) {
  while (!field.empty() && std::isspace(static_cast<unsigned char>(field.front()))) field.remove_prefix(1);
  while (!field.empty() && std::isspace(static_cast<unsigned char>(field.back()))) field.remove_suffix(1);
  if (field.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::string lower(field);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "nan" || lower == "-nan") return std::numeric_limits<double>::quiet_NaN();
  double value = 0.0;
  const char* begin = field.data();
  if (*begin == '+') ++begin;
  const auto res = std::from_chars(begin, field.data() + field.size(), value);
  if (res.ec != std::errc() || res.ptr != field.data() + field.size()) {
    throw DataError("cannot parse number '" + std::string(field) + "'");
  }
  return value;
}

int CsvDocument::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return static_cast<int>(i);
  }
  return -1;
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

CsvDocument read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  CsvDocument doc;
  std::string line;
  bool have_header = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_line(line);
    if (!have_header) {
      doc.header = std::move(cells);
      have_header = true;
      continue;
    }
    if (cells.size() != doc.header.size()) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                      std::to_string(doc.header.size()) + " fields, found " +
                      std::to_string(cells.size()));
    }
    doc.rows.push_back(std::move(cells));
  }
  if (!have_header) throw DataError(path.string() + ": empty file");
  return doc;
}

void write_csv(const CsvDocument& doc, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  auto write_row = [&out](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out << ',';
      out << cells[i];
    }
    out << '\n';
  };
  write_row(doc.header);
  for (const auto& row : doc.rows) write_row(row);
}

namespace {

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Variance columns that accompany a keypoint and never name one.
bool is_variance_column(const std::string& name) {
  return ends_with(name, "_postvar_x") || ends_with(name, "_var_x") || ends_with(name, "_obsvar_x");
}

long parse_frame(const std::string& cell, const fs::path& path) {
  long frame = 0;
  const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), frame);
  if (res.ec != std::errc() || res.ptr != cell.data() + cell.size()) {
    // Accept integral values written in floating-point form.
    const double f = parse_double(cell);
    if (!std::isfinite(f) || f != std::floor(f)) {
      throw DataError(path.string() + ": bad frame id '" + cell + "'");
    }
    frame = static_cast<long>(f);
  }
  return frame;
}

}  // namespace

KeypointTable read_keypoint_csv(const fs::path& path) {
  const CsvDocument doc = read_csv(path);
  const int frame_col = doc.column("frame");
  if (frame_col < 0) throw DataError(path.string() + ": missing 'frame' column");

  KeypointTable table;
  std::vector<std::pair<int, int>> xy_cols;
  std::vector<int> lik_cols;
  for (const auto& name : doc.header) {
    if (!ends_with(name, "_x") || is_variance_column(name)) continue;
    const std::string kp = name.substr(0, name.size() - 2);
    const int xc = doc.column(name);
    const int yc = doc.column(kp + "_y");
    if (yc < 0) throw DataError(path.string() + ": column '" + name + "' has no matching _y");
    table.keypoints.push_back(kp);
    xy_cols.emplace_back(xc, yc);
    lik_cols.push_back(doc.column(kp + "_likelihood"));
  }
  if (table.keypoints.empty()) throw DataError(path.string() + ": no keypoint columns");

  const auto rows = static_cast<Eigen::Index>(doc.rows.size());
  const auto kps = static_cast<Eigen::Index>(table.keypoints.size());
  table.coords.resize(rows, 2 * kps);
  table.likelihood.setConstant(rows, kps, std::numeric_limits<double>::quiet_NaN());
  std::vector<std::pair<int, int>> var_cols;
  bool has_postvar = false;
  for (const auto& kp : table.keypoints) {
    var_cols.emplace_back(doc.column(kp + "_postvar_x"), doc.column(kp + "_postvar_y"));
    has_postvar = has_postvar || var_cols.back().first >= 0;
  }
  if (has_postvar) table.postvar.setConstant(rows, 2 * kps, std::numeric_limits<double>::quiet_NaN());
  const int video_col = doc.column("video");
  const int prov_col = doc.column("provenance");
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& cells = doc.rows[static_cast<std::size_t>(r)];
    table.frames.push_back(parse_frame(cells[static_cast<std::size_t>(frame_col)], path));
    for (Eigen::Index k = 0; k < kps; ++k) {
      const auto [xc, yc] = xy_cols[static_cast<std::size_t>(k)];
      table.coords(r, 2 * k) = parse_double(cells[static_cast<std::size_t>(xc)]);
      table.coords(r, 2 * k + 1) = parse_double(cells[static_cast<std::size_t>(yc)]);
      const int lc = lik_cols[static_cast<std::size_t>(k)];
      if (lc >= 0) table.likelihood(r, k) = parse_double(cells[static_cast<std::size_t>(lc)]);
      const auto [vx, vy] = var_cols[static_cast<std::size_t>(k)];
      if (vx >= 0) table.postvar(r, 2 * k) = parse_double(cells[static_cast<std::size_t>(vx)]);
      if (vy >= 0) table.postvar(r, 2 * k + 1) = parse_double(cells[static_cast<std::size_t>(vy)]);
    }
    if (video_col >= 0) table.videos.push_back(cells[static_cast<std::size_t>(video_col)]);
    if (prov_col >= 0) table.provenance.push_back(cells[static_cast<std::size_t>(prov_col)]);
  }
  return table;
}

void write_keypoint_csv(const KeypointTable& table, const fs::path& path) {
  const auto rows = static_cast<Eigen::Index>(table.frames.size());
  const auto kps = static_cast<Eigen::Index>(table.keypoints.size());
  if (table.coords.rows() != rows || table.coords.cols() != 2 * kps) {
    throw ShapeMismatch("write_keypoint_csv: coordinate matrix does not match frames/keypoints");
  }
  const bool has_lik = table.likelihood.size() > 0;
  if (has_lik && (table.likelihood.rows() != rows || table.likelihood.cols() != kps)) {
    throw ShapeMismatch("write_keypoint_csv: likelihood matrix must be T x K");
  }
  const bool has_var = table.postvar.size() > 0;
  if (has_var && (table.postvar.rows() != rows || table.postvar.cols() != 2 * kps)) {
    throw ShapeMismatch("write_keypoint_csv: postvar matrix must be T x 2K");
  }
  CsvDocument doc;
  if (!table.videos.empty()) doc.header.push_back("video");
  doc.header.push_back("frame");
  for (const auto& kp : table.keypoints) {
    doc.header.push_back(kp + "_x");
    doc.header.push_back(kp + "_y");
    if (has_lik) doc.header.push_back(kp + "_likelihood");
    if (has_var) {
      doc.header.push_back(kp + "_postvar_x");
      doc.header.push_back(kp + "_postvar_y");
    }
  }
  if (!table.provenance.empty()) doc.header.push_back("provenance");
  for (Eigen::Index r = 0; r < rows; ++r) {
    std::vector<std::string> cells;
    if (!table.videos.empty()) cells.push_back(table.videos[static_cast<std::size_t>(r)]);
    cells.push_back(std::to_string(table.frames[static_cast<std::size_t>(r)]));
    for (Eigen::Index k = 0; k < kps; ++k) {
      cells.push_back(format_double(table.coords(r, 2 * k)));
      cells.push_back(format_double(table.coords(r, 2 * k + 1)));
      if (has_lik) cells.push_back(format_double(table.likelihood(r, k)));
      if (has_var) {
        cells.push_back(format_double(table.postvar(r, 2 * k)));
        cells.push_back(format_double(table.postvar(r, 2 * k + 1)));
      }
    }
    if (!table.provenance.empty()) cells.push_back(table.provenance[static_cast<std::size_t>(r)]);
    doc.rows.push_back(std::move(cells));
  }
  write_csv(doc, path);
}

std::vector<EnsembleSeries> load_prediction_dir(const fs::path& root, std::vector<std::string> views) {
  if (!fs::is_directory(root)) throw DataError("prediction directory " + root.string() + " not found");
  std::vector<fs::path> model_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) model_dirs.push_back(entry.path());
  }
  std::sort(model_dirs.begin(), model_dirs.end());
  if (model_dirs.empty()) throw DataError(root.string() + ": no model directories");

  if (views.empty()) {
    for (const auto& entry : fs::directory_iterator(model_dirs.front())) {
      if (entry.is_regular_file() && entry.path().extension() == ".csv") {
        views.push_back(entry.path().stem().string());
      }
    }
    std::sort(views.begin(), views.end());
  }
  if (views.size() < 2) throw DataError(root.string() + ": need at least two views");

  // tables[m][v]
  std::vector<std::vector<KeypointTable>> tables(model_dirs.size());
  for (std::size_t m = 0; m < model_dirs.size(); ++m) {
    for (const auto& view : views) {
      const fs::path p = model_dirs[m] / (view + ".csv");
      if (!fs::exists(p)) throw DataError("missing prediction file " + p.string());
      tables[m].push_back(read_keypoint_csv(p));
    }
  }

  const KeypointTable& ref = tables.front().front();
  const auto rows = static_cast<Eigen::Index>(ref.frames.size());
  std::vector<EnsembleSeries> out;
  for (std::size_t k = 0; k < ref.keypoints.size(); ++k) {
    EnsembleSeries s;
    s.keypoint = ref.keypoints[k];
    s.view_names = views;
    s.frame_index = ref.frames;
    for (std::size_t m = 0; m < model_dirs.size(); ++m) {
      Eigen::MatrixXd member(rows, static_cast<Eigen::Index>(2 * views.size()));
      for (std::size_t v = 0; v < views.size(); ++v) {
        const KeypointTable& tab = tables[m][v];
        if (tab.frames != ref.frames) {
          throw DataError("frame ids of " + (model_dirs[m] / (views[v] + ".csv")).string() +
                          " do not match the first prediction file");
        }
        const auto it = std::find(tab.keypoints.begin(), tab.keypoints.end(), s.keypoint);
        if (it == tab.keypoints.end()) {
          throw DataError((model_dirs[m] / (views[v] + ".csv")).string() + ": keypoint '" +
                          s.keypoint + "' missing");
        }
        const auto kc = static_cast<Eigen::Index>(it - tab.keypoints.begin());
        member.col(static_cast<Eigen::Index>(2 * v)) = tab.coords.col(2 * kc);
        member.col(static_cast<Eigen::Index>(2 * v + 1)) = tab.coords.col(2 * kc + 1);
      }
      s.members.push_back(std::move(member));
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace mveks
