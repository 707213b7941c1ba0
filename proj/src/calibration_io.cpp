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

#include "mveks/calibration_io.hpp"

#include <fstream>

#include "mveks/errors.hpp"

namespace mveks {

using nlohmann::json;

namespace {

double number_field(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key) || !obj.at(key).is_number()) {
    throw ConfigError(where + ": missing numeric field '" + key + "'");
  }
  return obj.at(key).get<double>();
}

std::vector<double> number_array(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key) || !obj.at(key).is_array()) {
    throw ConfigError(where + ": missing array field '" + key + "'");
  }
  std::vector<double> out;
  for (const auto& v : obj.at(key)) {
    if (!v.is_number()) throw ConfigError(where + ": non-numeric entry in '" + key + "'");
    out.push_back(v.get<double>());
  }
  return out;
}

CameraModel camera_from_json(const json& entry, std::size_t index) {
  std::string where = "camera " + std::to_string(index);
  if (!entry.is_object()) throw ConfigError(where + ": expected an object");
  CameraModel cam;
  if (!entry.contains("name") || !entry.at("name").is_string()) {
    throw ConfigError(where + ": missing string field 'name'");
  }
  cam.name = entry.at("name").get<std::string>();
  where = "camera '" + cam.name + "'";

  const std::string format = entry.value("rotation_format", std::string("matrix"));
  const std::vector<double> rot = number_array(entry, "rotation", where);
  if (format == "matrix") {
    if (rot.size() != 9) throw ConfigError(where + ": matrix rotation needs 9 numbers");
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) cam.rotation(r, c) = rot[static_cast<std::size_t>(3 * r + c)];
  } else if (format == "rodrigues") {
    if (rot.size() != 3) throw ConfigError(where + ": rodrigues rotation needs 3 numbers");
    cam.rotation = rodrigues_to_matrix(Eigen::Vector3d(rot[0], rot[1], rot[2]));
  } else {
    throw ConfigError(where + ": unknown rotation_format '" + format + "'");
  }

  const std::vector<double> t = number_array(entry, "translation", where);
  if (t.size() != 3) throw ConfigError(where + ": translation needs 3 numbers");
  cam.translation = Eigen::Vector3d(t[0], t[1], t[2]);

  if (!entry.contains("intrinsics") || !entry.at("intrinsics").is_object()) {
    throw ConfigError(where + ": missing 'intrinsics' object");
  }
  const json& intr = entry.at("intrinsics");
  cam.fx = number_field(intr, "fx", where);
  cam.fy = number_field(intr, "fy", where);
  cam.cx = number_field(intr, "cx", where);
  cam.cy = number_field(intr, "cy", where);

  if (entry.contains("distortion")) {
    const json& dist = entry.at("distortion");
    if (!dist.is_object()) throw ConfigError(where + ": 'distortion' must be an object");
    for (const auto& [key, value] : dist.items()) {
      if (key != "k1" && key != "k2" && key != "p1" && key != "p2") {
        throw ConfigError(where + ": unsupported distortion parameter '" + key + "'");
      }
      if (!value.is_number()) throw ConfigError(where + ": distortion '" + key + "' not numeric");
    }
    cam.distortion.k1 = dist.value("k1", 0.0);
    cam.distortion.k2 = dist.value("k2", 0.0);
    cam.distortion.p1 = dist.value("p1", 0.0);
    cam.distortion.p2 = dist.value("p2", 0.0);
  }
  cam.validate();
  return cam;
}

}  // namespace

Rig rig_from_json(const json& doc) {
  if (!doc.is_object() || !doc.contains("cameras") || !doc.at("cameras").is_array()) {
    throw ConfigError("calibration: expected an object with a 'cameras' array");
  }
  std::vector<CameraModel> cams;
  std::size_t i = 0;
  for (const auto& entry : doc.at("cameras")) cams.push_back(camera_from_json(entry, i++));
  return Rig(std::move(cams));
}

json rig_to_json(const Rig& rig) {
  json cams = json::array();
  for (const auto& cam : rig.cameras()) {
    json rot = json::array();
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) rot.push_back(cam.rotation(r, c));
    cams.push_back({
        {"name", cam.name},
        {"rotation_format", "matrix"},
        {"rotation", rot},
        {"translation", {cam.translation.x(), cam.translation.y(), cam.translation.z()}},
        {"intrinsics", {{"fx", cam.fx}, {"fy", cam.fy}, {"cx", cam.cx}, {"cy", cam.cy}}},
        {"distortion",
         {{"k1", cam.distortion.k1},
          {"k2", cam.distortion.k2},
          {"p1", cam.distortion.p1},
          {"p2", cam.distortion.p2}}},
    });
  }
  return json{{"cameras", cams}};
}

Rig load_calibration(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open calibration file " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::parse_error& e) {
    throw ConfigError("calibration file " + path.string() + ": " + e.what());
  }
  return rig_from_json(doc);
}

void save_calibration(const Rig& rig, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write calibration file " + path.string());
  out << rig_to_json(rig).dump(2) << "\n";
}

}  // namespace mveks
