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

#include "json.hpp"
#include "mveks/camera.hpp"

namespace mveks {

// Calibration documents are JSON:
//
// {
//   "cameras": [
//     {
//       "name": "cam0",
//       "rotation_format": "matrix",          // or "rodrigues"; default "matrix"
//       "rotation": [r00, r01, ..., r22],     // 9 numbers row-major, or 3 for rodrigues
//       "translation": [tx, ty, tz],
//       "intrinsics": {"fx": 800, "fy": 800, "cx": 320, "cy": 240},
//       "distortion": {"k1": 0, "k2": 0, "p1": 0, "p2": 0}
//     }, ...
//   ]
// }
//
// Unknown distortion coefficients (k3, s1, ...) are rejected.

Rig rig_from_json(const nlohmann::json& doc);
nlohmann::json rig_to_json(const Rig& rig);

Rig load_calibration(const std::filesystem::path& path);
void save_calibration(const Rig& rig, const std::filesystem::path& path);

}  // namespace mveks
