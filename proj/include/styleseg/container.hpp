// Copyright 2026 The StyleSeg Authors. All Rights Reserved.
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
#include <utility>
#include <vector>

#include <json.hpp>

#include "styleseg/tensor.hpp"

namespace styleseg {

using NamedTensor = std::pair<std::string, Tensor>;

// Parameter container shared by checkpoints and bank exchange files:
//
//   <dir>/manifest.json   {"format": "styleseg-params", "version": 1,
//                          "kind": ..., "header": {...},
//                          "params": [{"name", "shape", "offset", "count"}]}
//   <dir>/params.f64      little-endian float64, params back to back
//
// Offsets are in bytes. Values round-trip bit-exactly.
void write_param_container(const std::filesystem::path& dir, const std::string& kind,
                           const nlohmann::ordered_json& header,
                           const std::vector<NamedTensor>& params);

struct ParamContainer {
  std::string kind;
  nlohmann::ordered_json header;
  std::vector<NamedTensor> params;
};
ParamContainer read_param_container(const std::filesystem::path& dir);

// Little-endian helpers for the raw blobs.
void write_f64_le(std::ostream& os, std::span<const double> values);
void read_f64_le(std::istream& is, std::span<double> values);
void write_f32_le(std::ostream& os, std::span<const float> values);
void read_f32_le(std::istream& is, std::span<float> values);

// Writes via a temp file + rename so readers never see partial files.
void write_text_file(const std::filesystem::path& path, const std::string& content);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace styleseg
