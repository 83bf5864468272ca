// Copyright 2026 The StaRFM Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "starfm/models.hpp"
#include "starfm/volume.hpp"

namespace starfm {

using Json = nlohmann::json;
namespace fs = std::filesystem;

// Sorted keys, no whitespace, floats as %.17g, integers verbatim. Non-finite
// numbers are rejected.
std::string canonical_json(const Json& j);
std::string format_double(double v);

Json read_json_file(const fs::path& path);
std::string read_file(const fs::path& path);
// Writes to a sibling temp file then renames over `path`.
void write_file_atomic(const fs::path& path, std::string_view bytes);

std::string sha256_hex(std::string_view bytes);

// Minimal CSV: comma separated, no quoting (fields never contain commas).
using CsvTable = std::vector<std::vector<std::string>>;
std::string to_csv(const CsvTable& rows);
CsvTable parse_csv(std::string_view text);

enum class VolumeDtype { float32, uint8 };
std::string_view to_string(VolumeDtype d);

struct VolumeHeader {
  Dims dims;
  Spacing spacing;
  VolumeDtype dtype = VolumeDtype::float32;
};

Json volume_header_json(const VolumeHeader& h);
// Validates every field; the error message names the offending one.
VolumeHeader parse_volume_header(const Json& j);

// `stem` + ".json" (sidecar) and `stem` + ".raw" (payload). Returns the two
// file names relative to the stem's directory.
std::vector<std::string> write_volume(const fs::path& stem, const VolumeGrid& v);
std::vector<std::string> write_volume(const fs::path& stem, const MaskVolume& v);
VolumeGrid read_volume(const fs::path& stem);
MaskVolume read_mask(const fs::path& stem);

// Checkpoint layout, little-endian:
//   "SRFMCKPT" | u32 version | u32 kind | u64 input | u64 hidden | u64 classes
//   | f64 temperature | u64 P | P × f64 | u32 S | S × (u32 len, name, u64 offset, u64 length)
inline constexpr std::uint32_t kCheckpointVersion = 1;
std::string checkpoint_bytes(const Model& model);
Model checkpoint_model(std::string_view bytes);
void save_checkpoint(const fs::path& path, const Model& model);
Model load_checkpoint(const fs::path& path);

}  // namespace starfm
