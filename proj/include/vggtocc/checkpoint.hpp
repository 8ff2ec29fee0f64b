// Copyright 2026 The vggtocc Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Parameter checkpoints: "VOCP", u16 version, then named tensors until end
// of file. Each entry is u16 name length, name bytes, u8 rank, u32 extents,
// f32 little-endian payload.

#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "vggtocc/binio.hpp"
#include "vggtocc/params.hpp"

namespace vggtocc::checkpoint {

inline constexpr std::uint16_t kVersion = 1;

// Checkpoint contents do not fit the model they are loaded into.
class MismatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Entries = std::vector<std::pair<std::string, Tensor>>;

std::vector<char> encode(const diff::ParamSet& params);
Entries decode(const std::vector<char>& bytes, const std::string& what = "checkpoint");

void save(const diff::ParamSet& params, const std::filesystem::path& path);
Entries read(const std::filesystem::path& path);

// Overwrites every parameter from `path`. Names and shapes must match
// exactly; throws MismatchError otherwise and leaves `params` untouched.
void load_into(diff::ParamSet& params, const std::filesystem::path& path);

// Rounds every parameter to f32, the precision stored on disk.
void round_to_storage(diff::ParamSet& params);

}  // namespace vggtocc::checkpoint
