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

// Command implementations behind the vggtocc executable: configuration files,
// on-disk datasets, run artifacts and gate heatmaps.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vggtocc/flops.hpp"
#include "vggtocc/train.hpp"

namespace vggtocc::app {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kUsage = 1, kIo = 2, kNumeric = 3 };

// Bad arguments, configuration or incompatible inputs.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A numerical check failed.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- configuration -------------------------------------------------------

// Keys mirror RunConfig. Missing keys keep their defaults; unknown keys and
// ill-typed values raise UsageError. Head grid, bounds, class count and
// feature shape are derived from "data" and are not configurable under
// "head".
train::RunConfig config_from_json(const std::string& text);
std::string config_to_json(const train::RunConfig& cfg);
train::RunConfig load_config(const fs::path& path);

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::optional<bool> stage1, stage2, stage3;
  std::optional<std::string> fusion;
};
// Throws UsageError for an unknown fusion name.
void apply(train::RunConfig& cfg, const Overrides& o);

// "on" / "off".
bool parse_switch(const std::string& s);

// ---- datasets --------------------------------------------------------------

std::uint32_t crc32(const std::vector<char>& bytes);

struct ManifestEntry {
  std::string path;  // relative to the dataset directory
  std::uint64_t bytes = 0;
  std::uint32_t crc32 = 0;
};

struct Manifest {
  train::RunConfig config;
  std::size_t n_train = 0;
  std::size_t n_val = 0;
  std::vector<ManifestEntry> files;
};

std::string cameras_to_json(const std::vector<geometry::CameraModel>& cams);
std::vector<geometry::CameraModel> cameras_from_json(const std::string& text);

// Writes cfg.n_train training and cfg.n_val validation scenes. Per scene: a
// scene JSON, a cameras JSON, three u8 label grids and one f32 feature map
// per camera and level, plus manifest.json listing every file with its size
// and CRC-32.
Manifest write_dataset(const train::RunConfig& cfg, const fs::path& dir);

// Parses manifest.json and verifies every listed file.
Manifest read_manifest(const fs::path& dir);
std::vector<synth::Sample> read_split(const fs::path& dir, const Manifest& m, synth::Split split);

// Throws UsageError unless every sample fits the configured head.
void check_compatible(const train::RunConfig& cfg, const std::vector<synth::Sample>& data);

// ---- gate heatmaps ---------------------------------------------------------

// [X, Y, Z, C] gates to the [X, Y] mean over height and channels.
Tensor gate_map(const Tensor& gate);
// Cool (0) to warm (1) ramp through light grey at 0.5. Inputs are clamped.
std::array<std::uint8_t, 3> colormap(double g);
// Binary P6 image, width X and height Y, +y pointing up.
std::vector<char> encode_ppm(const Tensor& map);

// ---- commands --------------------------------------------------------------

struct EvalArgs {
  fs::path checkpoint;
  fs::path data;
  synth::Split split = synth::Split::kVal;
  double corrupt_degrees = 0.0;
  std::uint64_t corrupt_seed = 0;
  std::optional<fs::path> out;  // eval.json destination directory
};

struct FlopsArgs {
  std::optional<flops::FusionDims> dims;
  bool json = false;
  bool parameters = false;
};

struct GatesArgs {
  fs::path checkpoint;
  fs::path data;
  synth::Split split = synth::Split::kVal;
  std::size_t index = 0;
  fs::path out;
};

int cmd_gen(const train::RunConfig& cfg, const fs::path& out, std::ostream& os);
// Writes config.json, checkpoint.vocp and train_log.jsonl into `out`.
int cmd_train(const train::RunConfig& cfg, const fs::path& data, const fs::path& out,
              std::ostream& os);
int cmd_eval(const train::RunConfig& cfg, const EvalArgs& args, std::ostream& os);
int cmd_gradcheck(std::ostream& os);
int cmd_flops(const train::RunConfig& cfg, const FlopsArgs& args, std::ostream& os);
int cmd_gates(const train::RunConfig& cfg, const GatesArgs& args, std::ostream& os);

// Parses "coarse_voxels,fine_voxels,coarse_channels,fine_channels,gate_hidden".
flops::FusionDims parse_dims(const std::string& text);

// Runs `fn`, logging any exception and mapping it to an exit code.
int guarded(const std::function<int()>& fn);

// Applies VGGTOCC_LOG (error, info, debug); throws UsageError otherwise.
void configure_logging(const char* level);

}  // namespace vggtocc::app
