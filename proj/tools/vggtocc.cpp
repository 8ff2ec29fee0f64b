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

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "vggtocc/app.hpp"

namespace app = vggtocc::app;
namespace fs = std::filesystem;
using vggtocc::train::RunConfig;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::string stage1, stage2, stage3, fusion;

  app::Overrides overrides() const {
    app::Overrides o;
    o.seed = seed;
    o.threads = threads;
    if (!stage1.empty()) o.stage1 = app::parse_switch(stage1);
    if (!stage2.empty()) o.stage2 = app::parse_switch(stage2);
    if (!stage3.empty()) o.stage3 = app::parse_switch(stage3);
    if (!fusion.empty()) o.fusion = fusion;
    return o;
  }

  // --config wins, then `fallback` if it exists, then the defaults.
  RunConfig resolve(const std::optional<fs::path>& fallback = std::nullopt) const {
    RunConfig cfg;
    if (!config.empty()) {
      cfg = app::load_config(config);
    } else if (fallback && fs::exists(*fallback)) {
      cfg = app::load_config(*fallback);
    }
    app::apply(cfg, overrides());
    return cfg;
  }
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON run configuration");
  cmd->add_option("--seed", c.seed, "Run seed");
  cmd->add_option("--threads", c.threads, "Worker threads (results do not depend on it)");
  cmd->add_option("--stage1", c.stage1, "3D offsets: on|off");
  cmd->add_option("--stage2", c.stage2, "Observability bias: on|off");
  cmd->add_option("--stage3", c.stage3, "View-quality gate: on|off");
  cmd->add_option("--fusion", c.fusion,
                  "none|direct_add|scalar_gate|channel_gate|channel_gate_dw");
}

vggtocc::synth::Split parse_split(const std::string& s) {
  if (s == "train") return vggtocc::synth::Split::kTrain;
  if (s == "val") return vggtocc::synth::Split::kVal;
  throw app::UsageError("--split must be train or val");
}

}  // namespace

int main(int argc, char** argv) {
  const int log_status = app::guarded([] {
    app::configure_logging(std::getenv("VGGTOCC_LOG"));
    return 0;
  });
  if (log_status != 0) return log_status;

  CLI::App cli{"vggtocc: occupancy head with projection-aware cross-attention"};
  cli.require_subcommand(1);
  Common common;
  std::string out, data, checkpoint, split = "val", dims;
  double corrupt = 0.0;
  std::uint64_t corrupt_seed = 0;
  std::size_t scene = 0;
  bool json = false, params = false;

  auto* gen = cli.add_subcommand("gen", "Generate a synthetic dataset");
  add_common(gen, common);
  gen->add_option("--out", out, "Dataset directory")->required();

  auto* train = cli.add_subcommand("train", "Train the head on a dataset");
  add_common(train, common);
  train->add_option("--data", data, "Dataset directory")->required();
  train->add_option("--out", out, "Run directory")->required();

  auto* eval = cli.add_subcommand("eval", "Evaluate a checkpoint");
  add_common(eval, common);
  eval->add_option("--checkpoint", checkpoint, "VOCP checkpoint")->required();
  eval->add_option("--data", data, "Dataset directory")->required();
  eval->add_option("--split", split, "train|val");
  eval->add_option("--corrupt-deg", corrupt, "Rotate every camera by this angle at inference");
  eval->add_option("--corrupt-seed", corrupt_seed, "Seed of the rotation axes");
  eval->add_option("--out", out, "Directory for eval.json");

  auto* grad = cli.add_subcommand("gradcheck", "Finite-difference gradient suite");

  auto* fl = cli.add_subcommand("flops", "Analytical FLOP report of the fusion variants");
  add_common(fl, common);
  fl->add_option("--dims", dims,
                 "coarse_voxels,fine_voxels,coarse_channels,fine_channels,gate_hidden");
  fl->add_flag("--json", json, "Structured output");
  fl->add_flag("--params", params, "Also print the parameter count of the configured head");

  auto* gates = cli.add_subcommand("gates", "Export fusion gate heatmaps");
  add_common(gates, common);
  gates->add_option("--checkpoint", checkpoint, "VOCP checkpoint")->required();
  gates->add_option("--data", data, "Dataset directory")->required();
  gates->add_option("--split", split, "train|val");
  gates->add_option("--scene", scene, "Scene index");
  gates->add_option("--out", out, "Output directory")->required();

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = cli.exit(e);
    return code == 0 ? app::kOk : app::kUsage;
  }

  auto beside = [&](const std::string& ckpt) {
    return std::optional<fs::path>(fs::path(ckpt).parent_path() / "config.json");
  };

  return app::guarded([&]() -> int {
    if (*gen) return app::cmd_gen(common.resolve(), out, std::cout);
    if (*train) {
      std::optional<RunConfig> cfg;
      if (common.config.empty()) {
        cfg = app::read_manifest(data).config;
        app::apply(*cfg, common.overrides());
      } else {
        cfg = common.resolve();
      }
      return app::cmd_train(*cfg, data, out, std::cout);
    }
    if (*eval) {
      app::EvalArgs a{checkpoint, data, parse_split(split), corrupt, corrupt_seed, std::nullopt};
      if (!out.empty()) a.out = fs::path(out);
      return app::cmd_eval(common.resolve(beside(checkpoint)), a, std::cout);
    }
    if (*grad) return app::cmd_gradcheck(std::cout);
    if (*fl) {
      app::FlopsArgs a;
      if (!dims.empty()) a.dims = app::parse_dims(dims);
      a.json = json;
      a.parameters = params;
      return app::cmd_flops(common.resolve(), a, std::cout);
    }
    if (*gates) {
      app::GatesArgs a{checkpoint, data, parse_split(split), scene, out};
      return app::cmd_gates(common.resolve(beside(checkpoint)), a, std::cout);
    }
    return app::kUsage;
  });
}
