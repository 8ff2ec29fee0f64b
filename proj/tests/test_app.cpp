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

#include <cmath>
#include <sstream>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "vggtocc/app.hpp"
#include "vggtocc/binio.hpp"
#include "vggtocc/checkpoint.hpp"
#include "vggtocc/vogd.hpp"

using namespace vggtocc;
using namespace vggtocc::app;

namespace {

const char* kSmall = R"({
  "n_train": 2, "n_val": 1,
  "data": {"grid": {"dims": [8, 8, 4], "n_classes": 4},
           "rig": {"width": 16, "height_px": 12, "levels": [[12, 16], [6, 8]], "feature_dim": 4}},
  "head": {"scales": [{"channels": 8}, {"channels": 8}, {"channels": 4}],
           "pada": {"n_heads": 2, "n_points": 2}, "gate_hidden": 4},
  "optim": {"steps": 3, "warmup": 1, "lr": 1e-3}
})";

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() /
           ("vggtocc_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::vector<char> slurp(const fs::path& p) { return binio::read_file(p); }

bool same_tree(const fs::path& a, const fs::path& b) {
  std::vector<fs::path> fa, fb;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) fa.push_back(fs::relative(e.path(), a));
  for (const auto& e : fs::recursive_directory_iterator(b))
    if (e.is_regular_file()) fb.push_back(fs::relative(e.path(), b));
  std::sort(fa.begin(), fa.end());
  std::sort(fb.begin(), fb.end());
  if (fa != fb) return false;
  for (const auto& f : fa)
    if (slurp(a / f) != slurp(b / f)) return false;
  return true;
}

}  // namespace

TEST_CASE("config JSON") {
  SUBCASE("defaults round trip") {
    const train::RunConfig d;
    CHECK(config_to_json(config_from_json(config_to_json(d))) == config_to_json(d));
    CHECK(config_to_json(config_from_json("{}")) == config_to_json(d));
  }
  SUBCASE("partial file keeps other defaults") {
    const auto c = config_from_json(kSmall);
    CHECK(c.data.grid.dims.x == 8);
    CHECK(c.head.scales[2].channels == 4);
    CHECK(c.optim.clip_norm == 35.0);
    CHECK(c.optim.weight_decay == 0.01);
    CHECK(c.loss.label_smoothing == 0.1);
    CHECK(config_to_json(config_from_json(config_to_json(c))) == config_to_json(c));
  }
  SUBCASE("unknown keys are rejected at any depth") {
    CHECK_THROWS_AS(config_from_json(R"({"sed": 1})"), UsageError);
    CHECK_THROWS_AS(config_from_json(R"({"optim": {"learning_rate": 1}})"), UsageError);
    CHECK_THROWS_AS(config_from_json(R"({"head": {"scales": [{}, {}, {"chan": 1}]}})"),
                    UsageError);
  }
  SUBCASE("bad values") {
    CHECK_THROWS_AS(config_from_json(R"({"optim": {"lr": "fast"}})"), UsageError);
    CHECK_THROWS_AS(config_from_json(R"({"optim": {"lr": -1}})"), UsageError);
    CHECK_THROWS_AS(config_from_json(R"({"head": {"fusion": "magic"}})"), UsageError);
    CHECK_THROWS_AS(config_from_json(R"({"head": {"scales": [{}]}})"), UsageError);
    CHECK_THROWS_AS(config_from_json("not json"), UsageError);
  }
  SUBCASE("stage toggles are independent") {
    const auto c = config_from_json(R"({"stages": {"stage2": false}})");
    CHECK(c.stages.stage1);
    CHECK_FALSE(c.stages.stage2);
    CHECK(c.stages.stage3);
  }
}

TEST_CASE("overrides") {
  train::RunConfig c;
  Overrides o;
  o.seed = 9;
  o.threads = 2;
  o.stage3 = false;
  o.fusion = "scalar_gate";
  apply(c, o);
  CHECK(c.seed == 9);
  CHECK(c.threads == 2);
  CHECK(c.stages.stage1);
  CHECK_FALSE(c.stages.stage3);
  CHECK(c.head.fusion == decoder::FusionVariant::kScalarGate);
  o.fusion = "nope";
  CHECK_THROWS_AS(apply(c, o), UsageError);
  CHECK(parse_switch("on"));
  CHECK_FALSE(parse_switch("off"));
  CHECK_THROWS_AS(parse_switch("yes"), UsageError);
}

TEST_CASE("crc32 check value") {
  const std::string s = "123456789";
  CHECK(crc32({s.begin(), s.end()}) == 0xCBF43926u);
  CHECK(crc32({}) == 0u);
}

TEST_CASE("camera JSON round trip is exact") {
  const auto cams = synth::make_rig(synth::RigSpec{});
  const auto back = cameras_from_json(cameras_to_json(cams));
  REQUIRE(back.size() == cams.size());
  for (std::size_t i = 0; i < cams.size(); ++i) {
    CHECK(back[i].rotation == cams[i].rotation);
    CHECK(back[i].translation == cams[i].translation);
    CHECK(back[i].fx == cams[i].fx);
    CHECK(back[i].width == cams[i].width);
  }
  CHECK_THROWS_AS(cameras_from_json("[{}]"), binio::IoError);
}

TEST_CASE("datasets on disk") {
  const auto cfg = config_from_json(kSmall);
  TempDir tmp("data");
  const auto m = write_dataset(cfg, tmp.path / "a");
  write_dataset(cfg, tmp.path / "b");

  SUBCASE("byte-identical across runs") { CHECK(same_tree(tmp.path / "a", tmp.path / "b")); }
  SUBCASE("manifest lists every file with its checksum") {
    std::size_t n_files = 0;
    for (const auto& e : fs::recursive_directory_iterator(tmp.path / "a"))
      if (e.is_regular_file()) ++n_files;
    CHECK(m.files.size() + 1 == n_files);
    for (const auto& e : m.files) CHECK(crc32(slurp(tmp.path / "a" / e.path)) == e.crc32);
    const auto r = read_manifest(tmp.path / "a");
    CHECK(r.n_train == 2);
    CHECK(r.n_val == 1);
    CHECK(config_to_json(r.config) == config_to_json(cfg));
  }
  SUBCASE("reading gives back the generated samples") {
    const auto rm = read_manifest(tmp.path / "a");
    const auto disk = read_split(tmp.path / "a", rm, synth::Split::kTrain);
    const auto mem = synth::make_dataset(cfg.dataset_spec(2), synth::Split::kTrain);
    REQUIRE(disk.size() == mem.size());
    for (std::size_t i = 0; i < mem.size(); ++i) {
      for (std::size_t k = 0; k < 3; ++k) CHECK(disk[i].labels[k].data == mem[i].labels[k].data);
      for (std::size_t c = 0; c < mem[i].features.size(); ++c)
        for (std::size_t l = 0; l < mem[i].features[c].size(); ++l)
          CHECK(disk[i].features[c][l].vec() == mem[i].features[c][l].vec());
      CHECK(synth::scene_to_json(disk[i].scene) == synth::scene_to_json(mem[i].scene));
    }
    CHECK_NOTHROW(check_compatible(cfg, disk));
    auto other = cfg;
    other.data.rig.feature_dim = 8;
    CHECK_THROWS_AS(check_compatible(other, disk), UsageError);
  }
  SUBCASE("a modified file is detected") {
    const auto p = tmp.path / "a" / m.files.back().path;
    auto bytes = slurp(p);
    bytes.back() ^= 1;
    binio::write_file(p, bytes);
    CHECK_THROWS_AS(read_manifest(tmp.path / "a"), binio::IoError);
  }
  SUBCASE("zero scenes writes only the manifest") {
    auto empty = cfg;
    empty.n_train = 0;
    empty.n_val = 0;
    write_dataset(empty, tmp.path / "e");
    std::size_t n = 0;
    for (const auto& e : fs::recursive_directory_iterator(tmp.path / "e"))
      if (e.is_regular_file()) ++n;
    CHECK(n == 1);
    CHECK(fs::exists(tmp.path / "e" / "manifest.json"));
  }
}

TEST_CASE("gate heatmaps") {
  SUBCASE("uniform 0.5 gives a uniform mid-colormap image") {
    Tensor g({3, 5, 2, 4}, 0.5);
    const Tensor map = gate_map(g);
    CHECK(map.shape() == Shape{3, 5});
    const auto ppm = encode_ppm(map);
    const std::string header = "P6\n3 5\n255\n";
    REQUIRE(ppm.size() == header.size() + 3 * 15);
    CHECK(std::string(ppm.begin(), ppm.begin() + header.size()) == header);
    const auto mid = colormap(0.5);
    for (std::size_t i = header.size(); i < ppm.size(); i += 3) {
      CHECK(static_cast<std::uint8_t>(ppm[i]) == mid[0]);
      CHECK(static_cast<std::uint8_t>(ppm[i + 1]) == mid[1]);
      CHECK(static_cast<std::uint8_t>(ppm[i + 2]) == mid[2]);
    }
  }
  SUBCASE("map is the mean over height and channels") {
    Tensor g({2, 1, 2, 2});
    for (std::size_t i = 0; i < 8; ++i) g[i] = static_cast<double>(i);
    const Tensor map = gate_map(g);
    CHECK(map[0] == doctest::Approx(1.5));
    CHECK(map[1] == doctest::Approx(5.5));
  }
  SUBCASE("colormap runs cool to warm and clamps") {
    CHECK(colormap(0.0)[2] > colormap(0.0)[0]);
    CHECK(colormap(1.0)[0] > colormap(1.0)[2]);
    CHECK(colormap(-3.0) == colormap(0.0));
    CHECK(colormap(7.0) == colormap(1.0));
    CHECK(colormap(std::nan("")) == colormap(0.0));
  }
  SUBCASE("+y is the top row") {
    Tensor map({1, 2});
    map[0] = 0.0;  // y = 0
    map[1] = 1.0;  // y = 1
    const auto ppm = encode_ppm(map);
    const std::size_t h = std::string("P6\n1 2\n255\n").size();
    CHECK(static_cast<std::uint8_t>(ppm[h]) == colormap(1.0)[0]);
    CHECK(static_cast<std::uint8_t>(ppm[h + 3]) == colormap(0.0)[0]);
  }
}

TEST_CASE("commands") {
  auto cfg = config_from_json(kSmall);
  TempDir tmp("cmd");
  std::ostringstream os;
  REQUIRE(cmd_gen(cfg, tmp.path / "data", os) == kOk);

  SUBCASE("train twice gives identical artifacts") {
    REQUIRE(cmd_train(cfg, tmp.path / "data", tmp.path / "r1", os) == kOk);
    REQUIRE(cmd_train(cfg, tmp.path / "data", tmp.path / "r2", os) == kOk);
    CHECK(same_tree(tmp.path / "r1", tmp.path / "r2"));
    std::istringstream log(std::string(slurp(tmp.path / "r1" / "train_log.jsonl").data(),
                                       slurp(tmp.path / "r1" / "train_log.jsonl").size()));
    std::string line;
    std::size_t lines = 0;
    while (std::getline(log, line)) {
      const auto j = nlohmann::json::parse(line);
      CHECK(j.at("step").get<std::size_t>() == lines);
      CHECK(j.contains("lovasz"));
      ++lines;
    }
    CHECK(lines == 3);
    EvalArgs a{tmp.path / "r1" / "checkpoint.vocp", tmp.path / "data"};
    a.out = tmp.path / "e1";
    CHECK(cmd_eval(cfg, a, os) == kOk);
    a.out = tmp.path / "e2";
    CHECK(cmd_eval(cfg, a, os) == kOk);
    CHECK(slurp(tmp.path / "e1" / "eval.json") == slurp(tmp.path / "e2" / "eval.json"));
    CHECK(os.str().find("baseline majority") != std::string::npos);
  }
  SUBCASE("zero steps stores the initialization") {
    cfg.optim.steps = 0;
    REQUIRE(cmd_train(cfg, tmp.path / "data", tmp.path / "r0", os) == kOk);
    auto init = train::initial_params(cfg);
    checkpoint::round_to_storage(init);
    CHECK(checkpoint::encode(init) == slurp(tmp.path / "r0" / "checkpoint.vocp"));
  }
  SUBCASE("shape-mismatched checkpoint is a descriptive nonzero exit") {
    REQUIRE(cmd_train(cfg, tmp.path / "data", tmp.path / "r1", os) == kOk);
    auto wide = cfg;
    wide.head.scales[0].channels = 16;
    EvalArgs a{tmp.path / "r1" / "checkpoint.vocp", tmp.path / "data"};
    CHECK_THROWS_AS(cmd_eval(wide, a, os), checkpoint::MismatchError);
    CHECK(guarded([&] { return cmd_eval(wide, a, os); }) == kIo);
  }
  SUBCASE("divergence maps to the numerical exit code") {
    cfg.loss.class_weights = {std::nan(""), 1.0, 1.0, 1.0};
    CHECK(guarded([&] { return cmd_train(cfg, tmp.path / "data", tmp.path / "rn", os); }) ==
          kNumeric);
  }
  SUBCASE("gates export matches the coarse grid") {
    REQUIRE(cmd_train(cfg, tmp.path / "data", tmp.path / "r1", os) == kOk);
    GatesArgs a{tmp.path / "r1" / "checkpoint.vocp", tmp.path / "data", synth::Split::kVal, 0,
                tmp.path / "g"};
    REQUIRE(cmd_gates(cfg, a, os) == kOk);
    const auto head = cfg.head_config();
    for (std::size_t t = 0; t < 2; ++t) {
      const std::string stem = "gate_t" + std::to_string(t);
      const auto raw = slurp(tmp.path / "g" / (stem + ".vogd"));
      const auto arr = vogd::decode(raw);
      CHECK(arr.extents == std::vector<std::uint32_t>{std::uint32_t(head.scales[t].dims.x),
                                                      std::uint32_t(head.scales[t].dims.y)});
      CHECK(vogd::encode(arr) == raw);
      const std::string hdr = "P6\n" + std::to_string(head.scales[t].dims.x) + " " +
                              std::to_string(head.scales[t].dims.y) + "\n";
      const auto ppm = slurp(tmp.path / "g" / (stem + ".ppm"));
      CHECK(std::string(ppm.begin(), ppm.begin() + hdr.size()) == hdr);
    }
    cfg.head.fusion = decoder::FusionVariant::kDirectAdd;
    CHECK_THROWS_AS(cmd_gates(cfg, a, os), UsageError);
  }
  SUBCASE("flops prints every variant and accepts custom dims") {
    FlopsArgs a;
    REQUIRE(cmd_flops(cfg, a, os) == kOk);
    for (auto v : flops::all_variants()) CHECK(os.str().find(flops::to_string(v)) != std::string::npos);
    std::ostringstream js;
    a.json = true;
    a.dims = parse_dims("10,80,8,4,4");
    REQUIRE(cmd_flops(cfg, a, js) == kOk);
    const auto j = nlohmann::json::parse(js.str());
    CHECK(j.at("reports").size() == flops::all_variants().size());
    CHECK_THROWS_AS(parse_dims("1,2,3"), UsageError);
    CHECK_THROWS_AS(parse_dims("1,2,x,4,5"), UsageError);
  }
}

TEST_CASE("logging levels") {
  CHECK_NOTHROW(configure_logging(nullptr));
  CHECK_NOTHROW(configure_logging("debug"));
  CHECK_NOTHROW(configure_logging("error"));
  CHECK_THROWS_AS(configure_logging("loud"), UsageError);
}
