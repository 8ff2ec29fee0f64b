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

#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "vggtocc/app.hpp"
#include "vggtocc/binio.hpp"

namespace vggtocc::app {
namespace {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

// Reads keys of one JSON object and rejects the ones nobody asked for.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw UsageError("config: '" + path_ + "' must be an object");
  }

  template <class T>
  void get(const char* key, T& dst) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      dst = it->get<T>();
    } catch (const json::exception& e) {
      throw UsageError("config: '" + path_ + "." + key + "': " + e.what());
    }
  }

  template <class F>
  void section(const char* key, F&& fn) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    Section s(*it, path_ + "." + key);
    fn(s);
    s.finish();
  }

  const json* raw(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  const std::string& path() const { return path_; }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw UsageError("config: unknown key '" + path_ + "." + k + "'");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string, std::less<>> seen_;
};

std::string block_name(decoder::BlockKind k) {
  return k == decoder::BlockKind::kCross ? "cross" : "conv";
}

decoder::BlockKind parse_block(const std::string& s) {
  if (s == "cross") return decoder::BlockKind::kCross;
  if (s == "conv") return decoder::BlockKind::kConv;
  throw UsageError("config: unknown block kind '" + s + "' (expected cross or conv)");
}

decoder::FusionVariant fusion_or_usage(const std::string& name) {
  try {
    return decoder::parse_fusion(name);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

}  // namespace

train::RunConfig config_from_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw UsageError(std::string("config: not valid JSON: ") + e.what());
  }
  train::RunConfig c;
  Section s(root, "config");
  s.get("seed", c.seed);
  s.get("n_train", c.n_train);
  s.get("n_val", c.n_val);
  s.get("threads", c.threads);
  s.section("data", [&](Section& d) {
    d.get("embed_seed", c.data.embed_seed);
    d.section("grid", [&](Section& g) {
      g.get("lower", c.data.grid.lower);
      g.get("upper", c.data.grid.upper);
      std::array<std::size_t, 3> dims{c.data.grid.dims.x, c.data.grid.dims.y, c.data.grid.dims.z};
      g.get("dims", dims);
      c.data.grid.dims = {dims[0], dims[1], dims[2]};
      g.get("n_classes", c.data.grid.n_classes);
      int ground = c.data.grid.ground_class;
      g.get("ground_class", ground);
      if (ground < 0 || ground > 255) throw UsageError("config: ground_class out of range");
      c.data.grid.ground_class = static_cast<std::uint8_t>(ground);
    });
    d.section("scene", [&](Section& p) {
      p.get("min_primitives", c.data.scene.min_primitives);
      p.get("max_primitives", c.data.scene.max_primitives);
      p.get("min_size", c.data.scene.min_size);
      p.get("max_size", c.data.scene.max_size);
      p.get("keep_out", c.data.scene.keep_out);
    });
    d.section("rig", [&](Section& r) {
      r.get("n_cameras", c.data.rig.n_cameras);
      r.get("radius", c.data.rig.radius);
      r.get("height", c.data.rig.height);
      r.get("yaw_offset", c.data.rig.yaw_offset);
      r.get("width", c.data.rig.width);
      r.get("height_px", c.data.rig.height_px);
      r.get("hfov_deg", c.data.rig.hfov_deg);
      r.get("levels", c.data.rig.levels);
      r.get("feature_dim", c.data.rig.feature_dim);
    });
  });
  s.section("head", [&](Section& h) {
    if (const json* scales = h.raw("scales")) {
      if (!scales->is_array() || scales->size() != 3) {
        throw UsageError("config: 'config.head.scales' must be an array of three objects");
      }
      for (std::size_t i = 0; i < 3; ++i) {
        Section sc((*scales)[i], "config.head.scales[" + std::to_string(i) + "]");
        sc.get("channels", c.head.scales[i].channels);
        std::vector<std::string> sched;
        for (auto k : c.head.scales[i].schedule) sched.push_back(block_name(k));
        sc.get("schedule", sched);
        c.head.scales[i].schedule.clear();
        for (const auto& n : sched) c.head.scales[i].schedule.push_back(parse_block(n));
        sc.finish();
      }
    }
    h.section("pada", [&](Section& p) {
      p.get("n_heads", c.head.pada.n_heads);
      p.get("n_points", c.head.pada.n_points);
      p.get("bias_scale_init", c.head.pada.bias_scale_init);
      p.get("eps", c.head.pada.eps);
      p.get("jacobian_input_scale", c.head.pada.jacobian_input_scale);
    });
    h.get("gate_hidden", c.head.gate_hidden);
    std::string fusion(decoder::to_string(c.head.fusion));
    h.get("fusion", fusion);
    c.head.fusion = fusion_or_usage(fusion);
    h.get("fuse_first_transition", c.head.fuse_first_transition);
    h.get("offset_pitches", c.head.offset_pitches);
  });
  s.section("optim", [&](Section& o) {
    o.get("lr", c.optim.lr);
    o.get("weight_decay", c.optim.weight_decay);
    o.get("min_lr", c.optim.min_lr);
    o.get("warmup", c.optim.warmup);
    o.get("steps", c.optim.steps);
    o.get("batch_size", c.optim.batch_size);
    o.get("clip_norm", c.optim.clip_norm);
    o.get("beta1", c.optim.beta1);
    o.get("beta2", c.optim.beta2);
    o.get("eps", c.optim.eps);
  });
  s.section("loss", [&](Section& l) {
    l.get("label_smoothing", c.loss.label_smoothing);
    l.get("scale_weights", c.loss.scale_weights);
    l.get("class_weights", c.loss.class_weights);
    l.get("use_ce", c.loss.use_ce);
    l.get("use_sem_scal", c.loss.use_sem_scal);
    l.get("use_geo_scal", c.loss.use_geo_scal);
    l.get("use_lovasz", c.loss.use_lovasz);
  });
  s.section("stages", [&](Section& t) {
    t.get("stage1", c.stages.stage1);
    t.get("stage2", c.stages.stage2);
    t.get("stage3", c.stages.stage3);
  });
  s.finish();
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return c;
}

std::string config_to_json(const train::RunConfig& c) {
  ojson j;
  j["seed"] = c.seed;
  j["n_train"] = c.n_train;
  j["n_val"] = c.n_val;
  j["threads"] = c.threads;
  const auto& g = c.data.grid;
  j["data"]["grid"] = {{"lower", g.lower},
                       {"upper", g.upper},
                       {"dims", {g.dims.x, g.dims.y, g.dims.z}},
                       {"n_classes", g.n_classes},
                       {"ground_class", g.ground_class}};
  const auto& p = c.data.scene;
  j["data"]["scene"] = {{"min_primitives", p.min_primitives},
                        {"max_primitives", p.max_primitives},
                        {"min_size", p.min_size},
                        {"max_size", p.max_size},
                        {"keep_out", p.keep_out}};
  const auto& r = c.data.rig;
  j["data"]["rig"] = {{"n_cameras", r.n_cameras}, {"radius", r.radius},
                      {"height", r.height},       {"yaw_offset", r.yaw_offset},
                      {"width", r.width},         {"height_px", r.height_px},
                      {"hfov_deg", r.hfov_deg},   {"levels", r.levels},
                      {"feature_dim", r.feature_dim}};
  j["data"]["embed_seed"] = c.data.embed_seed;
  ojson scales = ojson::array();
  for (const auto& sc : c.head.scales) {
    ojson sched = ojson::array();
    for (auto k : sc.schedule) sched.push_back(block_name(k));
    scales.push_back({{"channels", sc.channels}, {"schedule", sched}});
  }
  j["head"]["scales"] = scales;
  j["head"]["pada"] = {{"n_heads", c.head.pada.n_heads},
                       {"n_points", c.head.pada.n_points},
                       {"bias_scale_init", c.head.pada.bias_scale_init},
                       {"eps", c.head.pada.eps},
                       {"jacobian_input_scale", c.head.pada.jacobian_input_scale}};
  j["head"]["gate_hidden"] = c.head.gate_hidden;
  j["head"]["fusion"] = std::string(decoder::to_string(c.head.fusion));
  j["head"]["fuse_first_transition"] = c.head.fuse_first_transition;
  j["head"]["offset_pitches"] = c.head.offset_pitches;
  const auto& o = c.optim;
  j["optim"] = {{"lr", o.lr},           {"weight_decay", o.weight_decay},
                {"min_lr", o.min_lr},   {"warmup", o.warmup},
                {"steps", o.steps},     {"batch_size", o.batch_size},
                {"clip_norm", o.clip_norm}, {"beta1", o.beta1},
                {"beta2", o.beta2},     {"eps", o.eps}};
  const auto& l = c.loss;
  j["loss"] = {{"label_smoothing", l.label_smoothing},
               {"scale_weights", l.scale_weights},
               {"class_weights", l.class_weights},
               {"use_ce", l.use_ce},
               {"use_sem_scal", l.use_sem_scal},
               {"use_geo_scal", l.use_geo_scal},
               {"use_lovasz", l.use_lovasz}};
  j["stages"] = {{"stage1", c.stages.stage1},
                 {"stage2", c.stages.stage2},
                 {"stage3", c.stages.stage3}};
  return j.dump(2) + "\n";
}

train::RunConfig load_config(const fs::path& path) {
  const auto bytes = binio::read_file(path);
  try {
    return config_from_json(std::string(bytes.begin(), bytes.end()));
  } catch (const UsageError& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
}

bool parse_switch(const std::string& s) {
  if (s == "on") return true;
  if (s == "off") return false;
  throw UsageError("expected 'on' or 'off', got '" + s + "'");
}

void apply(train::RunConfig& cfg, const Overrides& o) {
  if (o.seed) cfg.seed = *o.seed;
  if (o.threads) cfg.threads = *o.threads;
  if (o.stage1) cfg.stages.stage1 = *o.stage1;
  if (o.stage2) cfg.stages.stage2 = *o.stage2;
  if (o.stage3) cfg.stages.stage3 = *o.stage3;
  if (o.fusion) cfg.head.fusion = fusion_or_usage(*o.fusion);
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

}  // namespace vggtocc::app
