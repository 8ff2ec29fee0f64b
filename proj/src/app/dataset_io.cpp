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

#include <cstdio>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>
#include <zlib.h>

#include "vggtocc/app.hpp"
#include "vggtocc/binio.hpp"
#include "vggtocc/vogd.hpp"

namespace vggtocc::app {
namespace {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

constexpr const char* kManifest = "manifest.json";
constexpr const char* kFormat = "vggtocc-dataset";
constexpr int kFormatVersion = 1;

std::vector<char> to_bytes(const std::string& s) { return {s.begin(), s.end()}; }

std::string split_name(synth::Split s) { return s == synth::Split::kTrain ? "train" : "val"; }

std::string scene_dir(synth::Split s, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04zu", i);
  return split_name(s) + "/" + buf;
}

std::string feature_name(std::size_t cam, std::size_t level) {
  return "features_c" + std::to_string(cam) + "_l" + std::to_string(level) + ".vogd";
}

std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08x", v);
  return buf;
}

class DatasetWriter {
 public:
  explicit DatasetWriter(fs::path root) : root_(std::move(root)) {}

  void put(const std::string& rel, const std::vector<char>& bytes) {
    const fs::path p = root_ / rel;
    std::error_code ec;
    fs::create_directories(p.parent_path(), ec);
    if (ec) throw binio::IoError(p.parent_path().string() + ": " + ec.message());
    binio::write_file(p, bytes);
    entries_.push_back({rel, bytes.size(), crc32(bytes)});
  }

  std::vector<ManifestEntry>& entries() { return entries_; }

 private:
  fs::path root_;
  std::vector<ManifestEntry> entries_;
};

std::string read_text(const fs::path& path) {
  const auto bytes = binio::read_file(path);
  return {bytes.begin(), bytes.end()};
}

}  // namespace

std::uint32_t crc32(const std::vector<char>& bytes) {
  uLong c = ::crc32(0L, Z_NULL, 0);
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    c = ::crc32(c, reinterpret_cast<const Bytef*>(bytes.data() + off), n);
    off += n;
  }
  return static_cast<std::uint32_t>(c);
}

std::string cameras_to_json(const std::vector<geometry::CameraModel>& cams) {
  ojson arr = ojson::array();
  for (const auto& c : cams) {
    ojson r = ojson::array();
    for (int i = 0; i < 3; ++i)
      for (int k = 0; k < 3; ++k) r.push_back(c.rotation(i, k));
    arr.push_back({{"width", c.width},
                   {"height", c.height},
                   {"fx", c.fx},
                   {"fy", c.fy},
                   {"cx", c.cx},
                   {"cy", c.cy},
                   {"rotation", r},
                   {"translation", {c.translation.x(), c.translation.y(), c.translation.z()}}});
  }
  return arr.dump(2) + "\n";
}

std::vector<geometry::CameraModel> cameras_from_json(const std::string& text) {
  std::vector<geometry::CameraModel> cams;
  try {
    for (const auto& j : json::parse(text)) {
      geometry::CameraModel c;
      c.width = j.at("width").get<int>();
      c.height = j.at("height").get<int>();
      c.fx = j.at("fx").get<double>();
      c.fy = j.at("fy").get<double>();
      c.cx = j.at("cx").get<double>();
      c.cy = j.at("cy").get<double>();
      const auto r = j.at("rotation").get<std::array<double, 9>>();
      for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 3; ++k) c.rotation(i, k) = r[3 * i + k];
      const auto t = j.at("translation").get<std::array<double, 3>>();
      c.translation = {t[0], t[1], t[2]};
      c.validate();
      cams.push_back(c);
    }
  } catch (const json::exception& e) {
    throw binio::IoError(std::string("cameras: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw binio::IoError(std::string("cameras: ") + e.what());
  }
  return cams;
}

Manifest write_dataset(const train::RunConfig& cfg, const fs::path& dir) {
  DatasetWriter w(dir);
  for (auto split : {synth::Split::kTrain, synth::Split::kVal}) {
    const std::size_t n = split == synth::Split::kTrain ? cfg.n_train : cfg.n_val;
    const auto spec = cfg.dataset_spec(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto s = synth::make_sample(spec, split, i);
      const std::string base = scene_dir(split, i) + "/";
      w.put(base + "scene.json", to_bytes(synth::scene_to_json(s.scene)));
      w.put(base + "cameras.json", to_bytes(cameras_to_json(s.cameras)));
      for (std::size_t k = 0; k < 3; ++k) {
        w.put(base + "labels_s" + std::to_string(k) + ".vogd",
              vogd::encode(vogd::from_labels(s.labels[k])));
      }
      for (std::size_t c = 0; c < s.features.size(); ++c)
        for (std::size_t l = 0; l < s.features[c].size(); ++l)
          w.put(base + feature_name(c, l), vogd::encode(vogd::from_tensor(s.features[c][l])));
      spdlog::debug("wrote {} scene {}", split_name(split), i);
    }
  }
  Manifest m{cfg, cfg.n_train, cfg.n_val, w.entries()};
  ojson j;
  j["format"] = kFormat;
  j["version"] = kFormatVersion;
  j["n_train"] = m.n_train;
  j["n_val"] = m.n_val;
  j["config"] = ojson::parse(config_to_json(cfg));
  j["files"] = ojson::array();
  for (const auto& e : m.files) {
    j["files"].push_back({{"path", e.path}, {"bytes", e.bytes}, {"crc32", hex32(e.crc32)}});
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw binio::IoError(dir.string() + ": " + ec.message());
  binio::write_file(dir / kManifest, to_bytes(j.dump(2) + "\n"));
  return m;
}

Manifest read_manifest(const fs::path& dir) {
  const auto bytes = binio::read_file(dir / kManifest);
  Manifest m;
  try {
    const auto j = json::parse(bytes.begin(), bytes.end());
    if (j.at("format").get<std::string>() != kFormat) {
      throw binio::IoError((dir / kManifest).string() + ": not a vggtocc dataset manifest");
    }
    if (j.at("version").get<int>() != kFormatVersion) {
      throw binio::IoError((dir / kManifest).string() + ": unsupported dataset version");
    }
    m.n_train = j.at("n_train").get<std::size_t>();
    m.n_val = j.at("n_val").get<std::size_t>();
    m.config = config_from_json(j.at("config").dump());
    for (const auto& e : j.at("files")) {
      ManifestEntry me;
      me.path = e.at("path").get<std::string>();
      me.bytes = e.at("bytes").get<std::uint64_t>();
      me.crc32 = static_cast<std::uint32_t>(std::stoul(e.at("crc32").get<std::string>(), nullptr, 16));
      m.files.push_back(me);
    }
  } catch (const json::exception& e) {
    throw binio::IoError((dir / kManifest).string() + ": " + e.what());
  } catch (const UsageError& e) {
    throw binio::IoError((dir / kManifest).string() + ": " + e.what());
  }
  for (const auto& e : m.files) {
    const auto data = binio::read_file(dir / e.path);
    if (data.size() != e.bytes || crc32(data) != e.crc32) {
      throw binio::IoError((dir / e.path).string() + ": checksum mismatch with manifest");
    }
  }
  return m;
}

std::vector<synth::Sample> read_split(const fs::path& dir, const Manifest& m, synth::Split split) {
  const std::size_t n = split == synth::Split::kTrain ? m.n_train : m.n_val;
  std::vector<synth::Sample> out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string base = scene_dir(split, i) + "/";
    synth::Sample s;
    try {
      s.scene = synth::scene_from_json(read_text(dir / (base + "scene.json")));
    } catch (const std::invalid_argument& e) {
      throw binio::IoError((dir / base).string() + "scene.json: " + e.what());
    }
    s.cameras = cameras_from_json(read_text(dir / (base + "cameras.json")));
    for (std::size_t k = 0; k < 3; ++k) {
      s.labels[k] = vogd::to_labels(vogd::read(dir / (base + "labels_s" + std::to_string(k) + ".vogd")));
    }
    const std::size_t levels = m.config.data.rig.levels.size();
    for (std::size_t c = 0; c < s.cameras.size(); ++c) {
      std::vector<Tensor> lv;
      for (std::size_t l = 0; l < levels; ++l) {
        lv.push_back(vogd::to_tensor(vogd::read(dir / (base + feature_name(c, l)))));
      }
      s.features.push_back(std::move(lv));
    }
    out.push_back(std::move(s));
  }
  return out;
}

void check_compatible(const train::RunConfig& cfg, const std::vector<synth::Sample>& data) {
  const auto head = cfg.head_config();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = data[i];
    const std::string where = "sample " + std::to_string(i) + ": ";
    for (std::size_t k = 0; k < 3; ++k) {
      const auto& d = s.labels[k].dims;
      const auto& e = head.scales[k].dims;
      if (!(d == e)) {
        throw UsageError(where + "label grid " + std::to_string(k) + " is " + std::to_string(d.x) +
                         "x" + std::to_string(d.y) + "x" + std::to_string(d.z) +
                         " but the head expects " + std::to_string(e.x) + "x" +
                         std::to_string(e.y) + "x" + std::to_string(e.z));
      }
      for (auto v : s.labels[k].data) {
        if (v >= head.n_classes) {
          throw UsageError(where + "label " + std::to_string(v) + " exceeds the class count " +
                           std::to_string(head.n_classes));
        }
      }
    }
    if (s.features.size() != s.cameras.size() || s.cameras.empty()) {
      throw UsageError(where + "camera and feature counts differ");
    }
    for (const auto& cam : s.features) {
      if (cam.size() != head.pada.n_levels) {
        throw UsageError(where + "has " + std::to_string(cam.size()) +
                         " feature levels, the head expects " +
                         std::to_string(head.pada.n_levels));
      }
      for (const auto& f : cam) {
        if (f.rank() != 3 || f.shape()[2] != head.pada.feature_dim) {
          throw UsageError(where + "feature width does not match the head (" +
                           std::to_string(head.pada.feature_dim) + ")");
        }
      }
    }
  }
}

}  // namespace vggtocc::app
