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

#include "doctest.h"
#include "vggtocc/flops.hpp"

using namespace vggtocc;
using namespace vggtocc::flops;

namespace {

double gflops(const FlopReport& r) { return static_cast<double>(r.total()) / 1e9; }

// Hand counts at 80K coarse / 640K fine voxels, 256 -> 64 channels.
constexpr std::uint64_t kCoarse = 80000, kFine = 640000;
constexpr std::uint64_t kProj = kCoarse * 256 * 64 * 2 + kCoarse * 64;
constexpr std::uint64_t kScalarGate = kCoarse * 256 * 2 + kCoarse;
constexpr std::uint64_t kChannelGate =
    kCoarse * 256 * 64 * 2 + kCoarse * 64 + kCoarse * 64 * 64 * 2 + kCoarse * 64;
constexpr std::uint64_t kDw = kFine * 64 * 27 * 2 + kFine * 64;

std::uint64_t pada_params(std::uint64_t c, std::uint64_t h, std::uint64_t l, std::uint64_t k,
                          std::uint64_t cf) {
  const std::uint64_t s = h * l * k;
  const std::uint64_t offsets = (c * c + c) + (c * 3 * s + 3 * s);
  const std::uint64_t attn = c * s + s + h * l;
  const std::uint64_t value = h * cf * (c / h) + c;
  const std::uint64_t out = c * c + c;
  const std::uint64_t geo = 6 * c + c + 2 * c + c * c + c;
  const std::uint64_t gate = 2 * c * c + c + 2 * c + c * c + c;
  return offsets + attn + value + out + geo + gate + 2 * c;
}

std::uint64_t conv_params(std::uint64_t c) {
  return 27 * c + c + 2 * c + c * 4 * c + 4 * c + 4 * c * c + c;
}

std::uint64_t fuse_params(std::uint64_t cp, std::uint64_t c, std::uint64_t hid) {
  return cp * c + c + cp * hid + hid + hid * c + c + 27 * c + c + 2 * c;
}

}  // namespace

TEST_CASE("gated fusion costs at the reference transition") {
  const FlopReport scalar = count_fusion_variant(Variant::kScalarGate);
  const FlopReport channel = count_fusion_variant(Variant::kChannelGate);
  const FlopReport dw = count_fusion_variant(Variant::kChannelGateDw);
  CHECK(scalar.total() == kProj + kScalarGate);
  CHECK(channel.total() == kProj + kChannelGate);
  CHECK(dw.total() == kProj + kChannelGate + kDw);
  CHECK(std::abs(gflops(scalar) / 2.66 - 1.0) < 0.01);
  CHECK(std::abs(gflops(channel) / 5.90 - 1.0) < 0.01);
  CHECK(std::abs(gflops(dw) / 8.11 - 1.0) < 0.01);
  for (const FlopReport* r : {&scalar, &channel, &dw}) {
    const Variant v = parse_variant(r->title.substr(7));
    CHECK(std::abs(gflops(*r) / *reference_gflops(v) - 1.0) < 0.05);
    CHECK(r->item("trilinear_upsample") == 0);
  }
}

TEST_CASE("u-net baseline and the reduction ratio") {
  const FlopReport unet = count_fusion_variant(Variant::kUnet);
  const std::uint64_t deconv = kCoarse * 8 * 256 * 64 * 2 + kFine * 64;
  const std::uint64_t conv = kFine * (27 * 64 * 64 * 2 + 64);
  CHECK(unet.total() == deconv + conv);
  CHECK(std::abs(gflops(unet) - 162.6) < 0.1);
  const double ratio = gflops(unet) / gflops(count_fusion_variant(Variant::kChannelGateDw));
  CHECK(ratio >= 5.0);
  CHECK(unet.notes.size() >= 2);
}

TEST_CASE("variant bookkeeping") {
  CHECK(count_fusion_variant(Variant::kNone).total() == 0);
  CHECK(count_fusion_variant(Variant::kDirectAdd).total() == kProj);
  CHECK_THROWS(parse_variant("bilinear"));
  for (Variant v : all_variants()) {
    CHECK(parse_variant(to_string(v)) == v);
    const FlopReport a = count_fusion_variant(v), b = count_fusion_variant(v);
    CHECK(a.total() == b.total());
    std::uint64_t sum = 0;
    for (const auto& i : a.items) sum += i.flops;
    CHECK(sum == a.total());
  }
  CHECK(from_fusion(decoder::FusionVariant::kScalarGate) == Variant::kScalarGate);
  const FusionDims d = fusion_dims(decoder::HeadConfig::full_scale(), 1);
  CHECK(d.coarse_voxels == kCoarse);
  CHECK(d.fine_voxels == kFine);
  CHECK(d.coarse_channels == 256);
  CHECK(d.fine_channels == 64);
}

TEST_CASE("pada layer accounting") {
  pada::PadaConfig cfg;  // C = 64, 4 heads, 2 levels, feature width 32
  SUBCASE("one query, one camera, one point") {
    cfg.n_points = 1;
    const FlopReport r = count_pada_layer(cfg, {1, 1});
    // S = 4 heads * 2 levels * 1 point = 8 samples.
    CHECK(r.item("offset_mlp") == (2 * 64 * 64 + 64) + (2 * 64 * 24 + 24));
    CHECK(r.item("attention_logits") == 2 * 64 * 8 + 8);
    CHECK(r.item("projection") == 8 * 23);
    CHECK(r.item("observability") == 8 * 24);
    CHECK(r.item("bilinear_sampling") == 8 * 32 * 16);
    CHECK(r.item("weighted_sum") == 8 * 32 * 2);
    CHECK(r.item("value_projection") == 4 * (2 * 32 * 16 + 16));
    CHECK(r.item("gate_mlps") ==
          (2 * 6 * 64 + 64) + (2 * 64 * 64 + 64) + (2 * 128 * 64 + 64) + (2 * 64 * 64 + 64));
    CHECK(r.item("camera_fusion") == 64 * 3 + 64);
    CHECK(r.item("output_projection") == 2 * 64 * 64 + 64 + 64);
  }
  SUBCASE("doubling the points doubles the sampling cost") {
    const FlopReport a = count_pada_layer(cfg, {100, 6});
    cfg.n_points *= 2;
    const FlopReport b = count_pada_layer(cfg, {100, 6});
    CHECK(b.item("bilinear_sampling") == 2 * a.item("bilinear_sampling"));
  }
  SUBCASE("no cameras means no attention path") {
    const FlopReport r = count_pada_layer(cfg, {50, 0});
    for (const auto& i : r.items) {
      if (i.name != "output_projection") CHECK(i.flops == 0);
    }
  }
}

TEST_CASE("parameter report") {
  const decoder::HeadConfig cfg = decoder::HeadConfig::toy();
  diff::ParamSet ps = decoder::init_params(cfg, 1);
  const ParameterReport r = report_parameters(ps);
  const std::uint64_t hand =
      25 * 64 + 2 * pada_params(64, 4, 2, 4, 32) + 2 * conv_params(64) + (64 * 5 + 5) +
      (64 * 512 + 512) + pada_params(64, 4, 2, 4, 32) + 2 * conv_params(64) +
      fuse_params(64, 64, 64) + (64 * 5 + 5) + (64 * 256 + 256) + 2 * conv_params(32) +
      fuse_params(64, 32, 64) + (32 * 5 + 5);
  CHECK(r.total == hand);
  CHECK(r.trainable == hand);
  std::uint64_t sum = 0;
  for (const auto& [name, n] : r.modules) sum += n;
  CHECK(sum == hand);
  CHECK(r.modules.front().first == "s0.embed");

  ps.set_trainable("fuse1.", false);
  const ParameterReport frozen = report_parameters(ps);
  CHECK(frozen.trainable == hand - fuse_params(64, 32, 64));
  CHECK(frozen.total == hand);

  const ParameterReport full =
      report_parameters(decoder::parameter_specs(decoder::HeadConfig::full_scale()));
  MESSAGE("full-scale head parameters: " << full.total << " (reference ~41M)");
  CHECK(full.total > 0);
}

TEST_CASE("report formatting") {
  const FlopReport r = count_fusion_variant(Variant::kChannelGateDw);
  const std::string t = format_table(r);
  CHECK(t.find("depthwise_3x3x3") != std::string::npos);
  CHECK(t.find("1 MAC = 2 FLOPs") != std::string::npos);
  const std::string j = format_json({r});
  CHECK(j.find("\"total\": " + std::to_string(r.total())) != std::string::npos);
}
