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

#include "vggtocc/flops.hpp"

#include <algorithm>
#include <cctype>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace vggtocc::flops {

std::uint64_t FlopReport::total() const {
  std::uint64_t t = 0;
  for (const auto& i : items) t += i.flops;
  return t;
}

std::uint64_t FlopReport::item(std::string_view name) const {
  for (const auto& i : items) {
    if (i.name == name) return i.flops;
  }
  return 0;
}

std::uint64_t linear_flops(std::uint64_t rows, std::uint64_t in, std::uint64_t out,
                           bool bias) {
  return rows * (2 * in * out + (bias ? out : 0));
}

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::kUnet: return "unet";
    case Variant::kNone: return "none";
    case Variant::kDirectAdd: return "direct_add";
    case Variant::kScalarGate: return "scalar_gate";
    case Variant::kChannelGate: return "channel_gate";
    case Variant::kChannelGateDw: return "channel_gate_dw";
  }
  return "?";
}

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> v{Variant::kUnet,        Variant::kNone,
                                      Variant::kDirectAdd,   Variant::kScalarGate,
                                      Variant::kChannelGate, Variant::kChannelGateDw};
  return v;
}

Variant parse_variant(std::string_view name) {
  for (Variant v : all_variants()) {
    if (to_string(v) == name) return v;
  }
  throw std::invalid_argument("unknown fusion variant '" + std::string(name) + "'");
}

Variant from_fusion(decoder::FusionVariant v) {
  return parse_variant(decoder::to_string(v));
}

FusionDims fusion_dims(const decoder::HeadConfig& cfg, std::size_t transition) {
  if (transition > 1) throw std::out_of_range("fusion_dims: transition must be 0 or 1");
  const auto& prev = cfg.scales[transition];
  const auto& curr = cfg.scales[transition + 1];
  return {prev.dims.count(), curr.dims.count(), prev.channels, curr.channels,
          cfg.gate_hidden};
}

FlopReport count_fusion_variant(Variant v, const FusionDims& d) {
  FlopReport r;
  r.title = "fusion " + std::string(to_string(v));
  r.notes.emplace_back(kConvention);
  const std::uint64_t proj = linear_flops(d.coarse_voxels, d.coarse_channels, d.fine_channels);
  const std::uint64_t dw = d.fine_voxels * (2 * 27 * d.fine_channels + d.fine_channels);
  switch (v) {
    case Variant::kNone:
      break;
    case Variant::kUnet:
      // Transposed conv with a 2^3 kernel and stride 2: every coarse voxel
      // writes 8 children, each a full C_in -> C_out map.
      r.items.push_back({"deconv_2x2x2", d.coarse_voxels * 8 * 2 * d.coarse_channels *
                                             d.fine_channels +
                                         d.fine_voxels * d.fine_channels});
      r.items.push_back({"conv_3x3x3", d.fine_voxels * (2 * 27 * d.fine_channels *
                                                            d.fine_channels +
                                                        d.fine_channels)});
      r.notes.emplace_back(
          "U-Net baseline widths are an assumption (deconv C_in -> C_out, then a dense 3^3 "
          "conv C_out -> C_out); the reference 73.4G is not reproduced under this reading");
      break;
    case Variant::kDirectAdd:
      r.items.push_back({"projection", proj});
      break;
    case Variant::kScalarGate:
      r.items.push_back({"projection", proj});
      r.items.push_back({"gate_mlp", linear_flops(d.coarse_voxels, d.coarse_channels, 1)});
      break;
    case Variant::kChannelGate:
    case Variant::kChannelGateDw:
      r.items.push_back({"projection", proj});
      r.items.push_back({"gate_mlp",
                         linear_flops(d.coarse_voxels, d.coarse_channels, d.gate_hidden) +
                             linear_flops(d.coarse_voxels, d.gate_hidden, d.fine_channels)});
      if (v == Variant::kChannelGateDw) r.items.push_back({"depthwise_3x3x3", dw});
      break;
  }
  r.items.push_back({"trilinear_upsample", 0});
  return r;
}

std::optional<double> reference_gflops(Variant v) {
  switch (v) {
    case Variant::kUnet: return 73.4;
    case Variant::kScalarGate: return 2.68;
    case Variant::kChannelGate: return 6.02;
    case Variant::kChannelGateDw: return 8.2;
    default: return std::nullopt;
  }
}

FlopReport count_pada_layer(const pada::PadaConfig& cfg, const PadaCost& cost) {
  cfg.validate();
  const std::uint64_t q = cost.n_queries;
  const std::uint64_t n = cost.n_cameras;
  const std::uint64_t c = cfg.query_dim;
  const std::uint64_t h = cfg.n_heads;
  const std::uint64_t cf = cfg.feature_dim;
  const std::uint64_t s = cfg.samples_per_query();
  const std::uint64_t points = q * s;
  FlopReport r;
  r.title = "pada layer";
  r.notes.emplace_back(kConvention);
  const std::uint64_t any = n > 0 ? 1 : 0;
  r.items.push_back({"offset_mlp", any * (linear_flops(q, c, c) + linear_flops(q, c, 3 * s))});
  r.items.push_back({"attention_logits", any * linear_flops(q, c, s)});
  r.items.push_back({"projection", n * points * kProjectFlops});
  r.items.push_back({"observability", n * points * kSigmaFlops});
  r.items.push_back({"bilinear_sampling", n * points * cf * kBilinearMacs * 2});
  r.items.push_back({"weighted_sum", n * points * cf * 2});
  r.items.push_back({"value_projection", n * q * h * (2 * cf * (c / h) + c / h)});
  r.items.push_back({"gate_mlps", n * (linear_flops(q, 6, c) + linear_flops(q, c, c) +
                                       linear_flops(q, 2 * c, c) + linear_flops(q, c, c))});
  // Per camera gamma * v and the gamma sum; one divide at the end.
  r.items.push_back({"camera_fusion", n * q * c * 3 + any * q * c});
  r.items.push_back({"output_projection", linear_flops(q, c, c) + q * c});
  return r;
}

namespace {

bool is_scale_tag(std::string_view p) {
  return p.size() >= 2 && p[0] == 's' &&
         std::all_of(p.begin() + 1, p.end(), [](char ch) { return std::isdigit(ch) != 0; });
}

std::string module_of(const std::string& name) {
  std::vector<std::string> parts;
  std::stringstream ss(name);
  for (std::string p; std::getline(ss, p, '.');) parts.push_back(p);
  if (parts.size() >= 3 && is_scale_tag(parts[0]) && parts[1].starts_with('b')) {
    return parts[0] + "." + parts[1] + "." + parts[2];
  }
  if (parts.size() >= 2 && is_scale_tag(parts[0])) return parts[0] + "." + parts[1];
  return parts.empty() ? name : parts[0];
}

void add_to(ParameterReport& r, std::map<std::string, std::size_t>& index,
            const std::string& name, std::uint64_t count, bool trainable) {
  const std::string m = module_of(name);
  auto it = index.find(m);
  if (it == index.end()) {
    it = index.emplace(m, r.modules.size()).first;
    r.modules.emplace_back(m, 0);
  }
  if (trainable) r.modules[it->second].second += count;
  r.total += count;
  if (trainable) r.trainable += count;
}

}  // namespace

ParameterReport report_parameters(const diff::ParamSet& params) {
  ParameterReport r;
  std::map<std::string, std::size_t> index;
  for (const auto& p : params.items()) add_to(r, index, p->name, p->value.size(), p->trainable);
  return r;
}

ParameterReport report_parameters(const std::vector<diff::ParamSpec>& specs) {
  ParameterReport r;
  std::map<std::string, std::size_t> index;
  for (const auto& s : specs) add_to(r, index, s.name, s.count(), true);
  return r;
}

std::string format_table(const FlopReport& r) {
  std::ostringstream os;
  os << r.title << '\n';
  std::size_t w = 8;
  for (const auto& i : r.items) w = std::max(w, i.name.size());
  os << std::fixed << std::setprecision(4);
  for (const auto& i : r.items) {
    os << "  " << std::left << std::setw(static_cast<int>(w)) << i.name << std::right
       << std::setw(20) << i.flops << std::setw(12) << static_cast<double>(i.flops) / 1e9
       << " G\n";
  }
  os << "  " << std::left << std::setw(static_cast<int>(w)) << "total" << std::right
     << std::setw(20) << r.total() << std::setw(12) << static_cast<double>(r.total()) / 1e9
     << " G\n";
  for (const auto& n : r.notes) os << "  note: " << n << '\n';
  return os.str();
}

std::string format_json(const std::vector<FlopReport>& reports) {
  nlohmann::ordered_json out;
  out["convention"] = kConvention;
  out["reports"] = nlohmann::ordered_json::array();
  for (const auto& r : reports) {
    nlohmann::ordered_json j;
    j["title"] = r.title;
    j["items"] = nlohmann::ordered_json::array();
    for (const auto& i : r.items) j["items"].push_back({{"name", i.name}, {"flops", i.flops}});
    j["total"] = r.total();
    j["notes"] = r.notes;
    out["reports"].push_back(std::move(j));
  }
  return out.dump(2) + "\n";
}

std::string format_parameters(const ParameterReport& r) {
  std::ostringstream os;
  std::size_t w = 8;
  for (const auto& [name, count] : r.modules) w = std::max(w, name.size());
  for (const auto& [name, count] : r.modules) {
    os << "  " << std::left << std::setw(static_cast<int>(w)) << name << std::right
       << std::setw(14) << count << '\n';
  }
  os << "  " << std::left << std::setw(static_cast<int>(w)) << "trainable" << std::right
     << std::setw(14) << r.trainable << '\n';
  os << "  " << std::left << std::setw(static_cast<int>(w)) << "total" << std::right
     << std::setw(14) << r.total << '\n';
  return os.str();
}

}  // namespace vggtocc::flops
