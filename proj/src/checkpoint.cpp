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

#include "vggtocc/checkpoint.hpp"

#include <limits>
#include <set>

namespace vggtocc::checkpoint {

namespace {
constexpr std::string_view kMagic = "VOCP";
}  // namespace

std::vector<char> encode(const diff::ParamSet& params) {
  binio::Writer w;
  w.bytes(kMagic);
  w.u16(kVersion);
  for (const auto& p : params.items()) {
    if (p->name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw binio::IoError("parameter name too long: " + p->name);
    }
    w.u16(static_cast<std::uint16_t>(p->name.size()));
    w.bytes(p->name);
    const Shape& s = p->value.shape();
    w.u8(static_cast<std::uint8_t>(s.size()));
    for (std::size_t e : s) w.u32(static_cast<std::uint32_t>(e));
    for (double v : p->value.vec()) w.f32(static_cast<float>(v));
  }
  return w.data();
}

Entries decode(const std::vector<char>& bytes, const std::string& what) {
  binio::Reader r(bytes, what);
  if (r.remaining() < 6 || r.bytes(4) != kMagic) {
    throw binio::IoError(what + ": not a VOCP checkpoint");
  }
  const std::uint16_t version = r.u16();
  if (version != kVersion) {
    throw binio::IoError(what + ": unsupported version " + std::to_string(version));
  }
  Entries out;
  while (!r.done()) {
    std::string name = r.bytes(r.u16());
    Shape shape(r.u8());
    for (auto& e : shape) e = r.u32();
    Tensor t(shape);
    for (double& v : t.vec()) v = r.f32();
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

void save(const diff::ParamSet& params, const std::filesystem::path& path) {
  binio::write_file(path, encode(params));
}

Entries read(const std::filesystem::path& path) {
  return decode(binio::read_file(path), path.string());
}

void load_into(diff::ParamSet& params, const std::filesystem::path& path) {
  const Entries entries = read(path);
  std::set<std::string> seen;
  for (const auto& [name, t] : entries) {
    const diff::Param* p = params.find(name);
    if (p == nullptr) {
      throw MismatchError(path.string() + ": unexpected parameter '" + name + "'");
    }
    if (p->value.shape() != t.shape()) {
      throw MismatchError(path.string() + ": parameter '" + name + "' has shape " +
                          shape_str(t.shape()) + ", model expects " +
                          shape_str(p->value.shape()));
    }
    if (!seen.insert(name).second) {
      throw MismatchError(path.string() + ": duplicate parameter '" + name + "'");
    }
  }
  for (const auto& p : params.items()) {
    if (!seen.count(p->name)) {
      throw MismatchError(path.string() + ": missing parameter '" + p->name + "'");
    }
  }
  for (const auto& [name, t] : entries) params.get(name).value = t;
}

void round_to_storage(diff::ParamSet& params) {
  for (auto& p : params.items()) {
    for (double& v : p->value.vec()) v = static_cast<float>(v);
  }
}

}  // namespace vggtocc::checkpoint
