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

#include "vggtocc/vogd.hpp"

#include <limits>

namespace vggtocc::vogd {

std::size_t Array::count() const {
  std::size_t n = 1;
  for (std::uint32_t e : extents) n *= e;
  return n;
}

Array from_tensor(const Tensor& t) {
  Array a;
  a.dtype = DType::kF32;
  for (std::size_t d : t.shape()) {
    if (d > std::numeric_limits<std::uint32_t>::max()) throw binio::IoError("vogd: extent too large");
    a.extents.push_back(static_cast<std::uint32_t>(d));
  }
  a.f32.reserve(t.size());
  for (double v : t.vec()) a.f32.push_back(static_cast<float>(v));
  return a;
}

Tensor to_tensor(const Array& a) {
  Shape shape(a.extents.begin(), a.extents.end());
  Tensor t(shape);
  if (a.dtype == DType::kF32) {
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = a.f32[i];
  } else {
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = a.u8[i];
  }
  return t;
}

Array from_labels(const objective::LabelGrid& g) {
  Array a;
  a.dtype = DType::kU8;
  a.extents = {static_cast<std::uint32_t>(g.dims.x), static_cast<std::uint32_t>(g.dims.y),
               static_cast<std::uint32_t>(g.dims.z)};
  a.u8 = g.data;
  return a;
}

objective::LabelGrid to_labels(const Array& a) {
  if (a.dtype != DType::kU8 || a.extents.size() != 3) {
    throw binio::IoError("vogd: expected a rank-3 u8 label grid");
  }
  return {{a.extents[0], a.extents[1], a.extents[2]}, a.u8};
}

std::vector<char> encode(const Array& a) {
  if (a.extents.size() > 255) throw binio::IoError("vogd: rank too large");
  const std::size_t n = a.count();
  if ((a.dtype == DType::kF32 ? a.f32.size() : a.u8.size()) != n) {
    throw binio::IoError("vogd: payload does not match extents");
  }
  binio::Writer w;
  w.bytes("VOGD");
  w.u16(kVersion);
  w.u8(static_cast<std::uint8_t>(a.dtype));
  w.u8(static_cast<std::uint8_t>(a.extents.size()));
  for (std::uint32_t e : a.extents) w.u32(e);
  if (a.dtype == DType::kF32) {
    for (float v : a.f32) w.f32(v);
  } else {
    for (std::uint8_t v : a.u8) w.u8(v);
  }
  return w.data();
}

Array decode(const std::vector<char>& bytes, const std::string& what) {
  binio::Reader r(bytes, what);
  if (r.bytes(4) != "VOGD") throw binio::IoError(what + ": bad magic");
  if (const std::uint16_t v = r.u16(); v != kVersion) {
    throw binio::IoError(what + ": unsupported version " + std::to_string(v));
  }
  Array a;
  const std::uint8_t dtype = r.u8();
  if (dtype > 1) throw binio::IoError(what + ": unknown dtype " + std::to_string(dtype));
  a.dtype = static_cast<DType>(dtype);
  const std::uint8_t rank = r.u8();
  for (std::uint8_t i = 0; i < rank; ++i) a.extents.push_back(r.u32());
  const std::size_t n = a.count();
  const std::size_t width = a.dtype == DType::kF32 ? 4 : 1;
  if (r.remaining() != n * width) {
    throw binio::IoError(what + (r.remaining() < n * width ? ": truncated file"
                                                          : ": trailing bytes"));
  }
  if (a.dtype == DType::kF32) {
    a.f32.resize(n);
    for (float& v : a.f32) v = r.f32();
  } else {
    a.u8.resize(n);
    for (std::uint8_t& v : a.u8) v = r.u8();
  }
  return a;
}

void save(const Array& a, const std::filesystem::path& path) {
  binio::write_file(path, encode(a));
}

Array read(const std::filesystem::path& path) {
  return decode(binio::read_file(path), path.string());
}

}  // namespace vggtocc::vogd
