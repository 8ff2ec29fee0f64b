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

// Dense array dumps: "VOGD", version u16, dtype u8 (0 = f32, 1 = u8), rank u8,
// extents u32 each, row-major payload, all little-endian.

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "vggtocc/binio.hpp"
#include "vggtocc/objective.hpp"
#include "vggtocc/tensor.hpp"

namespace vggtocc::vogd {

inline constexpr std::uint16_t kVersion = 1;

enum class DType : std::uint8_t { kF32 = 0, kU8 = 1 };

struct Array {
  DType dtype = DType::kF32;
  std::vector<std::uint32_t> extents;
  std::vector<float> f32;
  std::vector<std::uint8_t> u8;

  std::size_t count() const;
  bool operator==(const Array&) const = default;
};

// Values are rounded to f32.
Array from_tensor(const Tensor& t);
Tensor to_tensor(const Array& a);
Array from_labels(const objective::LabelGrid& g);
objective::LabelGrid to_labels(const Array& a);

std::vector<char> encode(const Array& a);
// Throws binio::IoError on malformed input.
Array decode(const std::vector<char>& bytes, const std::string& what = "vogd");

void save(const Array& a, const std::filesystem::path& path);
Array read(const std::filesystem::path& path);

}  // namespace vggtocc::vogd
