// Copyright 2026 The CARE Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef CARE_IO_HPP_
#define CARE_IO_HPP_

#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <string>
#include <vector>

#include "json.hpp"

namespace care::io {

using json = nlohmann::json;

// Binary arrays: a header of uint32 dimensions followed by float32 payload,
// both little-endian.
void write_f32(const std::filesystem::path& path, const std::vector<uint32_t>& dims,
               const float* data, std::size_t count);
std::vector<float> read_f32(const std::filesystem::path& path, std::size_t n_dims,
                            std::vector<uint32_t>* dims);

// Writes to `<path>.tmp` and renames over `path`.
void write_text_atomic(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);
json read_json(const std::filesystem::path& path);
void write_json_atomic(const std::filesystem::path& path, const json& j);

// Throws ConfigError naming the first key of `j` not in `allowed`.
void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed,
                         const std::string& context);

// 64-bit FNV-1a of a string, as 16 hex digits.
std::string fnv1a_hex(const std::string& text);

}  // namespace care::io

#endif  // CARE_IO_HPP_
