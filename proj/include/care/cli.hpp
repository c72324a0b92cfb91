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

#ifndef CARE_CLI_HPP_
#define CARE_CLI_HPP_

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "care/io.hpp"

namespace care::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

// Applies `key=value` overrides to a fully populated config. Nested keys use
// dots (model.d_l). Values parse as JSON when possible, else as strings.
// Unknown keys throw ConfigError naming the key.
void apply_overrides(io::json& cfg, const std::vector<std::string>& overrides);

// "key = default" lines for every leaf of a schema, sorted by key.
std::string describe_schema(const io::json& defaults);

struct ReportSummary {
  int loss_curves = 0;
  int comparisons = 0;
  bool table1 = false;
  bool table4 = false;
};

// Collects metrics logs and reports under each run dir and writes loss-curve
// SVGs, per-metric comparisons and the success / ablation tables into `out`.
ReportSummary build_report(const std::vector<std::filesystem::path>& run_dirs,
                           const std::filesystem::path& out);

// Full command-line entry point; returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace care::cli

#endif  // CARE_CLI_HPP_
