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

#ifndef CARE_DATASET_HPP_
#define CARE_DATASET_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "care/io.hpp"
#include "care/synthworld.hpp"

namespace care::data {

inline constexpr const char* kFormatVersion = "care-dataset/1";
inline constexpr const char* kSplitPretrain = "pretrain";
inline constexpr const char* kSplitFinetune = "finetune";
inline constexpr const char* kSplitEval = "eval";

struct GenConfig {
  int n_trajectories = 2000;
  int horizon = 24;
  int image_size = 64;
  uint64_t seed = 0;
  // Uniform labeled sample written to the finetune split with actions.
  double labeled_fraction = 0.03;
  // Held-out labeled trajectories for probes and validation.
  double eval_fraction = 0.1;
  // Test hook: also write actions.bin into pretrain trajectories.
  bool pretrain_actions = false;

  static GenConfig from_json(const io::json& j);
  io::json to_json() const;
  world::WorldConfig world() const;
};

struct DatasetManifest {
  int n_trajectories = 0;
  int horizon = 0;
  int image_size = 0;
  std::map<std::string, std::vector<std::string>> splits;
  uint64_t generator_seed = 0;
  std::string format_version = kFormatVersion;

  io::json to_json() const;
  static DatasetManifest from_json(const io::json& j);
};

// Number of labeled finetune trajectories for a config.
int labeled_count(const GenConfig& cfg);

DatasetManifest generate_dataset(const GenConfig& cfg, const std::filesystem::path& root);

struct Trajectory {
  std::string name;
  std::string instruction;
  std::string split;
  int task_label = 0;
  uint64_t seed = 0;
  int length = 0;      // frames
  int image_size = 0;
  std::vector<float> frames;  // length x S x S x 3
  std::vector<float> tracks;  // length x 256 x 2
  std::optional<std::vector<world::Action>> actions;

  int template_id() const { return task_label / world::kNumCombos; }
  int combo() const { return task_label % world::kNumCombos; }
  const float* frame(int t) const {
    return frames.data() + static_cast<std::size_t>(t) * image_size * image_size * 3;
  }
  const float* track(int t) const {
    return tracks.data() + static_cast<std::size_t>(t) * world::kNumKeypoints * 2;
  }
};

Trajectory load_trajectory(const std::filesystem::path& root, const std::string& name);

// Loaded view over one or more splits of a dataset root.
class Dataset {
 public:
  static Dataset open(const std::filesystem::path& root);

  const DatasetManifest& manifest() const { return manifest_; }
  const std::filesystem::path& root() const { return root_; }
  // Loads (and caches) every trajectory of a split. Unknown split -> InputError.
  const std::vector<Trajectory>& split(const std::string& name) const;

 private:
  std::filesystem::path root_;
  DatasetManifest manifest_;
  mutable std::map<std::string, std::vector<Trajectory>> cache_;
};

}  // namespace care::data

#endif  // CARE_DATASET_HPP_
