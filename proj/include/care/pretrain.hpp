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

#ifndef CARE_PRETRAIN_HPP_
#define CARE_PRETRAIN_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "care/dataset.hpp"
#include "care/model.hpp"
#include "care/optim.hpp"

namespace care::pretrain {

enum class Objective { kMulti, kFrameOnly, kPointOnly };

const char* objective_name(Objective o);
Objective parse_objective(const std::string& s);

struct PretrainConfig {
  int batch_size = 32;
  int steps = 5000;
  float lr = 3e-4f;
  Objective objective = Objective::kMulti;
  uint64_t seed = 0;
  int checkpoint_every = 1000;
  float grad_clip = 1.0f;
  // Ablation: the frame decoder sees only the query projection of z.
  bool zero_frame_context = false;
  vlm::ModelConfig model;
  std::string data_root;

  void validate() const;
  io::json to_json() const;
  static PretrainConfig from_json(const io::json& j);
};

// One transition (t, t+1) per sample; no action data by construction.
struct TransitionBatch {
  std::vector<const float*> frames_t;
  std::vector<const float*> frames_next;
  std::vector<std::string> prompts;
  Tensor k_t;     // (B * 256) x 2, pixels
  Tensor k_next;  // (B * 256) x 2, pixels
  std::vector<std::pair<int, int>> index;  // (trajectory, t)
  int image_size = 0;

  int size() const { return static_cast<int>(frames_t.size()); }
};

// Uniform over (trajectory, t) with t < T_i - 1. InputError on an empty split.
TransitionBatch sample_batch(const std::vector<data::Trajectory>& split, int batch_size,
                             Rng& rng);

struct StepMetrics {
  int64_t step = 0;
  double loss = 0.0;
  std::optional<double> loss_frame;
  std::optional<double> loss_point;
  double s1 = 0.0;
  double s2 = 0.0;
  double grad_norm = 0.0;  // before clipping
  double feat_std = 0.0;

  io::json to_json() const;
};

// Collapse threshold on the mean per-dimension std of the targets.
inline constexpr double kMinFeatureStd = 1e-4;

struct Losses {
  ag::Var total = nullptr;
  ag::Var frame = nullptr;  // null when the objective has no frame term
  ag::Var point = nullptr;
  double feat_std = 0.0;
};

Losses compute_losses(ag::Graph& g, const Model& model, const TransitionBatch& batch,
                      Objective objective, bool zero_frame_context);

// Marks head parameters of the inactive task as frozen.
void configure_trainable(Model& model, Objective objective);

// Forward, backward, clip, Adam update and EMA update. TrainingError on a
// non-finite loss or collapsed targets.
StepMetrics pretrain_step(Model& model, Adam& opt, const TransitionBatch& batch,
                          const PretrainConfig& cfg);

struct RunHooks {
  // Stop after this many total steps without writing `final` (interrupt
  // simulation); < 0 runs to completion.
  int64_t stop_after = -1;
  std::function<void(const StepMetrics&)> on_step;
};

// Writes <out>/config.json, <out>/metrics.ndjson, periodic checkpoints under
// <out>/checkpoints/ and the final checkpoint <out>/final. An existing run in
// <out> is resumed from its latest checkpoint. Returns the final path.
std::filesystem::path run_pretraining(const PretrainConfig& cfg,
                                      const std::filesystem::path& data_root,
                                      const std::filesystem::path& out_dir,
                                      const RunHooks& hooks = {});

}  // namespace care::pretrain

#endif  // CARE_PRETRAIN_HPP_
