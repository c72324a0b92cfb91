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

#ifndef CARE_FINETUNE_HPP_
#define CARE_FINETUNE_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "care/dataset.hpp"
#include "care/model.hpp"
#include "care/optim.hpp"
#include "care/synthworld.hpp"

namespace care::finetune {

inline constexpr int kActionDim = 3;

struct FinetuneConfig {
  int steps = 2000;
  int batch_size = 32;
  float lr = 1e-3f;
  int rank = 8;
  float alpha = 16.0f;
  int head_hidden = 256;
  uint64_t seed = 0;
  float grad_clip = 1.0f;
  // Baseline: skip the pretrained checkpoint and start from a random base.
  bool from_scratch = false;
  // Architecture for from_scratch runs; ignored when a checkpoint is given.
  vlm::ModelConfig model;
  std::string data_root;
  std::string pretrain_checkpoint;

  void validate() const;
  io::json to_json() const;
  static FinetuneConfig from_json(const io::json& j);
};

// Attaches the action head and adapters, then freezes everything else.
void prepare_for_finetune(Model& model, const FinetuneConfig& cfg);

// Number of adapter scalars (both factors over every adapted matrix).
std::size_t adapter_parameter_count(const Model& model);

// Frozen-prefix cache: f_v depends only on frozen encoder and projector
// weights, so it is computed once per labeled frame.
class FeatureCache {
 public:
  FeatureCache(const Model& model, const std::vector<data::Trajectory>& split);
  const Tensor& f_v(int traj, int t) const;  // N_p x d_l
  const text::TokenizedPrompt& prompt(int traj) const { return prompts_[traj]; }

 private:
  std::vector<std::vector<Tensor>> features_;
  std::vector<text::TokenizedPrompt> prompts_;
};

struct ActionBatch {
  std::vector<std::pair<int, int>> index;  // (trajectory, t)
  Tensor actions;                          // B x 3
};

// ContractError if any sampled trajectory lacks actions.
ActionBatch sample_action_batch(const std::vector<data::Trajectory>& split, int batch_size,
                                Rng& rng);

// Head output for cached frames, B x 3 (unclipped).
ag::Var predict_actions(ag::Graph& g, const Model& model, const FeatureCache& cache,
                        const std::vector<std::pair<int, int>>& index);

struct FinetuneMetrics {
  int64_t step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  io::json to_json() const;
};

FinetuneMetrics finetune_step(Model& model, Adam& opt, const FeatureCache& cache,
                              const ActionBatch& batch, const FinetuneConfig& cfg);

// Mean L1 over every labeled transition of a split.
double evaluate_l1(const Model& model, const FeatureCache& cache,
                   const std::vector<data::Trajectory>& split);

struct FinetuneResult {
  std::filesystem::path checkpoint;
  double val_l1_start = 0.0;
  double val_l1_end = 0.0;
};

// Trains on the manifest's finetune split, validates on the eval split and
// writes <out>/final (stage "finetuned"), <out>/metrics.ndjson and
// <out>/summary.json.
FinetuneResult run_finetune(const FinetuneConfig& cfg, const std::filesystem::path& data_root,
                            const std::filesystem::path& out_dir);

// One deterministic forward pass; dx, dy clipped to [-1, 1] and grip
// thresholded at 0 to +-1. InputError for out-of-vocabulary instructions.
world::Action act(const Model& model, const world::Frame& frame, const std::string& instruction);

}  // namespace care::finetune

#endif  // CARE_FINETUNE_HPP_
