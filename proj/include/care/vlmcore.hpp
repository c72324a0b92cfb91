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

#ifndef CARE_VLMCORE_HPP_
#define CARE_VLMCORE_HPP_

#include <string>
#include <vector>

#include "care/autograd.hpp"
#include "care/io.hpp"
#include "care/nn.hpp"
#include "care/params.hpp"
#include "care/textfront.hpp"

namespace care::vlm {

enum class TargetMode { kEma, kFrozenRandom };

struct ModelConfig {
  int image_size = 64;
  int patch = 8;
  int d_v = 64;        // per-encoder feature width
  int d_l = 128;       // backbone width
  int n_layers = 4;
  int n_heads = 4;
  int n_latent = 4;
  int vision_layers = 2;
  int ffn_mult = 4;
  int key_dim = 128;   // cross-attention width of the latent heads
  int decoder_layers = 2;
  int point_hidden = 64;
  int max_text_len = 32;
  float ema_momentum = 0.99f;
  TargetMode target_mode = TargetMode::kEma;

  int n_patches() const { return (image_size / patch) * (image_size / patch); }
  int patch_dim() const { return patch * patch * 3; }
  // ConfigError on violated invariants.
  void validate() const;
  io::json to_json() const;
  static ModelConfig from_json(const io::json& j);
};

// Non-overlapping patches, raster order; each row is patch x patch x 3
// pixels. Output (frames.size() * N_p) x patch_dim.
Tensor patchify(const std::vector<const float*>& frames, int image_size, int patch);

struct VisionEncoder {
  nn::Linear embed;
  Param* pos = nullptr;  // N_p x d_v
  std::vector<nn::TransformerBlock> blocks;
  nn::LayerNorm norm;

  static VisionEncoder make(ParamStore& store, const std::string& name, const ModelConfig& cfg,
                            Rng& rng);
  // patches: (B * N_p) x patch_dim -> (B * N_p) x d_v.
  ag::Var operator()(ag::Graph& g, ag::Var patches, int batch) const;
};

// Two affine layers with GELU between: 2 d_v -> d_l -> d_l.
struct Projector {
  nn::Linear fc1, fc2;

  static Projector make(ParamStore& store, const std::string& name, const ModelConfig& cfg,
                        Rng& rng);
  ag::Var operator()(ag::Graph& g, ag::Var f_a, ag::Var f_b) const;
};

// Causal transformer over the image-first sequence [f_v ; f_T].
struct Backbone {
  std::vector<nn::TransformerBlock> blocks;
  nn::LayerNorm norm;
  int max_len = 0;

  static Backbone make(ParamStore& store, const std::string& name, const ModelConfig& cfg,
                       Rng& rng);
  // f_v: (B * N_p) x d_l, text: (B * L) x d_l. key_valid (optional) flags
  // padded text positions per sample over the full sequence.
  ag::Var operator()(ag::Graph& g, ag::Var f_v, ag::Var text, int batch,
                     const std::vector<uint8_t>& key_valid = {},
                     std::vector<std::vector<Tensor>>* probs = nullptr) const;
};

// Prompts left-padded to a common length so placeholders stay trailing.
struct PromptBatch {
  std::vector<std::vector<int>> ids;
  // Backbone-sequence rows of z, sample-major, n_latent per sample.
  std::vector<int> latent_rows;
  std::vector<uint8_t> key_valid;  // empty when nothing is padded
  int text_len = 0;
};

PromptBatch batch_prompts(const std::vector<text::TokenizedPrompt>& prompts, int n_patches);

// Rows of h_last at placeholder positions; out of range -> ShapeError.
ag::Var extract_latent(ag::Graph& g, ag::Var h_last, const std::vector<int>& rows);

// target = m * target + (1 - m) * online, elementwise.
void ema_update(const Tensor& online, Tensor& target, float momentum);
// Applies ema_update to every `<online_prefix>X` / `<target_prefix>X` pair.
void ema_update(ParamStore& store, const std::string& online_prefix,
                const std::string& target_prefix, float momentum);

// Mean over feature columns of the across-batch standard deviation.
// features: (B * rows_per_sample) x dim, sample-major.
double feature_std(const Tensor& features, int batch);

}  // namespace care::vlm

#endif  // CARE_VLMCORE_HPP_
