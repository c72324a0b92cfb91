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

#ifndef CARE_MODEL_HPP_
#define CARE_MODEL_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "care/autograd.hpp"
#include "care/io.hpp"
#include "care/latentheads.hpp"
#include "care/nn.hpp"
#include "care/params.hpp"
#include "care/textfront.hpp"
#include "care/vlmcore.hpp"

namespace care {

struct AdapterSpec {
  int rank = 8;
  float alpha = 16.0f;
};

// Latent VLM: online encoders a/b, EMA target of encoder a, projector, text
// embedding, causal backbone and the latent heads. Fine-tuning adds the
// action head and low-rank adapters.
class Model {
 public:
  static Model create(const vlm::ModelConfig& cfg, uint64_t seed);

  vlm::ModelConfig cfg;
  text::Vocab vocab;
  ParamStore store;
  vlm::VisionEncoder enc_a, enc_b, target;
  vlm::Projector projector;
  text::TextEmbedding text;
  vlm::Backbone backbone;
  heads::LatentHeads heads;
  std::optional<nn::ResidualMlpHead> action_head;
  std::optional<AdapterSpec> adapters;
  std::string stage = "pretrain";

  struct Encoded {
    ag::Var f_a, f_b, f_v;
  };
  struct Latent {
    ag::Var h_last;
    ag::Var z;  // (batch * n_latent) x d_l
  };

  // Frames are image_size x image_size x 3, row-major.
  Encoded encode(ag::Graph& g, const std::vector<const float*>& frames) const;
  Latent latent(ag::Graph& g, ag::Var f_v, const std::vector<text::TokenizedPrompt>& prompts,
                std::vector<std::vector<Tensor>>* probs = nullptr) const;
  // Stop-gradient features of the target encoder, (B * N_p) x d_v.
  Tensor target_features(const std::vector<const float*>& frames) const;

  text::TokenizedPrompt prompt(const std::string& instruction) const;

  // Fine-tuning plumbing. Head input is the flattened z of each sample.
  void attach_action_head(uint64_t seed, int hidden = 256);
  void apply_adapters(const AdapterSpec& spec, uint64_t seed);
  ag::Var action_output(ag::Graph& g, ag::Var z, int batch) const;  // batch x 3

  std::vector<nn::Linear*> adapter_targets();
};

// Training state carried alongside the weights.
struct CheckpointState {
  int64_t step = 0;
  io::json extra = io::json::object();
  std::map<std::string, Tensor> tensors;  // e.g. optimizer moments
};

struct LoadedCheckpoint {
  Model model;
  CheckpointState state;
};

// Directory container: manifest.json + tensors.bin (float32 LE, row-major).
// Written to a sibling temp directory and renamed into place.
void save_checkpoint(const std::filesystem::path& dir, const Model& model,
                     const CheckpointState& state = {});
LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

// FNV-1a digest over the named tensors' bytes, in store order.
std::string tensor_digest(const ParamStore& store, const std::string& prefix = "");

}  // namespace care

#endif  // CARE_MODEL_HPP_
