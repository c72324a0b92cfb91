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

#ifndef CARE_NN_HPP_
#define CARE_NN_HPP_

#include <optional>
#include <string>

#include "care/autograd.hpp"
#include "care/params.hpp"
#include "care/rng.hpp"

namespace care::nn {

// Trainable rank-r correction (scale * Bm * A) added to a frozen weight.
struct LowRankAdapter {
  Param* a = nullptr;   // r x in
  Param* bm = nullptr;  // out x r, zero at attach time
  float scale = 0.0f;   // alpha / r
  int rank = 0;
};

struct Linear {
  Param* w = nullptr;  // in x out
  Param* b = nullptr;  // 1 x out
  std::optional<LowRankAdapter> adapter;
  int in = 0;
  int out = 0;
  std::string name;

  static Linear make(ParamStore& store, const std::string& name, int in, int out, Rng& rng);
  ag::Var operator()(ag::Graph& g, ag::Var x) const;

  // Adds an adapter whose parameters live under `adapters.<name>.`.
  void attach_adapter(ParamStore& store, int rank, float alpha, Rng& rng);
  // Reconnects an adapter whose tensors already exist in the store.
  void bind_adapter(ParamStore& store, float alpha);
};

struct LayerNorm {
  Param* gamma = nullptr;
  Param* beta = nullptr;

  static LayerNorm make(ParamStore& store, const std::string& name, int dim);
  ag::Var operator()(ag::Graph& g, ag::Var x) const;
};

// Pre-LN multi-head self-attention + GELU feed-forward block.
struct TransformerBlock {
  LayerNorm ln1, ln2;
  Linear wq, wk, wv, wo;
  Linear fc1, fc2;
  int heads = 1;

  static TransformerBlock make(ParamStore& store, const std::string& name, int dim, int heads,
                               int ffn_mult, Rng& rng);
  // `layout` supplies batch, sequence length, causality and key masks;
  // q_len/k_len/heads are overwritten for self-attention.
  ag::Var operator()(ag::Graph& g, ag::Var x, ag::AttentionLayout layout,
                     std::vector<Tensor>* probs = nullptr) const;
};

// in -> hidden, one residual block h + W2 gelu(W1 gelu(h)), then gelu -> out.
struct ResidualMlpHead {
  Linear in, w1, w2, out;

  static ResidualMlpHead make(ParamStore& store, const std::string& name, int in_dim,
                              int hidden, int out_dim, Rng& rng);
  ag::Var operator()(ag::Graph& g, ag::Var x) const;
};

}  // namespace care::nn

#endif  // CARE_NN_HPP_
