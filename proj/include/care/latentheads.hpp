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

#ifndef CARE_LATENTHEADS_HPP_
#define CARE_LATENTHEADS_HPP_

#include <string>
#include <vector>

#include "care/autograd.hpp"
#include "care/nn.hpp"
#include "care/params.hpp"
#include "care/vlmcore.hpp"

namespace care::heads {

// Single-head fusion: Q = src W_z + b_z, K = V = ctx W_f + b_f, softmax over
// context positions with 1/sqrt(d) scaling.
struct CrossAttention {
  nn::Linear wz;  // query projection
  nn::Linear wf;  // shared key/value projection
  int d = 0;

  static CrossAttention make(ParamStore& store, const std::string& name, int query_in,
                             int context_in, int d, Rng& rng);
  // queries: (batch * q_len) x query_in, context: (batch * k_len) x context_in.
  ag::Var operator()(ag::Graph& g, ag::Var queries, ag::Var context, int batch,
                     Tensor* probs = nullptr) const;
  ag::Var query(ag::Graph& g, ag::Var queries) const { return wz(g, queries); }
};

// One decoder layer: self-attention over the queries, cross-attention to the
// fused latent, then a feed-forward block. Pre-LN residual throughout.
struct DecoderLayer {
  nn::LayerNorm ln1, ln2, ln3;
  nn::Linear sq, sk, sv, so;
  nn::Linear cq, ck, cv, co;
  nn::Linear fc1, fc2;
  int heads = 1;

  static DecoderLayer make(ParamStore& store, const std::string& name, int d, int heads,
                           int ffn_mult, Rng& rng);
  ag::Var operator()(ag::Graph& g, ag::Var x, ag::Var memory, int batch) const;
};

// N_p learned queries decoded against z_f, then a linear head to d_v.
struct FrameDecoder {
  Param* queries = nullptr;  // N_p x d
  std::vector<DecoderLayer> layers;
  nn::LayerNorm norm;
  nn::Linear head;
  int n_queries = 0;

  static FrameDecoder make(ParamStore& store, const std::string& name,
                           const vlm::ModelConfig& cfg, Rng& rng);
  // z_f: (batch * n_latent) x d -> (batch * N_p) x d_v.
  ag::Var operator()(ag::Graph& g, ag::Var z_f, int batch) const;
};

// Points are queries: each normalized coordinate pair is embedded, fused with
// the latent rows by cross-attention, and an MLP predicts its displacement.
struct PointDecoder {
  nn::Linear embed;  // 2 -> d
  CrossAttention fuse;
  nn::Linear mlp1, mlp2;  // d -> hidden -> 2

  static PointDecoder make(ParamStore& store, const std::string& name,
                           const vlm::ModelConfig& cfg, Rng& rng);
  // Fused per-point vectors z_k: (batch * 256) x d.
  ag::Var fuse_points(ag::Graph& g, ag::Var z, const Tensor& k_t_norm, int batch) const;
  // Normalized prediction k_t / S + MLP(z_k).
  ag::Var decode(ag::Graph& g, ag::Var z_k, const Tensor& k_t_norm) const;
};

struct DecoderOutputs {
  ag::Var f_hat_next;  // (B * N_p) x d_v
  ag::Var k_hat_norm;  // (B * 256) x 2, in [0, 1] units
  ag::Var fused_f;     // (B * n_latent) x d
  ag::Var fused_k;     // (B * 256) x d
};

struct LatentHeads {
  CrossAttention frame_fuse;
  FrameDecoder frame_decoder;
  PointDecoder point_decoder;
  Param* s1 = nullptr;  // log sigma_1^2
  Param* s2 = nullptr;  // log sigma_2^2

  static LatentHeads make(ParamStore& store, const vlm::ModelConfig& cfg, Rng& rng);

  // With zero_frame_context the frame decoder sees only the query projection
  // of z, removing all access to the current frame.
  ag::Var frame_branch(ag::Graph& g, ag::Var z, ag::Var f_v, int batch,
                       bool zero_frame_context, ag::Var* fused = nullptr) const;
  ag::Var point_branch(ag::Graph& g, ag::Var z, const Tensor& k_t_norm, int batch,
                       ag::Var* fused = nullptr) const;
};

// MSE over all entries; ShapeError on mismatch.
ag::Var frame_loss(ag::Graph& g, ag::Var f_hat_next, const Tensor& f_target_next);
// Both arguments in pixels; the loss is taken after dividing by image_size.
ag::Var point_loss(ag::Graph& g, ag::Var k_hat_next, const Tensor& k_next, int image_size);

double frame_loss_value(const Tensor& f_hat_next, const Tensor& f_target_next);
double point_loss_value(const Tensor& k_hat_next, const Tensor& k_next, int image_size);

// 0.5 exp(-s1) L_f + 0.5 exp(-s2) L_p + 0.5 s1 + 0.5 s2. InputError when
// anything is non-finite.
double uwl_combine(double l_f, double l_p, double s1, double s2);

}  // namespace care::heads

#endif  // CARE_LATENTHEADS_HPP_
