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

#include "care/latentheads.hpp"

#include <cmath>

#include "care/rng.hpp"

namespace care::heads {

CrossAttention CrossAttention::make(ParamStore& store, const std::string& name, int query_in,
                                    int context_in, int d, Rng& rng) {
  CrossAttention c;
  c.wz = nn::Linear::make(store, name + ".z", query_in, d, rng);
  c.wf = nn::Linear::make(store, name + ".f", context_in, d, rng);
  c.d = d;
  return c;
}

ag::Var CrossAttention::operator()(ag::Graph& g, ag::Var queries, ag::Var context, int batch,
                                   Tensor* probs) const {
  if (queries->value.cols() != wz.in) {
    throw ShapeError("cross_attention: query width " + std::to_string(queries->value.cols()) +
                     " != " + std::to_string(wz.in));
  }
  if (context->value.cols() != wf.in) {
    throw ShapeError("cross_attention: context width " + std::to_string(context->value.cols()) +
                     " != " + std::to_string(wf.in));
  }
  if (batch <= 0 || queries->value.rows() % batch != 0 || context->value.rows() % batch != 0) {
    throw ShapeError("cross_attention: rows not divisible by batch");
  }
  ag::AttentionLayout lay;
  lay.batch = batch;
  lay.q_len = static_cast<int>(queries->value.rows()) / batch;
  lay.k_len = static_cast<int>(context->value.rows()) / batch;
  lay.heads = 1;
  ag::Var kv = wf(g, context);
  std::vector<Tensor> p;
  ag::Var out = ag::attention(g, wz(g, queries), kv, kv, lay, probs != nullptr ? &p : nullptr);
  if (probs != nullptr) *probs = std::move(p.front());
  return out;
}

DecoderLayer DecoderLayer::make(ParamStore& store, const std::string& name, int d, int heads,
                                int ffn_mult, Rng& rng) {
  DecoderLayer l;
  l.ln1 = nn::LayerNorm::make(store, name + ".ln1", d);
  l.ln2 = nn::LayerNorm::make(store, name + ".ln2", d);
  l.ln3 = nn::LayerNorm::make(store, name + ".ln3", d);
  l.sq = nn::Linear::make(store, name + ".self.q", d, d, rng);
  l.sk = nn::Linear::make(store, name + ".self.k", d, d, rng);
  l.sv = nn::Linear::make(store, name + ".self.v", d, d, rng);
  l.so = nn::Linear::make(store, name + ".self.o", d, d, rng);
  l.cq = nn::Linear::make(store, name + ".cross.q", d, d, rng);
  l.ck = nn::Linear::make(store, name + ".cross.k", d, d, rng);
  l.cv = nn::Linear::make(store, name + ".cross.v", d, d, rng);
  l.co = nn::Linear::make(store, name + ".cross.o", d, d, rng);
  l.fc1 = nn::Linear::make(store, name + ".fc1", d, d * ffn_mult, rng);
  l.fc2 = nn::Linear::make(store, name + ".fc2", d * ffn_mult, d, rng);
  l.heads = heads;
  return l;
}

ag::Var DecoderLayer::operator()(ag::Graph& g, ag::Var x, ag::Var memory, int batch) const {
  ag::AttentionLayout self;
  self.batch = batch;
  self.q_len = self.k_len = static_cast<int>(x->value.rows()) / batch;
  self.heads = heads;
  ag::Var h = ln1(g, x);
  x = ag::add(g, x, so(g, ag::attention(g, sq(g, h), sk(g, h), sv(g, h), self)));

  ag::AttentionLayout cross = self;
  cross.k_len = static_cast<int>(memory->value.rows()) / batch;
  h = ln2(g, x);
  x = ag::add(g, x, co(g, ag::attention(g, cq(g, h), ck(g, memory), cv(g, memory), cross)));

  ag::Var m = fc2(g, ag::gelu(g, fc1(g, ln3(g, x))));
  return ag::add(g, x, m);
}

FrameDecoder FrameDecoder::make(ParamStore& store, const std::string& name,
                                const vlm::ModelConfig& cfg, Rng& rng) {
  FrameDecoder f;
  f.n_queries = cfg.n_patches();
  f.queries = &store.add(name + ".queries", normal_tensor(rng, f.n_queries, cfg.key_dim, 0.5f));
  for (int i = 0; i < cfg.decoder_layers; ++i) {
    f.layers.push_back(DecoderLayer::make(store, name + ".layer" + std::to_string(i),
                                          cfg.key_dim, cfg.n_heads, cfg.ffn_mult, rng));
  }
  f.norm = nn::LayerNorm::make(store, name + ".norm", cfg.key_dim);
  f.head = nn::Linear::make(store, name + ".head", cfg.key_dim, cfg.d_v, rng);
  return f;
}

ag::Var FrameDecoder::operator()(ag::Graph& g, ag::Var z_f, int batch) const {
  if (z_f->value.cols() != queries->value.cols()) {
    throw ShapeError("frame_decode: z_f width " + std::to_string(z_f->value.cols()) +
                     " != " + std::to_string(queries->value.cols()));
  }
  Tensor zeros = Tensor::Zero(static_cast<Eigen::Index>(batch) * n_queries, queries->value.cols());
  ag::Var x = ag::add_periodic_rows(g, g.constant(std::move(zeros)), g.param(*queries));
  for (const auto& layer : layers) x = layer(g, x, z_f, batch);
  return head(g, norm(g, x));
}

PointDecoder PointDecoder::make(ParamStore& store, const std::string& name,
                                const vlm::ModelConfig& cfg, Rng& rng) {
  PointDecoder p;
  p.embed = nn::Linear::make(store, name + ".embed", 2, cfg.key_dim, rng);
  p.fuse = CrossAttention::make(store, name + ".fuse", cfg.key_dim, cfg.d_l, cfg.key_dim, rng);
  p.mlp1 = nn::Linear::make(store, name + ".mlp1", cfg.key_dim, cfg.point_hidden, rng);
  p.mlp2 = nn::Linear::make(store, name + ".mlp2", cfg.point_hidden, 2, rng);
  // Zero output layer: training starts from the "nothing moves" prediction.
  p.mlp2.w->value.setZero();
  p.mlp2.b->value.setZero();
  return p;
}

ag::Var PointDecoder::fuse_points(ag::Graph& g, ag::Var z, const Tensor& k_t_norm,
                                  int batch) const {
  require_shape(k_t_norm, k_t_norm.rows(), 2, "point_decode: k_t");
  // Centre the coordinates so the embedding sees a zero-mean input.
  ag::Var e = embed(g, g.constant((k_t_norm.array() * 2.0f - 1.0f).matrix()));
  return ag::add(g, e, fuse(g, e, z, batch));
}

ag::Var PointDecoder::decode(ag::Graph& g, ag::Var z_k, const Tensor& k_t_norm) const {
  if (z_k->value.rows() != k_t_norm.rows()) {
    throw ShapeError("point_decode: " + std::to_string(z_k->value.rows()) + " fused rows vs " +
                     std::to_string(k_t_norm.rows()) + " points");
  }
  ag::Var delta = mlp2(g, ag::gelu(g, mlp1(g, z_k)));
  return ag::add(g, g.constant(k_t_norm), delta);
}

LatentHeads LatentHeads::make(ParamStore& store, const vlm::ModelConfig& cfg, Rng& rng) {
  LatentHeads h;
  h.frame_fuse = CrossAttention::make(store, "heads.frame.fuse", cfg.d_l, cfg.d_l, cfg.key_dim, rng);
  h.frame_decoder = FrameDecoder::make(store, "heads.frame.decoder", cfg, rng);
  h.point_decoder = PointDecoder::make(store, "heads.point", cfg, rng);
  h.s1 = &store.add("heads.uwl.s1", Tensor::Zero(1, 1));
  h.s2 = &store.add("heads.uwl.s2", Tensor::Zero(1, 1));
  return h;
}

ag::Var LatentHeads::frame_branch(ag::Graph& g, ag::Var z, ag::Var f_v, int batch,
                                  bool zero_frame_context, ag::Var* fused) const {
  ag::Var z_f = zero_frame_context ? frame_fuse.query(g, z) : frame_fuse(g, z, f_v, batch);
  if (fused != nullptr) *fused = z_f;
  return frame_decoder(g, z_f, batch);
}

ag::Var LatentHeads::point_branch(ag::Graph& g, ag::Var z, const Tensor& k_t_norm, int batch,
                                  ag::Var* fused) const {
  ag::Var z_k = point_decoder.fuse_points(g, z, k_t_norm, batch);
  if (fused != nullptr) *fused = z_k;
  return point_decoder.decode(g, z_k, k_t_norm);
}

ag::Var frame_loss(ag::Graph& g, ag::Var f_hat_next, const Tensor& f_target_next) {
  require_shape(f_target_next, f_hat_next->value.rows(), f_hat_next->value.cols(), "frame_loss");
  return ag::mse(g, f_hat_next, f_target_next);
}

ag::Var point_loss(ag::Graph& g, ag::Var k_hat_next, const Tensor& k_next, int image_size) {
  require_shape(k_next, k_hat_next->value.rows(), 2, "point_loss");
  const float inv = 1.0f / static_cast<float>(image_size);
  Tensor target = k_next * inv;
  return ag::mse(g, ag::scale(g, k_hat_next, inv), target);
}

double frame_loss_value(const Tensor& f_hat_next, const Tensor& f_target_next) {
  require_shape(f_target_next, f_hat_next.rows(), f_hat_next.cols(), "frame_loss");
  return (f_hat_next - f_target_next).cast<double>().squaredNorm() /
         static_cast<double>(f_hat_next.size());
}

double point_loss_value(const Tensor& k_hat_next, const Tensor& k_next, int image_size) {
  require_shape(k_next, k_hat_next.rows(), 2, "point_loss");
  require_shape(k_hat_next, k_hat_next.rows(), 2, "point_loss");
  const double inv = 1.0 / image_size;
  return ((k_hat_next - k_next).cast<double>() * inv).squaredNorm() /
         static_cast<double>(k_hat_next.size());
}

double uwl_combine(double l_f, double l_p, double s1, double s2) {
  if (!std::isfinite(l_f) || !std::isfinite(l_p) || !std::isfinite(s1) || !std::isfinite(s2)) {
    throw InputError("uwl_combine: non-finite input");
  }
  return 0.5 * std::exp(-s1) * l_f + 0.5 * std::exp(-s2) * l_p + 0.5 * s1 + 0.5 * s2;
}

}  // namespace care::heads
