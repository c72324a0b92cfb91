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

#include "care/nn.hpp"

#include <cmath>

namespace care::nn {

Linear Linear::make(ParamStore& store, const std::string& name, int in, int out, Rng& rng) {
  Linear l;
  l.w = &store.add(name + ".w", xavier_uniform(rng, in, out));
  l.b = &store.add(name + ".b", Tensor::Zero(1, out));
  l.in = in;
  l.out = out;
  l.name = name;
  return l;
}

ag::Var Linear::operator()(ag::Graph& g, ag::Var x) const {
  ag::Var y = ag::linear(g, x, g.param(*w), g.param(*b));
  if (adapter) {
    ag::Var delta =
        ag::low_rank(g, x, g.param(*adapter->a), g.param(*adapter->bm), adapter->scale);
    y = ag::add(g, y, delta);
  }
  return y;
}

void Linear::attach_adapter(ParamStore& store, int rank, float alpha, Rng& rng) {
  if (rank < 1 || rank > std::min(in, out)) {
    throw ConfigError("adapter rank " + std::to_string(rank) + " invalid for " + name + " (" +
                      std::to_string(in) + "x" + std::to_string(out) + ")");
  }
  const float bound = 1.0f / std::sqrt(static_cast<float>(in));
  LowRankAdapter ad;
  ad.a = &store.add("adapters." + name + ".a", uniform_tensor(rng, rank, in, -bound, bound));
  ad.bm = &store.add("adapters." + name + ".b", Tensor::Zero(out, rank));
  ad.rank = rank;
  ad.scale = alpha / static_cast<float>(rank);
  adapter = ad;
}

void Linear::bind_adapter(ParamStore& store, float alpha) {
  LowRankAdapter ad;
  ad.a = &store.at("adapters." + name + ".a");
  ad.bm = &store.at("adapters." + name + ".b");
  ad.rank = static_cast<int>(ad.a->value.rows());
  if (ad.a->value.cols() != in || ad.bm->value.rows() != out || ad.bm->value.cols() != ad.rank) {
    throw ShapeError("adapter tensors for " + name + " do not match the layer");
  }
  ad.scale = alpha / static_cast<float>(ad.rank);
  adapter = ad;
}

LayerNorm LayerNorm::make(ParamStore& store, const std::string& name, int dim) {
  LayerNorm ln;
  ln.gamma = &store.add(name + ".gamma", Tensor::Ones(1, dim));
  ln.beta = &store.add(name + ".beta", Tensor::Zero(1, dim));
  return ln;
}

ag::Var LayerNorm::operator()(ag::Graph& g, ag::Var x) const {
  return ag::layer_norm(g, x, g.param(*gamma), g.param(*beta));
}

TransformerBlock TransformerBlock::make(ParamStore& store, const std::string& name, int dim,
                                        int heads, int ffn_mult, Rng& rng) {
  if (heads <= 0 || dim % heads != 0) {
    throw ConfigError("transformer width " + std::to_string(dim) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  TransformerBlock blk;
  blk.ln1 = LayerNorm::make(store, name + ".ln1", dim);
  blk.wq = Linear::make(store, name + ".attn.q", dim, dim, rng);
  blk.wk = Linear::make(store, name + ".attn.k", dim, dim, rng);
  blk.wv = Linear::make(store, name + ".attn.v", dim, dim, rng);
  blk.wo = Linear::make(store, name + ".attn.o", dim, dim, rng);
  blk.ln2 = LayerNorm::make(store, name + ".ln2", dim);
  blk.fc1 = Linear::make(store, name + ".mlp.fc1", dim, dim * ffn_mult, rng);
  blk.fc2 = Linear::make(store, name + ".mlp.fc2", dim * ffn_mult, dim, rng);
  blk.heads = heads;
  return blk;
}

ag::Var TransformerBlock::operator()(ag::Graph& g, ag::Var x, ag::AttentionLayout layout,
                                     std::vector<Tensor>* probs) const {
  const int len = static_cast<int>(x->value.rows()) / layout.batch;
  layout.q_len = len;
  layout.k_len = len;
  layout.heads = heads;
  ag::Var h = ln1(g, x);
  ag::Var a = ag::attention(g, wq(g, h), wk(g, h), wv(g, h), layout, probs);
  x = ag::add(g, x, wo(g, a));
  ag::Var m = fc2(g, ag::gelu(g, fc1(g, ln2(g, x))));
  return ag::add(g, x, m);
}

ResidualMlpHead ResidualMlpHead::make(ParamStore& store, const std::string& name, int in_dim,
                                      int hidden, int out_dim, Rng& rng) {
  ResidualMlpHead h;
  h.in = Linear::make(store, name + ".in", in_dim, hidden, rng);
  h.w1 = Linear::make(store, name + ".w1", hidden, hidden, rng);
  h.w2 = Linear::make(store, name + ".w2", hidden, hidden, rng);
  h.out = Linear::make(store, name + ".out", hidden, out_dim, rng);
  return h;
}

ag::Var ResidualMlpHead::operator()(ag::Graph& g, ag::Var x) const {
  ag::Var h = in(g, x);
  ag::Var r = w2(g, ag::gelu(g, w1(g, ag::gelu(g, h))));
  h = ag::add(g, h, r);
  return out(g, ag::gelu(g, h));
}

}  // namespace care::nn
