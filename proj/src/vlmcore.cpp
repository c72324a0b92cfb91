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

#include "care/vlmcore.hpp"

#include <cmath>

#include "care/rng.hpp"

namespace care::vlm {

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
  if (patch <= 0 || image_size <= 0 || image_size % patch != 0) {
    fail("image_size must be a positive multiple of patch");
  }
  if (image_size % 16 != 0) fail("image_size must be divisible by 16 (keypoint grid)");
  if (d_v <= 0 || d_l <= 0 || key_dim <= 0) fail("widths must be positive");
  if (n_heads <= 0 || d_l % n_heads != 0) fail("d_l must be divisible by n_heads");
  if (d_v % n_heads != 0) fail("d_v must be divisible by n_heads");
  if (key_dim % n_heads != 0) fail("key_dim must be divisible by n_heads");
  if (n_layers < 1 || vision_layers < 1 || decoder_layers < 1) fail("layer counts must be >= 1");
  if (n_latent < 1) fail("n_latent must be >= 1");
  if (ffn_mult < 1 || point_hidden < 1 || max_text_len < 2) fail("bad auxiliary sizes");
  if (!(ema_momentum >= 0.0f && ema_momentum <= 1.0f)) fail("ema_momentum must lie in [0, 1]");
}

io::json ModelConfig::to_json() const {
  return {{"image_size", image_size},
          {"patch", patch},
          {"d_v", d_v},
          {"d_l", d_l},
          {"n_layers", n_layers},
          {"n_heads", n_heads},
          {"n_latent", n_latent},
          {"vision_layers", vision_layers},
          {"ffn_mult", ffn_mult},
          {"key_dim", key_dim},
          {"decoder_layers", decoder_layers},
          {"point_hidden", point_hidden},
          {"max_text_len", max_text_len},
          {"ema_momentum", ema_momentum},
          {"target_mode", target_mode == TargetMode::kEma ? "ema" : "frozen_random"}};
}

ModelConfig ModelConfig::from_json(const io::json& j) {
  io::reject_unknown_keys(j,
                          {"image_size", "patch", "d_v", "d_l", "n_layers", "n_heads",
                           "n_latent", "vision_layers", "ffn_mult", "key_dim", "decoder_layers",
                           "point_hidden", "max_text_len", "ema_momentum", "target_mode"},
                          "model config");
  ModelConfig c;
  try {
    c.image_size = j.value("image_size", c.image_size);
    c.patch = j.value("patch", c.patch);
    c.d_v = j.value("d_v", c.d_v);
    c.d_l = j.value("d_l", c.d_l);
    c.n_layers = j.value("n_layers", c.n_layers);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.n_latent = j.value("n_latent", c.n_latent);
    c.vision_layers = j.value("vision_layers", c.vision_layers);
    c.ffn_mult = j.value("ffn_mult", c.ffn_mult);
    c.key_dim = j.value("key_dim", c.key_dim);
    c.decoder_layers = j.value("decoder_layers", c.decoder_layers);
    c.point_hidden = j.value("point_hidden", c.point_hidden);
    c.max_text_len = j.value("max_text_len", c.max_text_len);
    c.ema_momentum = j.value("ema_momentum", c.ema_momentum);
    const std::string mode = j.value("target_mode", std::string("ema"));
    if (mode == "ema") {
      c.target_mode = TargetMode::kEma;
    } else if (mode == "frozen_random") {
      c.target_mode = TargetMode::kFrozenRandom;
    } else {
      throw ConfigError("model config: target_mode must be 'ema' or 'frozen_random'");
    }
  } catch (const io::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

Tensor patchify(const std::vector<const float*>& frames, int S, int P) {
  const int per_side = S / P;
  const int n_p = per_side * per_side;
  Tensor out(static_cast<Eigen::Index>(frames.size()) * n_p, P * P * 3);
  for (std::size_t b = 0; b < frames.size(); ++b) {
    const float* img = frames[b];
    for (int pr = 0; pr < per_side; ++pr) {
      for (int pc = 0; pc < per_side; ++pc) {
        float* dst = out.row(static_cast<Eigen::Index>(b) * n_p + pr * per_side + pc).data();
        for (int i = 0; i < P; ++i) {
          const float* src = img + (static_cast<std::size_t>(pr * P + i) * S + pc * P) * 3;
          std::copy(src, src + P * 3, dst + i * P * 3);
        }
      }
    }
  }
  return out;
}

VisionEncoder VisionEncoder::make(ParamStore& store, const std::string& name,
                                  const ModelConfig& cfg, Rng& rng) {
  VisionEncoder e;
  e.embed = nn::Linear::make(store, name + ".embed", cfg.patch_dim(), cfg.d_v, rng);
  e.pos = &store.add(name + ".pos", normal_tensor(rng, cfg.n_patches(), cfg.d_v, 0.5f));
  for (int i = 0; i < cfg.vision_layers; ++i) {
    e.blocks.push_back(nn::TransformerBlock::make(store, name + ".block" + std::to_string(i),
                                                  cfg.d_v, cfg.n_heads, cfg.ffn_mult, rng));
  }
  e.norm = nn::LayerNorm::make(store, name + ".norm", cfg.d_v);
  return e;
}

ag::Var VisionEncoder::operator()(ag::Graph& g, ag::Var patches, int batch) const {
  ag::Var x = ag::add_periodic_rows(g, embed(g, patches), g.param(*pos));
  ag::AttentionLayout lay;
  lay.batch = batch;
  for (const auto& blk : blocks) x = blk(g, x, lay);
  return norm(g, x);
}

Projector Projector::make(ParamStore& store, const std::string& name, const ModelConfig& cfg,
                          Rng& rng) {
  Projector p;
  p.fc1 = nn::Linear::make(store, name + ".fc1", 2 * cfg.d_v, cfg.d_l, rng);
  p.fc2 = nn::Linear::make(store, name + ".fc2", cfg.d_l, cfg.d_l, rng);
  return p;
}

ag::Var Projector::operator()(ag::Graph& g, ag::Var f_a, ag::Var f_b) const {
  if (f_a->value.cols() != fc1.in / 2 || f_b->value.cols() != fc1.in / 2) {
    throw ShapeError("projector: expected two inputs of width " + std::to_string(fc1.in / 2));
  }
  ag::Var f_cat = ag::concat_cols(g, f_a, f_b);
  return fc2(g, ag::gelu(g, fc1(g, f_cat)));
}

Backbone Backbone::make(ParamStore& store, const std::string& name, const ModelConfig& cfg,
                        Rng& rng) {
  Backbone bb;
  for (int i = 0; i < cfg.n_layers; ++i) {
    bb.blocks.push_back(nn::TransformerBlock::make(store, name + ".block" + std::to_string(i),
                                                   cfg.d_l, cfg.n_heads, cfg.ffn_mult, rng));
  }
  bb.norm = nn::LayerNorm::make(store, name + ".norm", cfg.d_l);
  bb.max_len = cfg.n_patches() + cfg.max_text_len;
  return bb;
}

ag::Var Backbone::operator()(ag::Graph& g, ag::Var f_v, ag::Var text, int batch,
                             const std::vector<uint8_t>& key_valid,
                             std::vector<std::vector<Tensor>>* probs) const {
  ag::Var x = ag::concat_seq(g, f_v, text, batch);
  const int len = static_cast<int>(x->value.rows()) / batch;
  if (len > max_len) {
    throw ShapeError("backbone: sequence length " + std::to_string(len) + " exceeds " +
                     std::to_string(max_len));
  }
  ag::AttentionLayout lay;
  lay.batch = batch;
  lay.causal = true;
  lay.key_valid = key_valid;
  if (probs != nullptr) probs->assign(blocks.size(), {});
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    x = blocks[i](g, x, lay, probs != nullptr ? &(*probs)[i] : nullptr);
  }
  return norm(g, x);
}

PromptBatch batch_prompts(const std::vector<text::TokenizedPrompt>& prompts, int n_patches) {
  PromptBatch pb;
  std::size_t len = 0;
  for (const auto& p : prompts) len = std::max(len, p.ids.size());
  pb.text_len = static_cast<int>(len);
  bool padded = false;
  for (const auto& p : prompts) padded = padded || p.ids.size() != len;
  const int seq = n_patches + pb.text_len;
  for (std::size_t b = 0; b < prompts.size(); ++b) {
    const auto& p = prompts[b];
    const int pad = static_cast<int>(len - p.ids.size());
    std::vector<int> row(static_cast<std::size_t>(pad), text::kPad);
    row.insert(row.end(), p.ids.begin(), p.ids.end());
    pb.ids.push_back(std::move(row));
    for (int pos : p.placeholder_positions) {
      pb.latent_rows.push_back(static_cast<int>(b) * seq + n_patches + pad + pos);
    }
    if (padded) {
      for (int i = 0; i < seq; ++i) pb.key_valid.push_back(i < n_patches || i >= n_patches + pad);
    }
  }
  return pb;
}

ag::Var extract_latent(ag::Graph& g, ag::Var h_last, const std::vector<int>& rows) {
  return ag::gather_rows(g, h_last, rows);
}

void ema_update(const Tensor& online, Tensor& target, float momentum) {
  if (online.rows() != target.rows() || online.cols() != target.cols()) {
    throw ShapeError("ema_update: " + shape_str(online) + " vs " + shape_str(target));
  }
  if (momentum == 1.0f) return;
  if (momentum == 0.0f) {
    target = online;
    return;
  }
  target = momentum * target + (1.0f - momentum) * online;
}

void ema_update(ParamStore& store, const std::string& online_prefix,
                const std::string& target_prefix, float momentum) {
  for (std::size_t i = 0; i < store.size(); ++i) {
    const Param& p = store[i];
    if (p.name.compare(0, online_prefix.size(), online_prefix) != 0) continue;
    Param& t = store.at(target_prefix + p.name.substr(online_prefix.size()));
    ema_update(p.value, t.value, momentum);
  }
}

double feature_std(const Tensor& features, int batch) {
  const Eigen::Index rows = features.rows() / batch;
  const Eigen::Index dim = rows * features.cols();
  if (batch < 2) return 0.0;
  double total = 0.0;
  for (Eigen::Index k = 0; k < dim; ++k) {
    double s = 0.0, s2 = 0.0;
    for (int b = 0; b < batch; ++b) {
      const double v = features.data()[b * dim + k];
      s += v;
      s2 += v * v;
    }
    const double mean = s / batch;
    total += std::sqrt(std::max(0.0, s2 / batch - mean * mean));
  }
  return total / static_cast<double>(dim);
}

}  // namespace care::vlm
