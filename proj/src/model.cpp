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

#include "care/model.hpp"

#include <cstring>
#include <fstream>

#include "care/rng.hpp"
#include "care/synthworld.hpp"

namespace care {

namespace fs = std::filesystem;

namespace {

constexpr const char* kFormat = "care-checkpoint/1";
constexpr int kActionDim = 3;

}  // namespace

Model Model::create(const vlm::ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  m.vocab = text::Vocab::build(world::all_instructions());
  Rng rng(derive_seed(seed, 0x5EED));
  m.enc_a = vlm::VisionEncoder::make(m.store, "vision.a", cfg, rng);
  m.enc_b = vlm::VisionEncoder::make(m.store, "vision.b", cfg, rng);
  m.target = vlm::VisionEncoder::make(m.store, "target.a", cfg, rng);
  m.store.set_trainable("target.", false);
  vlm::ema_update(m.store, "vision.a.", "target.a.", 0.0f);  // exact copy at step 0
  m.projector = vlm::Projector::make(m.store, "projector", cfg, rng);
  m.text = text::TextEmbedding::make(m.store, "text", m.vocab.size(), cfg.max_text_len, cfg.d_l,
                                     rng);
  m.backbone = vlm::Backbone::make(m.store, "backbone", cfg, rng);
  m.heads = heads::LatentHeads::make(m.store, cfg, rng);
  return m;
}

Model::Encoded Model::encode(ag::Graph& g, const std::vector<const float*>& frames) const {
  const int batch = static_cast<int>(frames.size());
  ag::Var patches = g.constant(vlm::patchify(frames, cfg.image_size, cfg.patch));
  Encoded e;
  e.f_a = enc_a(g, patches, batch);
  e.f_b = enc_b(g, patches, batch);
  e.f_v = projector(g, e.f_a, e.f_b);
  return e;
}

Model::Latent Model::latent(ag::Graph& g, ag::Var f_v,
                            const std::vector<text::TokenizedPrompt>& prompts,
                            std::vector<std::vector<Tensor>>* probs) const {
  const int batch = static_cast<int>(prompts.size());
  if (f_v->value.rows() != static_cast<Eigen::Index>(batch) * cfg.n_patches()) {
    throw ShapeError("latent: f_v rows " + std::to_string(f_v->value.rows()) + " for batch " +
                     std::to_string(batch));
  }
  vlm::PromptBatch pb = vlm::batch_prompts(prompts, cfg.n_patches());
  if (pb.text_len > cfg.max_text_len) {
    throw ShapeError("latent: prompt length " + std::to_string(pb.text_len) + " exceeds " +
                     std::to_string(cfg.max_text_len));
  }
  Latent out;
  ag::Var f_t = text(g, pb.ids);
  out.h_last = backbone(g, f_v, f_t, batch, pb.key_valid, probs);
  out.z = vlm::extract_latent(g, out.h_last, pb.latent_rows);
  return out;
}

Tensor Model::target_features(const std::vector<const float*>& frames) const {
  ag::Graph g;
  g.set_grad_enabled(false);
  ag::Var patches = g.constant(vlm::patchify(frames, cfg.image_size, cfg.patch));
  return target(g, patches, static_cast<int>(frames.size()))->value;
}

text::TokenizedPrompt Model::prompt(const std::string& instruction) const {
  return text::tokenize(text::Prompt{instruction, cfg.n_latent}, vocab);
}

void Model::attach_action_head(uint64_t seed, int hidden) {
  if (action_head) throw ContractError("action head already attached");
  Rng rng(derive_seed(seed, 0xAC7));
  action_head = nn::ResidualMlpHead::make(store, "head", cfg.n_latent * cfg.d_l, hidden,
                                          kActionDim, rng);
}

std::vector<nn::Linear*> Model::adapter_targets() {
  std::vector<nn::Linear*> out;
  for (auto& blk : backbone.blocks) {
    for (nn::Linear* l : {&blk.wq, &blk.wk, &blk.wv, &blk.wo}) out.push_back(l);
  }
  return out;
}

void Model::apply_adapters(const AdapterSpec& spec, uint64_t seed) {
  if (adapters) throw ContractError("adapters already applied");
  if (spec.rank < 1) throw ConfigError("adapter rank must be >= 1");
  Rng rng(derive_seed(seed, 0xADA));
  for (nn::Linear* l : adapter_targets()) l->attach_adapter(store, spec.rank, spec.alpha, rng);
  adapters = spec;
}

ag::Var Model::action_output(ag::Graph& g, ag::Var z, int batch) const {
  if (!action_head) throw ContractError("no action head attached");
  ag::Var flat = ag::reshape(g, z, batch, static_cast<Eigen::Index>(cfg.n_latent) * cfg.d_l);
  return (*action_head)(g, flat);
}

void save_checkpoint(const fs::path& dir, const Model& model, const CheckpointState& state) {
  io::json index = io::json::array();
  std::vector<std::pair<std::string, const Tensor*>> all;
  model.store.for_each([&](const Param& p) { all.emplace_back(p.name, &p.value); });
  for (const auto& [name, t] : state.tensors) {
    if (model.store.contains(name)) throw ContractError("checkpoint: state tensor shadows " + name);
    all.emplace_back(name, &t);
  }

  fs::path tmp = dir;
  tmp += ".tmp";
  std::error_code ec;
  fs::remove_all(tmp, ec);
  fs::create_directories(tmp);
  {
    std::ofstream out(tmp / "tensors.bin", std::ios::binary);
    if (!out) throw IoError("checkpoint: cannot write " + (tmp / "tensors.bin").string());
    uint64_t offset = 0;
    for (const auto& [name, t] : all) {
      const std::size_t bytes = static_cast<std::size_t>(t->size()) * sizeof(float);
      out.write(reinterpret_cast<const char*>(t->data()), static_cast<std::streamsize>(bytes));
      index.push_back({{"name", name}, {"shape", {t->rows(), t->cols()}}, {"offset", offset}});
      offset += bytes;
    }
    if (!out) throw IoError("checkpoint: write failed in " + tmp.string());
  }
  io::json manifest = {{"format", kFormat},
                       {"stage", model.stage},
                       {"step", state.step},
                       {"model", model.cfg.to_json()},
                       {"vocab", model.vocab.to_json()},
                       {"state", state.extra},
                       {"tensors", index}};
  manifest["adapters"] = model.adapters
                             ? io::json{{"rank", model.adapters->rank},
                                        {"alpha", model.adapters->alpha}}
                             : io::json();
  manifest["action_head"] =
      model.action_head ? io::json{{"hidden", model.action_head->in.out}} : io::json();
  io::write_json_atomic(tmp / "manifest.json", manifest);
  fs::remove_all(dir, ec);
  fs::rename(tmp, dir);
}

LoadedCheckpoint load_checkpoint(const fs::path& dir) {
  const io::json manifest = io::read_json(dir / "manifest.json");
  if (manifest.value("format", "") != kFormat) {
    throw IoError("checkpoint: unsupported format in " + dir.string());
  }
  LoadedCheckpoint out{Model::create(vlm::ModelConfig::from_json(manifest.at("model")), 0), {}};
  Model& m = out.model;
  m.vocab = text::Vocab::from_json(manifest.at("vocab"));
  if (m.vocab.size() != m.text.table->value.rows()) {
    throw IoError("checkpoint: vocabulary size does not match embedding table");
  }
  if (!manifest.at("action_head").is_null()) {
    m.attach_action_head(0, manifest["action_head"].at("hidden").get<int>());
  }
  if (!manifest.at("adapters").is_null()) {
    m.apply_adapters({manifest["adapters"].at("rank").get<int>(),
                      manifest["adapters"].at("alpha").get<float>()},
                     0);
  }
  m.stage = manifest.at("stage").get<std::string>();
  out.state.step = manifest.at("step").get<int64_t>();
  out.state.extra = manifest.at("state");

  std::ifstream in(dir / "tensors.bin", std::ios::binary);
  if (!in) throw IoError("checkpoint: missing tensors.bin in " + dir.string());
  in.seekg(0, std::ios::end);
  const uint64_t file_size = static_cast<uint64_t>(in.tellg());
  std::size_t loaded_params = 0;
  for (const auto& entry : manifest.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const auto rows = entry.at("shape").at(0).get<Eigen::Index>();
    const auto cols = entry.at("shape").at(1).get<Eigen::Index>();
    const auto offset = entry.at("offset").get<uint64_t>();
    const uint64_t bytes = static_cast<uint64_t>(rows * cols) * sizeof(float);
    if (offset + bytes > file_size) throw IoError("checkpoint: tensor " + name + " out of bounds");
    Tensor t(rows, cols);
    in.seekg(static_cast<std::streamoff>(offset));
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(bytes));
    if (!in) throw IoError("checkpoint: short read for " + name);
    if (Param* p = m.store.find(name)) {
      if (p->value.rows() != rows || p->value.cols() != cols) {
        throw IoError("checkpoint: shape mismatch for " + name);
      }
      p->value = std::move(t);
      ++loaded_params;
    } else {
      out.state.tensors.emplace(name, std::move(t));
    }
  }
  if (loaded_params != m.store.size()) {
    throw IoError("checkpoint: " + std::to_string(m.store.size() - loaded_params) +
                  " parameters missing from " + dir.string());
  }
  return out;
}

std::string tensor_digest(const ParamStore& store, const std::string& prefix) {
  std::string bytes;
  store.for_each([&](const Param& p) {
    if (p.name.compare(0, prefix.size(), prefix) != 0) return;
    bytes += p.name;
    bytes.append(reinterpret_cast<const char*>(p.value.data()),
                 static_cast<std::size_t>(p.value.size()) * sizeof(float));
  });
  return io::fnv1a_hex(bytes);
}

}  // namespace care
