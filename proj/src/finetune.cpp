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

#include "care/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "care/rng.hpp"

namespace care::finetune {

namespace fs = std::filesystem;

namespace {

constexpr uint64_t kHeadStream = 2;
constexpr uint64_t kAdapterStream = 3;
constexpr uint64_t kBatchStream = 0xF17E;
constexpr uint64_t kScratchStream = 1;

}  // namespace

void FinetuneConfig::validate() const {
  if (steps < 0) throw ConfigError("finetune: steps must be >= 0");
  if (batch_size < 1) throw ConfigError("finetune: batch_size must be >= 1");
  if (!(lr >= 0.0f) || !std::isfinite(lr)) throw ConfigError("finetune: lr must be >= 0");
  if (rank < 1) throw ConfigError("finetune: rank must be >= 1");
  if (!(alpha > 0.0f)) throw ConfigError("finetune: alpha must be > 0");
  if (head_hidden < 1) throw ConfigError("finetune: head_hidden must be >= 1");
  if (!(grad_clip >= 0.0f)) throw ConfigError("finetune: grad_clip must be >= 0");
  model.validate();
}

io::json FinetuneConfig::to_json() const {
  return {{"steps", steps},
          {"batch_size", batch_size},
          {"lr", lr},
          {"rank", rank},
          {"alpha", alpha},
          {"head_hidden", head_hidden},
          {"seed", seed},
          {"grad_clip", grad_clip},
          {"from_scratch", from_scratch},
          {"model", model.to_json()},
          {"data_root", data_root},
          {"pretrain_checkpoint", pretrain_checkpoint}};
}

FinetuneConfig FinetuneConfig::from_json(const io::json& j) {
  io::reject_unknown_keys(j,
                          {"steps", "batch_size", "lr", "rank", "alpha", "head_hidden", "seed",
                           "grad_clip", "from_scratch", "model", "data_root",
                           "pretrain_checkpoint"},
                          "finetune config");
  FinetuneConfig c;
  try {
    c.steps = j.value("steps", c.steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.rank = j.value("rank", c.rank);
    c.alpha = j.value("alpha", c.alpha);
    c.head_hidden = j.value("head_hidden", c.head_hidden);
    c.seed = j.value("seed", c.seed);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.from_scratch = j.value("from_scratch", c.from_scratch);
    if (j.contains("model")) c.model = vlm::ModelConfig::from_json(j.at("model"));
    c.data_root = j.value("data_root", c.data_root);
    c.pretrain_checkpoint = j.value("pretrain_checkpoint", c.pretrain_checkpoint);
  } catch (const io::json::exception& e) {
    throw ConfigError(std::string("finetune config: ") + e.what());
  }
  c.validate();
  return c;
}

void prepare_for_finetune(Model& model, const FinetuneConfig& cfg) {
  model.attach_action_head(derive_seed(cfg.seed, kHeadStream), cfg.head_hidden);
  model.apply_adapters({cfg.rank, cfg.alpha}, derive_seed(cfg.seed, kAdapterStream));
  model.store.set_trainable("", false);
  model.store.set_trainable("adapters.", true);
  model.store.set_trainable("head.", true);
  model.stage = "finetuned";
}

std::size_t adapter_parameter_count(const Model& model) {
  std::size_t n = 0;
  model.store.for_each([&](const Param& p) {
    if (p.name.rfind("adapters.", 0) == 0) n += static_cast<std::size_t>(p.value.size());
  });
  return n;
}

FeatureCache::FeatureCache(const Model& model, const std::vector<data::Trajectory>& split) {
  const int n_p = model.cfg.n_patches();
  for (const auto& tr : split) {
    if (tr.image_size != model.cfg.image_size) {
      throw ConfigError("trajectory " + tr.name + " image size does not match the model");
    }
    prompts_.push_back(model.prompt(tr.instruction));
    std::vector<const float*> frames;
    for (int t = 0; t < tr.length; ++t) frames.push_back(tr.frame(t));
    ag::Graph g;
    g.set_grad_enabled(false);
    const Tensor f_v = model.encode(g, frames).f_v->value;
    std::vector<Tensor> per_t;
    for (int t = 0; t < tr.length; ++t) per_t.push_back(f_v.middleRows(t * n_p, n_p));
    features_.push_back(std::move(per_t));
  }
}

const Tensor& FeatureCache::f_v(int traj, int t) const {
  return features_.at(static_cast<std::size_t>(traj)).at(static_cast<std::size_t>(t));
}

ActionBatch sample_action_batch(const std::vector<data::Trajectory>& split, int batch_size,
                                Rng& rng) {
  std::vector<int64_t> cum(split.size() + 1, 0);
  for (std::size_t i = 0; i < split.size(); ++i) {
    if (!split[i].actions) {
      throw ContractError("finetune: trajectory " + split[i].name + " has no actions");
    }
    cum[i + 1] = cum[i] + static_cast<int64_t>(split[i].actions->size());
  }
  if (cum.back() == 0) throw InputError("finetune: no labeled transitions");
  std::uniform_int_distribution<int64_t> pick(0, cum.back() - 1);
  ActionBatch b;
  b.actions.resize(batch_size, kActionDim);
  for (int i = 0; i < batch_size; ++i) {
    const int64_t r = pick(rng);
    const int traj = static_cast<int>(std::upper_bound(cum.begin(), cum.end(), r) - cum.begin()) - 1;
    const int t = static_cast<int>(r - cum[traj]);
    const world::Action& a = (*split[traj].actions)[t];
    b.actions.row(i) << a.dx, a.dy, a.grip;
    b.index.emplace_back(traj, t);
  }
  return b;
}

ag::Var predict_actions(ag::Graph& g, const Model& model, const FeatureCache& cache,
                        const std::vector<std::pair<int, int>>& index) {
  const int n_p = model.cfg.n_patches();
  Tensor f_v(static_cast<Eigen::Index>(index.size()) * n_p, model.cfg.d_l);
  std::vector<text::TokenizedPrompt> prompts;
  for (std::size_t i = 0; i < index.size(); ++i) {
    f_v.middleRows(static_cast<Eigen::Index>(i) * n_p, n_p) =
        cache.f_v(index[i].first, index[i].second);
    prompts.push_back(cache.prompt(index[i].first));
  }
  Model::Latent lat = model.latent(g, g.constant(std::move(f_v)), prompts);
  return model.action_output(g, lat.z, static_cast<int>(index.size()));
}

io::json FinetuneMetrics::to_json() const {
  return {{"step", step}, {"L1", loss}, {"grad_norm", grad_norm}};
}

FinetuneMetrics finetune_step(Model& model, Adam& opt, const FeatureCache& cache,
                              const ActionBatch& batch, const FinetuneConfig& cfg) {
  model.store.zero_grad();
  ag::Graph g;
  ag::Var loss = ag::l1(g, predict_actions(g, model, cache, batch.index), batch.actions);
  FinetuneMetrics m;
  m.loss = loss->value(0, 0);
  if (!std::isfinite(m.loss)) throw TrainingError("finetune: non-finite loss");
  g.backward(loss);
  g.flush_param_grads();
  m.grad_norm = cfg.grad_clip > 0.0f ? clip_grad_norm(model.store, cfg.grad_clip)
                                     : global_grad_norm(model.store);
  opt.step(model.store);
  return m;
}

double evaluate_l1(const Model& model, const FeatureCache& cache,
                   const std::vector<data::Trajectory>& split) {
  constexpr std::size_t kChunk = 64;
  std::vector<std::pair<int, int>> all;
  std::vector<world::Action> targets;
  for (std::size_t i = 0; i < split.size(); ++i) {
    if (!split[i].actions) throw ContractError("evaluate_l1: " + split[i].name + " lacks actions");
    for (std::size_t t = 0; t < split[i].actions->size(); ++t) {
      all.emplace_back(static_cast<int>(i), static_cast<int>(t));
      targets.push_back((*split[i].actions)[t]);
    }
  }
  if (all.empty()) throw InputError("evaluate_l1: no labeled transitions");
  double total = 0.0;
  for (std::size_t s = 0; s < all.size(); s += kChunk) {
    const std::size_t e = std::min(all.size(), s + kChunk);
    std::vector<std::pair<int, int>> idx(all.begin() + static_cast<long>(s),
                                         all.begin() + static_cast<long>(e));
    ag::Graph g;
    g.set_grad_enabled(false);
    const Tensor pred = predict_actions(g, model, cache, idx)->value;
    for (std::size_t i = s; i < e; ++i) {
      const auto r = static_cast<Eigen::Index>(i - s);
      total += std::abs(pred(r, 0) - targets[i].dx) + std::abs(pred(r, 1) - targets[i].dy) +
               std::abs(pred(r, 2) - targets[i].grip);
    }
  }
  return total / (static_cast<double>(all.size()) * kActionDim);
}

FinetuneResult run_finetune(const FinetuneConfig& cfg, const fs::path& data_root,
                            const fs::path& out_dir) {
  cfg.validate();
  const data::Dataset ds = data::Dataset::open(data_root);
  const auto& train = ds.split(data::kSplitFinetune);
  const auto& val = ds.split(data::kSplitEval);
  if (train.empty()) throw InputError("finetune split is empty");

  std::optional<Model> model;
  if (cfg.from_scratch) {
    model.emplace(Model::create(cfg.model, derive_seed(cfg.seed, kScratchStream)));
  } else {
    if (cfg.pretrain_checkpoint.empty()) {
      throw ConfigError("finetune: pretrain_checkpoint is required unless from_scratch is set");
    }
    LoadedCheckpoint ck = load_checkpoint(cfg.pretrain_checkpoint);
    if (ck.model.stage != "pretrain") {
      throw ConfigError("finetune: checkpoint stage is '" + ck.model.stage + "', expected pretrain");
    }
    model.emplace(std::move(ck.model));
  }
  if (ds.manifest().image_size != model->cfg.image_size) {
    throw ConfigError("finetune: dataset image size does not match the model");
  }
  prepare_for_finetune(*model, cfg);

  const FeatureCache train_cache(*model, train);
  std::optional<FeatureCache> val_cache;
  if (!val.empty()) val_cache.emplace(*model, val);

  fs::create_directories(out_dir);
  io::write_json_atomic(out_dir / "config.json", cfg.to_json());
  FinetuneResult res;
  res.val_l1_start = val_cache ? evaluate_l1(*model, *val_cache, val) : 0.0;

  Adam opt(AdamConfig{cfg.lr});
  Rng rng(derive_seed(cfg.seed, kBatchStream));
  std::string log;
  for (int64_t step = 1; step <= cfg.steps; ++step) {
    const ActionBatch batch = sample_action_batch(train, cfg.batch_size, rng);
    FinetuneMetrics m = finetune_step(*model, opt, train_cache, batch, cfg);
    m.step = step;
    log += m.to_json().dump() + "\n";
  }
  io::write_text_atomic(out_dir / "metrics.ndjson", log);
  res.val_l1_end = val_cache ? evaluate_l1(*model, *val_cache, val) : 0.0;

  res.checkpoint = out_dir / "final";
  CheckpointState st;
  st.step = cfg.steps;
  st.extra = {{"finetune", cfg.to_json()}};
  save_checkpoint(res.checkpoint, *model, st);
  io::write_json_atomic(out_dir / "summary.json",
                        {{"val_l1_start", res.val_l1_start},
                         {"val_l1_end", res.val_l1_end},
                         {"train_trajectories", train.size()},
                         {"adapter_params", adapter_parameter_count(*model)}});
  return res;
}

world::Action act(const Model& model, const world::Frame& frame, const std::string& instruction) {
  if (frame.height != model.cfg.image_size || frame.width != model.cfg.image_size) {
    throw ShapeError("act: frame size does not match the model");
  }
  const text::TokenizedPrompt prompt = model.prompt(instruction);
  ag::Graph g;
  g.set_grad_enabled(false);
  Model::Encoded enc = model.encode(g, {frame.pixels.data()});
  Model::Latent lat = model.latent(g, enc.f_v, {prompt});
  const Tensor out = model.action_output(g, lat.z, 1)->value;
  world::Action a;
  // Non-finite outputs degrade to a no-op action instead of propagating.
  auto safe = [](float v) { return std::isfinite(v) ? std::clamp(v, -1.0f, 1.0f) : 0.0f; };
  a.dx = safe(out(0, 0));
  a.dy = safe(out(0, 1));
  a.grip = out(0, 2) > 0.0f ? 1.0f : -1.0f;
  return a;
}

}  // namespace care::finetune
