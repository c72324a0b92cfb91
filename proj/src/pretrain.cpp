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

#include "care/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "care/rng.hpp"

namespace care::pretrain {

namespace fs = std::filesystem;

namespace {

constexpr uint64_t kBatchStream = 0xBA7C;
constexpr uint64_t kInitStream = 1;

bool frame_active(Objective o) { return o != Objective::kPointOnly; }
bool point_active(Objective o) { return o != Objective::kFrameOnly; }

std::string rng_to_string(const Rng& rng) {
  std::ostringstream ss;
  ss << rng;
  return ss.str();
}

Rng rng_from_string(const std::string& s) {
  Rng rng;
  std::istringstream ss(s);
  ss >> rng;
  if (!ss) throw IoError("checkpoint: corrupt RNG state");
  return rng;
}

// Config fields that may differ between an interrupted run and its resume.
io::json resume_key(const PretrainConfig& cfg) {
  io::json j = cfg.to_json();
  j.erase("steps");
  j.erase("data_root");
  return j;
}

std::string step_dir_name(int64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%08lld", static_cast<long long>(step));
  return buf;
}

std::optional<fs::path> latest_checkpoint(const fs::path& dir, int64_t max_step) {
  if (!fs::is_directory(dir)) return std::nullopt;
  std::optional<fs::path> best;
  int64_t best_step = -1;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("step_", 0) != 0 || name.size() != 13) continue;
    if (!fs::exists(e.path() / "manifest.json")) continue;
    const int64_t s = std::stoll(name.substr(5));
    if (s <= max_step && s > best_step) {
      best_step = s;
      best = e.path();
    }
  }
  return best;
}

CheckpointState make_state(const Adam& opt, const Rng& rng, int64_t step,
                           const PretrainConfig& cfg) {
  CheckpointState st;
  st.step = step;
  st.extra = {{"rng", rng_to_string(rng)},
              {"adam_t", opt.steps_taken()},
              {"pretrain", cfg.to_json()}};
  for (auto& [name, t] : opt.export_state()) st.tensors.emplace("opt." + name, std::move(t));
  return st;
}

// Keeps metrics records up to `step`, dropping anything a crashed run wrote
// after its last checkpoint.
void truncate_log(const fs::path& path, int64_t step) {
  std::string kept;
  if (fs::exists(path)) {
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const io::json rec = io::json::parse(line, nullptr, false);
      if (rec.is_discarded() || !rec.contains("step")) break;
      if (rec["step"].get<int64_t>() > step) break;
      kept += line + "\n";
    }
  }
  io::write_text_atomic(path, kept);
}

}  // namespace

const char* objective_name(Objective o) {
  switch (o) {
    case Objective::kMulti:
      return "multi";
    case Objective::kFrameOnly:
      return "frame_only";
    case Objective::kPointOnly:
      return "point_only";
  }
  return "?";
}

Objective parse_objective(const std::string& s) {
  if (s == "multi") return Objective::kMulti;
  if (s == "frame_only") return Objective::kFrameOnly;
  if (s == "point_only") return Objective::kPointOnly;
  throw ConfigError("objective must be one of multi, frame_only, point_only (got '" + s + "')");
}

void PretrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("pretrain: batch_size must be >= 1");
  if (steps < 0) throw ConfigError("pretrain: steps must be >= 0");
  if (!(lr >= 0.0f) || !std::isfinite(lr)) throw ConfigError("pretrain: lr must be >= 0");
  if (checkpoint_every < 0) throw ConfigError("pretrain: checkpoint_every must be >= 0");
  if (!(grad_clip >= 0.0f)) throw ConfigError("pretrain: grad_clip must be >= 0");
  if (zero_frame_context && objective == Objective::kPointOnly) {
    throw ConfigError("pretrain: zero_frame_context needs a frame objective");
  }
  model.validate();
}

io::json PretrainConfig::to_json() const {
  return {{"batch_size", batch_size},
          {"steps", steps},
          {"lr", lr},
          {"objective", objective_name(objective)},
          {"seed", seed},
          {"checkpoint_every", checkpoint_every},
          {"grad_clip", grad_clip},
          {"zero_frame_context", zero_frame_context},
          {"model", model.to_json()},
          {"data_root", data_root}};
}

PretrainConfig PretrainConfig::from_json(const io::json& j) {
  io::reject_unknown_keys(j,
                          {"batch_size", "steps", "lr", "objective", "seed", "checkpoint_every",
                           "grad_clip", "zero_frame_context", "model", "data_root"},
                          "pretrain config");
  PretrainConfig c;
  try {
    c.batch_size = j.value("batch_size", c.batch_size);
    c.steps = j.value("steps", c.steps);
    c.lr = j.value("lr", c.lr);
    c.objective = parse_objective(j.value("objective", std::string("multi")));
    c.seed = j.value("seed", c.seed);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.zero_frame_context = j.value("zero_frame_context", c.zero_frame_context);
    if (j.contains("model")) c.model = vlm::ModelConfig::from_json(j.at("model"));
    c.data_root = j.value("data_root", c.data_root);
  } catch (const io::json::exception& e) {
    throw ConfigError(std::string("pretrain config: ") + e.what());
  }
  c.validate();
  return c;
}

TransitionBatch sample_batch(const std::vector<data::Trajectory>& split, int batch_size,
                             Rng& rng) {
  std::vector<int64_t> cum(split.size() + 1, 0);
  for (std::size_t i = 0; i < split.size(); ++i) {
    cum[i + 1] = cum[i] + std::max(0, split[i].length - 1);
  }
  if (cum.back() == 0) throw InputError("sample_batch: split has no transitions");
  std::uniform_int_distribution<int64_t> pick(0, cum.back() - 1);
  TransitionBatch b;
  b.image_size = split.front().image_size;
  b.k_t.resize(static_cast<Eigen::Index>(batch_size) * world::kNumKeypoints, 2);
  b.k_next.resize(b.k_t.rows(), 2);
  for (int i = 0; i < batch_size; ++i) {
    const int64_t r = pick(rng);
    const auto it = std::upper_bound(cum.begin(), cum.end(), r);
    const int traj = static_cast<int>(it - cum.begin()) - 1;
    const int t = static_cast<int>(r - cum[traj]);
    const data::Trajectory& tr = split[traj];
    b.frames_t.push_back(tr.frame(t));
    b.frames_next.push_back(tr.frame(t + 1));
    b.prompts.push_back(tr.instruction);
    b.index.emplace_back(traj, t);
    const Eigen::Index row = static_cast<Eigen::Index>(i) * world::kNumKeypoints;
    std::copy(tr.track(t), tr.track(t) + world::kNumKeypoints * 2, b.k_t.row(row).data());
    std::copy(tr.track(t + 1), tr.track(t + 1) + world::kNumKeypoints * 2,
              b.k_next.row(row).data());
  }
  return b;
}

io::json StepMetrics::to_json() const {
  io::json j = {{"step", step}};
  j["L"] = loss;
  j["L_f"] = loss_frame ? io::json(*loss_frame) : io::json();
  j["L_p"] = loss_point ? io::json(*loss_point) : io::json();
  j["s1"] = s1;
  j["s2"] = s2;
  j["grad_norm"] = grad_norm;
  j["feat_std"] = feat_std;
  return j;
}

Losses compute_losses(ag::Graph& g, const Model& model, const TransitionBatch& batch,
                      Objective objective, bool zero_frame_context) {
  const int B = batch.size();
  if (batch.image_size != model.cfg.image_size) {
    throw ConfigError("batch image size " + std::to_string(batch.image_size) +
                      " does not match model image size " +
                      std::to_string(model.cfg.image_size));
  }
  std::vector<text::TokenizedPrompt> prompts;
  prompts.reserve(static_cast<std::size_t>(B));
  for (const auto& p : batch.prompts) prompts.push_back(model.prompt(p));

  Model::Encoded enc = model.encode(g, batch.frames_t);
  Model::Latent lat = model.latent(g, enc.f_v, prompts);

  Losses out;
  const Tensor target = model.target_features(batch.frames_next);
  out.feat_std = vlm::feature_std(target, B);
  if (frame_active(objective)) {
    ag::Var f_hat = model.heads.frame_branch(g, lat.z, enc.f_v, B, zero_frame_context);
    out.frame = heads::frame_loss(g, f_hat, target);
  }
  if (point_active(objective)) {
    const float inv = 1.0f / static_cast<float>(model.cfg.image_size);
    const Tensor k_t_norm = batch.k_t * inv;
    ag::Var k_hat = model.heads.point_branch(g, lat.z, k_t_norm, B);
    out.point = ag::mse(g, k_hat, Tensor(batch.k_next * inv));
  }
  switch (objective) {
    case Objective::kMulti:
      out.total = ag::uncertainty_weighted(g, out.frame, out.point, g.param(*model.heads.s1),
                                           g.param(*model.heads.s2));
      break;
    case Objective::kFrameOnly:
      out.total = out.frame;
      break;
    case Objective::kPointOnly:
      out.total = out.point;
      break;
  }
  return out;
}

void configure_trainable(Model& model, Objective objective) {
  model.store.set_trainable("heads.", true);
  if (objective != Objective::kMulti) model.store.set_trainable("heads.uwl.", false);
  if (!frame_active(objective)) model.store.set_trainable("heads.frame.", false);
  if (!point_active(objective)) model.store.set_trainable("heads.point.", false);
}

StepMetrics pretrain_step(Model& model, Adam& opt, const TransitionBatch& batch,
                          const PretrainConfig& cfg) {
  model.store.zero_grad();
  ag::Graph g;
  Losses l = compute_losses(g, model, batch, cfg.objective, cfg.zero_frame_context);
  StepMetrics m;
  m.loss = l.total->value(0, 0);
  if (l.frame) m.loss_frame = l.frame->value(0, 0);
  if (l.point) m.loss_point = l.point->value(0, 0);
  m.feat_std = l.feat_std;
  if (!std::isfinite(m.loss)) {
    throw TrainingError("pretrain: non-finite loss (L_f=" +
                        std::to_string(m.loss_frame.value_or(0.0)) +
                        ", L_p=" + std::to_string(m.loss_point.value_or(0.0)) + ")");
  }
  if (l.frame && m.feat_std < kMinFeatureStd) {
    throw TrainingError("pretrain: target features collapsed (mean per-dimension std " +
                        std::to_string(m.feat_std) + " < 1e-4)");
  }
  g.backward(l.total);
  g.flush_param_grads();
  m.grad_norm = cfg.grad_clip > 0.0f ? clip_grad_norm(model.store, cfg.grad_clip)
                                     : global_grad_norm(model.store);
  if (!std::isfinite(m.grad_norm)) throw TrainingError("pretrain: non-finite gradient norm");
  opt.step(model.store);
  if (model.cfg.target_mode == vlm::TargetMode::kEma) {
    vlm::ema_update(model.store, "vision.a.", "target.a.", model.cfg.ema_momentum);
  }
  m.s1 = model.heads.s1->value(0, 0);
  m.s2 = model.heads.s2->value(0, 0);
  return m;
}

fs::path run_pretraining(const PretrainConfig& cfg, const fs::path& data_root,
                         const fs::path& out_dir, const RunHooks& hooks) {
  cfg.validate();
  const data::Dataset ds = data::Dataset::open(data_root);
  if (ds.manifest().image_size != cfg.model.image_size) {
    throw ConfigError("dataset image_size " + std::to_string(ds.manifest().image_size) +
                      " does not match model image_size " +
                      std::to_string(cfg.model.image_size));
  }
  const auto& split = ds.split(data::kSplitPretrain);
  if (split.empty() && cfg.steps > 0) throw InputError("pretrain split is empty");

  fs::create_directories(out_dir);
  const fs::path final_dir = out_dir / "final";
  const fs::path ckpt_dir = out_dir / "checkpoints";
  const fs::path log_path = out_dir / "metrics.ndjson";

  if (fs::exists(final_dir / "manifest.json")) {
    const io::json man = io::read_json(final_dir / "manifest.json");
    const io::json& saved = man.at("state").at("pretrain");
    if (man.at("step").get<int64_t>() == cfg.steps &&
        resume_key(PretrainConfig::from_json(saved)) == resume_key(cfg)) {
      return final_dir;
    }
  }
  io::write_json_atomic(out_dir / "config.json", cfg.to_json());

  std::optional<Model> model;
  Adam opt(AdamConfig{cfg.lr});
  Rng rng(derive_seed(cfg.seed, kBatchStream));
  int64_t step = 0;
  if (auto latest = latest_checkpoint(ckpt_dir, cfg.steps)) {
    LoadedCheckpoint ck = load_checkpoint(*latest);
    if (resume_key(PretrainConfig::from_json(ck.state.extra.at("pretrain"))) != resume_key(cfg)) {
      throw ConfigError("cannot resume " + out_dir.string() + ": configuration differs");
    }
    std::vector<std::pair<std::string, Tensor>> opt_state;
    for (auto& [name, t] : ck.state.tensors) {
      if (name.rfind("opt.", 0) == 0) opt_state.emplace_back(name.substr(4), std::move(t));
    }
    opt.import_state(ck.state.extra.at("adam_t").get<int64_t>(), opt_state);
    rng = rng_from_string(ck.state.extra.at("rng").get<std::string>());
    step = ck.state.step;
    model.emplace(std::move(ck.model));
  } else {
    model.emplace(Model::create(cfg.model, derive_seed(cfg.seed, kInitStream)));
  }
  configure_trainable(*model, cfg.objective);
  truncate_log(log_path, step);

  std::ofstream log(log_path, std::ios::app);
  if (!log) throw IoError("cannot open " + log_path.string());
  while (step < cfg.steps) {
    if (hooks.stop_after >= 0 && step >= hooks.stop_after) return {};
    const TransitionBatch batch = sample_batch(split, cfg.batch_size, rng);
    StepMetrics m = pretrain_step(*model, opt, batch, cfg);
    m.step = ++step;
    log << m.to_json().dump() << "\n";
    log.flush();
    if (hooks.on_step) hooks.on_step(m);
    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step < cfg.steps) {
      save_checkpoint(ckpt_dir / step_dir_name(step), *model, make_state(opt, rng, step, cfg));
    }
  }
  if (!log) throw IoError("write failed on " + log_path.string());
  model->stage = "pretrain";
  save_checkpoint(final_dir, *model, make_state(opt, rng, step, cfg));
  return final_dir;
}

}  // namespace care::pretrain
