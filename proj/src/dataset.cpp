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

#include "care/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "care/rng.hpp"

namespace care::data {

namespace fs = std::filesystem;
using io::json;

GenConfig GenConfig::from_json(const json& j) {
  io::reject_unknown_keys(j,
                          {"n_trajectories", "horizon", "image_size", "seed", "labeled_fraction",
                           "eval_fraction", "pretrain_actions"},
                          "gen config");
  GenConfig c;
  try {
    c.n_trajectories = j.value("n_trajectories", c.n_trajectories);
    c.horizon = j.value("horizon", c.horizon);
    c.image_size = j.value("image_size", c.image_size);
    c.seed = j.value("seed", c.seed);
    c.labeled_fraction = j.value("labeled_fraction", c.labeled_fraction);
    c.eval_fraction = j.value("eval_fraction", c.eval_fraction);
    c.pretrain_actions = j.value("pretrain_actions", c.pretrain_actions);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("gen config: ") + e.what());
  }
  return c;
}

json GenConfig::to_json() const {
  return {{"n_trajectories", n_trajectories}, {"horizon", horizon},
          {"image_size", image_size},         {"seed", seed},
          {"labeled_fraction", labeled_fraction}, {"eval_fraction", eval_fraction},
          {"pretrain_actions", pretrain_actions}};
}

world::WorldConfig GenConfig::world() const {
  world::WorldConfig w;
  w.image_size = image_size;
  w.horizon = horizon;
  return w;
}

json DatasetManifest::to_json() const {
  json s = json::object();
  for (const auto& [k, v] : splits) s[k] = v;
  return {{"n_trajectories", n_trajectories}, {"horizon", horizon},
          {"image_size", image_size},         {"splits", s},
          {"generator_seed", generator_seed}, {"format_version", format_version}};
}

DatasetManifest DatasetManifest::from_json(const json& j) {
  io::reject_unknown_keys(j,
                          {"n_trajectories", "horizon", "image_size", "splits",
                           "generator_seed", "format_version"},
                          "dataset manifest");
  DatasetManifest m;
  try {
    m.n_trajectories = j.at("n_trajectories").get<int>();
    m.horizon = j.at("horizon").get<int>();
    m.image_size = j.at("image_size").get<int>();
    m.generator_seed = j.at("generator_seed").get<uint64_t>();
    m.format_version = j.at("format_version").get<std::string>();
    for (auto it = j.at("splits").begin(); it != j.at("splits").end(); ++it) {
      m.splits[it.key()] = it.value().get<std::vector<std::string>>();
    }
  } catch (const json::exception& e) {
    throw IoError(std::string("dataset manifest: ") + e.what());
  }
  if (m.format_version != kFormatVersion) {
    throw IoError("unsupported dataset format " + m.format_version);
  }
  return m;
}

int labeled_count(const GenConfig& cfg) {
  return static_cast<int>(std::lround(cfg.labeled_fraction * cfg.n_trajectories));
}

namespace {

std::string traj_name(int idx) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "traj_%05d", idx);
  return buf;
}

void validate(const GenConfig& cfg) {
  if (!(cfg.labeled_fraction > 0.0 && cfg.labeled_fraction <= 1.0)) {
    throw ConfigError("labeled_fraction must lie in (0, 1], got " +
                      std::to_string(cfg.labeled_fraction));
  }
  if (cfg.eval_fraction < 0.0 || cfg.eval_fraction > 1.0) {
    throw ConfigError("eval_fraction must lie in [0, 1]");
  }
  if (cfg.n_trajectories < 0) throw ConfigError("n_trajectories must be >= 0");
  if (cfg.horizon < 2) throw ConfigError("horizon must be >= 2");
  if (cfg.image_size <= 0 || cfg.image_size % world::kKeypointGrid != 0) {
    throw ConfigError("image_size must be a positive multiple of 16");
  }
  const int n_lab = labeled_count(cfg);
  const int n_eval = static_cast<int>(std::lround(cfg.eval_fraction * cfg.n_trajectories));
  if (n_lab + n_eval > cfg.n_trajectories) {
    throw ConfigError("labeled_fraction + eval_fraction exceed the dataset");
  }
}

void write_trajectory(const fs::path& dir, const world::Demonstration& demo,
                      const std::string& split, bool with_actions, const world::WorldConfig& w) {
  const int S = w.image_size;
  const int T = static_cast<int>(demo.states.size());
  std::vector<float> frames;
  frames.reserve(static_cast<std::size_t>(T) * S * S * 3);
  for (const auto& s : demo.states) {
    const world::Frame f = world::render(s, w);
    frames.insert(frames.end(), f.pixels.begin(), f.pixels.end());
  }
  std::vector<float> tracks;
  tracks.reserve(static_cast<std::size_t>(T) * world::kNumKeypoints * 2);
  world::KeypointSet k = world::keypoint_grid(S, demo.states.front(), w);
  for (int t = 0; t < T; ++t) {
    if (t > 0) k = world::track_keypoints(demo.states[t - 1], demo.states[t], k, S);
    tracks.insert(tracks.end(), k.coords.data(), k.coords.data() + k.coords.size());
  }
  fs::create_directories(dir);
  io::write_f32(dir / "frames.bin",
                {static_cast<uint32_t>(T), static_cast<uint32_t>(S), static_cast<uint32_t>(S), 3u},
                frames.data(), frames.size());
  io::write_f32(dir / "tracks.bin",
                {static_cast<uint32_t>(T), static_cast<uint32_t>(world::kNumKeypoints), 2u},
                tracks.data(), tracks.size());
  if (with_actions) {
    std::vector<float> acts;
    for (const auto& a : demo.actions) {
      acts.push_back(a.dx);
      acts.push_back(a.dy);
      acts.push_back(a.grip);
    }
    io::write_f32(dir / "actions.bin", {static_cast<uint32_t>(T - 1), 3u}, acts.data(),
                  acts.size());
  }
  json meta = {{"instruction", demo.init.instruction},
               {"task_label", demo.init.task_label},
               {"seed", demo.seed},
               {"split", split},
               {"regenerations", demo.regenerations}};
  io::write_json_atomic(dir / "meta.json", meta);
}

}  // namespace

DatasetManifest generate_dataset(const GenConfig& cfg, const fs::path& root) {
  validate(cfg);
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec || !fs::is_directory(root)) {
    throw IoError("cannot create dataset directory " + root.string());
  }
  // Stale output from an earlier run would break byte-identity of the tree.
  for (const auto& entry : fs::directory_iterator(root)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("traj_", 0) == 0 || name == "manifest.json") fs::remove_all(entry.path());
  }

  const int n = cfg.n_trajectories;
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(derive_seed(cfg.seed, 0xC0FFEEu));
  std::shuffle(order.begin(), order.end(), split_rng);
  const int n_lab = labeled_count(cfg);
  const int n_eval = static_cast<int>(std::lround(cfg.eval_fraction * n));
  std::vector<std::string> split_of(static_cast<std::size_t>(n), kSplitPretrain);
  for (int i = 0; i < n_lab; ++i) split_of[order[i]] = kSplitFinetune;
  for (int i = n_lab; i < n_lab + n_eval; ++i) split_of[order[i]] = kSplitEval;

  DatasetManifest m;
  m.n_trajectories = n;
  m.horizon = cfg.horizon;
  m.image_size = cfg.image_size;
  m.generator_seed = cfg.seed;
  m.splits[kSplitPretrain] = {};
  m.splits[kSplitFinetune] = {};
  m.splits[kSplitEval] = {};

  const world::WorldConfig w = cfg.world();
  for (int idx = 0; idx < n; ++idx) {
    // Round-robin labels give every (template, target) pair coverage.
    const int label = idx % world::kNumLabels;
    const uint64_t seed = derive_seed(cfg.seed, static_cast<uint64_t>(idx));
    const world::Demonstration demo = world::scripted_demonstration(
        seed, label / world::kNumCombos, label % world::kNumCombos, w);
    const std::string& split = split_of[idx];
    const bool with_actions = split != kSplitPretrain || cfg.pretrain_actions;
    const std::string name = traj_name(idx);
    write_trajectory(root / name, demo, split, with_actions, w);
    m.splits[split].push_back(name);
  }
  io::write_json_atomic(root / "manifest.json", m.to_json());
  return m;
}

Trajectory load_trajectory(const fs::path& root, const std::string& name) {
  const fs::path dir = root / name;
  Trajectory tr;
  tr.name = name;
  const json meta = io::read_json(dir / "meta.json");
  try {
    tr.instruction = meta.at("instruction").get<std::string>();
    tr.task_label = meta.at("task_label").get<int>();
    tr.seed = meta.at("seed").get<uint64_t>();
    tr.split = meta.at("split").get<std::string>();
  } catch (const json::exception& e) {
    throw IoError("bad meta.json in " + dir.string() + ": " + e.what());
  }
  std::vector<uint32_t> dims;
  tr.frames = io::read_f32(dir / "frames.bin", 4, &dims);
  if (dims[1] != dims[2] || dims[3] != 3) throw IoError("bad frame header in " + dir.string());
  tr.length = static_cast<int>(dims[0]);
  tr.image_size = static_cast<int>(dims[1]);
  tr.tracks = io::read_f32(dir / "tracks.bin", 3, &dims);
  if (static_cast<int>(dims[0]) != tr.length || dims[1] != world::kNumKeypoints || dims[2] != 2) {
    throw IoError("bad track header in " + dir.string());
  }
  if (fs::exists(dir / "actions.bin")) {
    const std::vector<float> a = io::read_f32(dir / "actions.bin", 2, &dims);
    if (static_cast<int>(dims[0]) != tr.length - 1 || dims[1] != 3) {
      throw IoError("bad action header in " + dir.string());
    }
    std::vector<world::Action> acts;
    for (std::size_t i = 0; i < a.size(); i += 3) acts.push_back({a[i], a[i + 1], a[i + 2]});
    tr.actions = std::move(acts);
  }
  return tr;
}

Dataset Dataset::open(const fs::path& root) {
  if (!fs::exists(root / "manifest.json")) {
    throw IoError("no dataset manifest under " + root.string());
  }
  Dataset d;
  d.root_ = root;
  d.manifest_ = DatasetManifest::from_json(io::read_json(root / "manifest.json"));
  return d;
}

const std::vector<Trajectory>& Dataset::split(const std::string& name) const {
  auto it = cache_.find(name);
  if (it != cache_.end()) return it->second;
  auto sp = manifest_.splits.find(name);
  if (sp == manifest_.splits.end()) throw InputError("dataset has no split '" + name + "'");
  std::vector<Trajectory> out;
  out.reserve(sp->second.size());
  for (const auto& n : sp->second) out.push_back(load_trajectory(root_, n));
  return cache_.emplace(name, std::move(out)).first->second;
}

}  // namespace care::data
