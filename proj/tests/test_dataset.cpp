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

#include <gtest/gtest.h>

#include <fstream>
#include <set>
#include <sstream>

#include "care/dataset.hpp"
#include "test_util.hpp"

namespace care::data {
namespace {

namespace fs = std::filesystem;
using testing::TempDir;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

GenConfig small_config(int n) {
  GenConfig c;
  c.n_trajectories = n;
  c.image_size = 32;
  c.seed = 17;
  c.labeled_fraction = 0.1;
  c.eval_fraction = 0.1;
  return c;
}

TEST(Dataset, LabeledCountMatchesFraction) {
  GenConfig c;
  c.n_trajectories = 2000;
  c.labeled_fraction = 0.03;
  EXPECT_EQ(labeled_count(c), 60);
}

TEST(Dataset, RejectsBadConfig) {
  TempDir dir("ds_bad");
  GenConfig c = small_config(4);
  c.labeled_fraction = 0.0;
  EXPECT_THROW(generate_dataset(c, dir.path()), ConfigError);
  c.labeled_fraction = 1.5;
  EXPECT_THROW(generate_dataset(c, dir.path()), ConfigError);
  c = small_config(4);
  c.image_size = 40;
  EXPECT_THROW(generate_dataset(c, dir.path()), ConfigError);
  EXPECT_THROW(GenConfig::from_json({{"n_trajectories", 3}, {"colour", 1}}), ConfigError);
}

TEST(Dataset, EmptyDatasetHasValidManifest) {
  TempDir dir("ds_empty");
  DatasetManifest m = generate_dataset(small_config(0), dir.path());
  EXPECT_EQ(m.n_trajectories, 0);
  std::size_t entries = 0;
  for (const auto& e : fs::directory_iterator(dir.path())) {
    ++entries;
    EXPECT_EQ(e.path().filename(), "manifest.json");
  }
  EXPECT_EQ(entries, 1u);
  Dataset ds = Dataset::open(dir.path());
  EXPECT_TRUE(ds.split(kSplitPretrain).empty());
}

TEST(Dataset, ByteIdenticalAcrossRuns) {
  TempDir a("ds_a"), b("ds_b");
  generate_dataset(small_config(30), a.path());
  generate_dataset(small_config(30), b.path());
  std::set<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(a.path())) {
    if (e.is_regular_file()) files.insert(fs::relative(e.path(), a.path()));
  }
  std::size_t count_b = 0;
  for (const auto& e : fs::recursive_directory_iterator(b.path())) {
    count_b += e.is_regular_file() ? 1 : 0;
  }
  EXPECT_EQ(files.size(), count_b);
  for (const auto& rel : files) EXPECT_EQ(slurp(a.path() / rel), slurp(b.path() / rel)) << rel;
}

TEST(Dataset, SplitsAndActionVisibility) {
  TempDir dir("ds_splits");
  GenConfig c = small_config(60);
  DatasetManifest m = generate_dataset(c, dir.path());
  EXPECT_EQ(m.splits.at(kSplitFinetune).size(), 6u);
  EXPECT_EQ(m.splits.at(kSplitEval).size(), 6u);
  EXPECT_EQ(m.splits.at(kSplitPretrain).size(), 48u);
  std::set<std::string> seen;
  for (const auto& [split, names] : m.splits) {
    for (const auto& n : names) EXPECT_TRUE(seen.insert(n).second) << n;
  }
  EXPECT_EQ(seen.size(), 60u);

  Dataset ds = Dataset::open(dir.path());
  for (const auto& tr : ds.split(kSplitPretrain)) {
    EXPECT_FALSE(tr.actions.has_value());
    EXPECT_FALSE(fs::exists(dir.path() / tr.name / "actions.bin"));
  }
  for (const auto& tr : ds.split(kSplitFinetune)) {
    ASSERT_TRUE(tr.actions.has_value());
    EXPECT_EQ(static_cast<int>(tr.actions->size()), tr.length - 1);
  }
  EXPECT_THROW(ds.split("validation"), InputError);

  const io::json manifest = io::read_json(dir.path() / "manifest.json");
  std::set<std::string> keys;
  for (const auto& [k, v] : manifest.items()) keys.insert(k);
  EXPECT_EQ(keys, (std::set<std::string>{"n_trajectories", "horizon", "image_size", "splits",
                                         "generator_seed", "format_version"}));
}

TEST(Dataset, ReplayReproducesFramesAndTracks) {
  TempDir dir("ds_replay");
  GenConfig c = small_config(20);
  c.pretrain_actions = true;
  generate_dataset(c, dir.path());
  Dataset ds = Dataset::open(dir.path());
  const world::WorldConfig w = c.world();
  for (const char* split : {kSplitPretrain, kSplitFinetune, kSplitEval}) {
    for (const auto& tr : ds.split(split)) {
      ASSERT_TRUE(tr.actions.has_value());
      world::SceneState s = world::init_scene(tr.seed, tr.template_id(), tr.combo()).state;
      world::KeypointSet k = world::keypoint_grid(w.image_size, s, w);
      for (int t = 0; t < tr.length; ++t) {
        if (t > 0) {
          world::SceneState n = world::step_scene(s, (*tr.actions)[t - 1], w);
          k = world::track_keypoints(s, n, k, w.image_size);
          s = n;
        }
        const world::Frame f = world::render(s, w);
        ASSERT_TRUE(std::equal(f.pixels.begin(), f.pixels.end(), tr.frame(t))) << tr.name << t;
        ASSERT_TRUE(std::equal(k.coords.data(), k.coords.data() + 512, tr.track(t)));
      }
      EXPECT_TRUE(world::check_success(s, w)) << tr.name;
    }
  }
}

TEST(Dataset, CoversEveryLabel) {
  TempDir dir("ds_cover");
  GenConfig c = small_config(4 * world::kNumLabels);
  c.horizon = 24;
  generate_dataset(c, dir.path());
  Dataset ds = Dataset::open(dir.path());
  std::set<int> labels;
  for (const char* split : {kSplitPretrain, kSplitFinetune, kSplitEval}) {
    for (const auto& tr : ds.split(split)) {
      labels.insert(tr.task_label);
      EXPECT_EQ(tr.length, 24);
    }
  }
  EXPECT_EQ(static_cast<int>(labels.size()), world::kNumLabels);
}

TEST(Dataset, RegenerationIsStable) {
  TempDir a("ds_regen");
  generate_dataset(small_config(10), a.path());
  const std::string first = slurp(a.path() / "traj_00003" / "frames.bin");
  generate_dataset(small_config(10), a.path());
  EXPECT_EQ(first, slurp(a.path() / "traj_00003" / "frames.bin"));
}

}  // namespace
}  // namespace care::data
