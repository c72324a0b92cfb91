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

#include <cmath>
#include <set>

#include "care/rng.hpp"
#include "care/synthworld.hpp"

namespace care::world {
namespace {

bool same_state(const SceneState& a, const SceneState& b) {
  if (a.agent_pos.x != b.agent_pos.x || a.agent_pos.y != b.agent_pos.y) return false;
  if (a.gripper != b.gripper || a.time_index != b.time_index) return false;
  if (a.objects.size() != b.objects.size()) return false;
  for (std::size_t i = 0; i < a.objects.size(); ++i) {
    const Object& p = a.objects[i];
    const Object& q = b.objects[i];
    if (p.pos.x != q.pos.x || p.pos.y != q.pos.y || p.shape != q.shape || p.color != q.color ||
        p.held != q.held || p.half_extent != q.half_extent) {
      return false;
    }
  }
  return a.goal.target == b.goal.target && a.goal.location.x == b.goal.location.x &&
         a.goal.location.y == b.goal.location.y;
}

TEST(InitScene, DeterministicAndSeedSensitive) {
  SceneInit a = init_scene(7, 0);
  SceneInit b = init_scene(7, 0);
  EXPECT_TRUE(same_state(a.state, b.state));
  EXPECT_EQ(a.instruction, b.instruction);
  SceneInit c = init_scene(8, 0);
  bool differs = false;
  for (std::size_t i = 0; i < std::min(a.state.objects.size(), c.state.objects.size()); ++i) {
    differs = differs || a.state.objects[i].pos.x != c.state.objects[i].pos.x;
  }
  EXPECT_TRUE(differs);
}

TEST(InitScene, RejectsUnknownTemplate) {
  EXPECT_THROW(init_scene(1, 999), ConfigError);
  EXPECT_THROW(init_scene(1, -1), ConfigError);
  EXPECT_THROW(init_scene(1, 0, kNumCombos), ConfigError);
}

TEST(InitScene, SceneInvariants) {
  for (uint64_t seed = 0; seed < 200; ++seed) {
    const int tmpl = static_cast<int>(seed % kNumTemplates);
    SceneInit si = init_scene(seed, tmpl);
    const auto& objs = si.state.objects;
    ASSERT_GE(objs.size(), 2u);
    ASSERT_LE(objs.size(), 4u);
    for (std::size_t i = 0; i < objs.size(); ++i) {
      EXPECT_GT(objs[i].half_extent, 0.0);
      EXPECT_LT(objs[i].half_extent, 0.2);
      EXPECT_FALSE(objs[i].held);
      for (std::size_t j = i + 1; j < objs.size(); ++j) {
        EXPECT_GT(dist(objs[i].pos, objs[j].pos), objs[i].half_extent + objs[j].half_extent);
      }
    }
    const Object& t = objs[si.state.goal.target];
    EXPECT_EQ(si.task_label, task_label(tmpl, combo_index(t.color, t.shape)));
    EXPECT_NE(si.instruction.find(std::string(color_name(t.color)) + " " + shape_name(t.shape)),
              std::string::npos);
    EXPECT_EQ(si.instruction, instruction_for(si.state, tmpl));
  }
}

TEST(InitScene, PinnedComboAndInstructionCorpus) {
  for (int combo = 0; combo < kNumCombos; ++combo) {
    SceneInit si = init_scene(3, 2, combo);
    EXPECT_EQ(si.task_label, task_label(2, combo));
  }
  std::vector<std::string> all = all_instructions();
  EXPECT_TRUE(std::is_sorted(all.begin(), all.end()));
  std::set<std::string> uniq(all.begin(), all.end());
  EXPECT_EQ(uniq.size(), all.size());
  for (uint64_t seed = 0; seed < 50; ++seed) {
    EXPECT_TRUE(uniq.count(init_scene(seed, static_cast<int>(seed % 4)).instruction));
  }
}

TEST(StepScene, ZeroActionKeepsPositions) {
  SceneState s = init_scene(11, 1).state;
  SceneState n = step_scene(s, {0.0f, 0.0f, -1.0f});
  EXPECT_EQ(n.time_index, s.time_index + 1);
  n.time_index = s.time_index;
  EXPECT_TRUE(same_state(s, n));
}

TEST(StepScene, AgentMovesByStepScale) {
  SceneState s = init_scene(11, 1).state;
  s.agent_pos = {0.5, 0.5};
  SceneState n = step_scene(s, {1.0f, 0.0f, -1.0f});
  EXPECT_NEAR(n.agent_pos.x, 0.55, 1e-12);
  EXPECT_NEAR(n.agent_pos.y, 0.5, 1e-12);
  // Clipping before application.
  SceneState m = step_scene(s, {5.0f, -3.0f, -1.0f});
  EXPECT_NEAR(m.agent_pos.x, 0.55, 1e-12);
  EXPECT_NEAR(m.agent_pos.y, 0.45, 1e-12);
}

TEST(StepScene, HeldObjectTranslatesRigidly) {
  SceneState s = init_scene(5, 0).state;
  Object& o = s.objects[0];
  o.pos = {0.4, 0.4};
  s.agent_pos = {0.41, 0.4};
  for (std::size_t i = 1; i < s.objects.size(); ++i) s.objects[i].pos = {0.9, 0.1 + 0.2 * i};
  SceneState n = step_scene(s, {0.0f, 1.0f, 1.0f});
  ASSERT_EQ(n.held_index(), 0);
  EXPECT_EQ(n.gripper, 1);
  EXPECT_NEAR(n.objects[0].pos.x - s.objects[0].pos.x, 0.0, 1e-12);
  EXPECT_NEAR(n.objects[0].pos.y - s.objects[0].pos.y, 0.05, 1e-12);
  EXPECT_NEAR(n.agent_pos.y - s.agent_pos.y, 0.05, 1e-12);
  SceneState r = step_scene(n, {0.0f, 1.0f, -1.0f});
  EXPECT_EQ(r.held_index(), -1);
  EXPECT_EQ(r.objects[0].pos.y, n.objects[0].pos.y);
}

TEST(StepScene, StaysInBoundsAndAtMostOneHeld) {
  Rng rng(3);
  SceneState s = init_scene(21, 2).state;
  for (int t = 0; t < 500; ++t) {
    Action a{static_cast<float>(uniform(rng, -1.5, 1.5)), static_cast<float>(uniform(rng, -1.5, 1.5)),
             static_cast<float>(uniform(rng, -1.0, 1.0))};
    s = step_scene(s, a);
    int held = 0;
    for (const Object& o : s.objects) {
      held += o.held ? 1 : 0;
      EXPECT_GE(o.pos.x, 0.0);
      EXPECT_LE(o.pos.x, 1.0);
      EXPECT_GE(o.pos.y, 0.0);
      EXPECT_LE(o.pos.y, 1.0);
    }
    EXPECT_LE(held, 1);
    EXPECT_GE(s.agent_pos.x, 0.0);
    EXPECT_LE(s.agent_pos.x, 1.0);
  }
}

TEST(Render, PureAndInRange) {
  SceneState s = init_scene(2, 3).state;
  Frame a = render(s);
  Frame b = render(s);
  EXPECT_TRUE(a == b);
  EXPECT_EQ(a.pixels.size(), 64u * 64u * 3u);
  for (float v : a.pixels) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Render, EmptySceneShowsOnlyAgent) {
  WorldConfig cfg;
  SceneState s = init_scene(2, 3).state;
  s.objects.clear();
  s.agent_pos = {0.3, 0.6};
  Frame f = render(s, cfg);
  const float bg0 = f.at(0, 0, 0), bg1 = f.at(0, 0, 1), bg2 = f.at(0, 0, 2);
  int agent_pixels = 0;
  for (int i = 0; i < 64; ++i) {
    for (int j = 0; j < 64; ++j) {
      const bool is_bg = f.at(i, j, 0) == bg0 && f.at(i, j, 1) == bg1 && f.at(i, j, 2) == bg2;
      const double dx = (j + 0.5) / 64 - 0.3, dy = (i + 0.5) / 64 - 0.6;
      const bool in_disc = dx * dx + dy * dy <= cfg.agent_radius * cfg.agent_radius;
      EXPECT_EQ(!is_bg, in_disc) << i << "," << j;
      agent_pixels += in_disc ? 1 : 0;
    }
  }
  EXPECT_GT(agent_pixels, 0);
}

TEST(Render, ObjectMoveConfinedToBoundingBoxes) {
  SceneState s = init_scene(9, 0).state;
  s.agent_pos = {0.02, 0.02};
  SceneState m = s;
  Object& o = m.objects[0];
  o.pos.x = std::min(o.pos.x + 0.05, 0.9);
  const Frame a = render(s);
  const Frame b = render(m);
  const Object& before = s.objects[0];
  auto in_box = [](const Object& ob, int i, int j) {
    const double x = (j + 0.5) / 64, y = (i + 0.5) / 64;
    return std::abs(x - ob.pos.x) <= ob.half_extent && std::abs(y - ob.pos.y) <= ob.half_extent;
  };
  int changed = 0;
  for (int i = 0; i < 64; ++i) {
    for (int j = 0; j < 64; ++j) {
      bool diff = false;
      for (int c = 0; c < 3; ++c) diff = diff || a.at(i, j, c) != b.at(i, j, c);
      if (diff) {
        ++changed;
        EXPECT_TRUE(in_box(before, i, j) || in_box(o, i, j)) << i << "," << j;
      }
    }
  }
  EXPECT_GT(changed, 0);
}

TEST(Render, GripperStateVisible) {
  SceneState s = init_scene(2, 1).state;
  SceneState c = s;
  c.gripper = 1;
  EXPECT_FALSE(render(s) == render(c));
}

TEST(ScriptedPolicy, ProportionalSigns) {
  SceneState s = init_scene(4, 1).state;
  Object& t = s.objects[s.goal.target];
  s.agent_pos = {std::max(0.0, t.pos.x - 0.3), t.pos.y};
  Action a = scripted_policy(s);
  EXPECT_GT(a.dx, 0.0f);
  EXPECT_LE(std::abs(a.dx), 1.0f);
  EXPECT_LE(std::abs(a.dy), 1.0f);
  // Carrying the target and already at the goal: release without moving.
  t.pos = s.goal.location;
  t.held = true;
  s.gripper = 1;
  s.agent_pos = t.pos;
  Action at = scripted_policy(s);
  EXPECT_NEAR(at.dx, 0.0f, 1e-6);
  EXPECT_NEAR(at.dy, 0.0f, 1e-6);
  EXPECT_LE(at.grip, 0.0f);
}

TEST(ScriptedPolicy, RolloutSucceedsForSeed3Template1) {
  WorldConfig cfg;
  Demonstration d = scripted_demonstration(3, 1, std::nullopt, cfg);
  ASSERT_EQ(static_cast<int>(d.states.size()), cfg.horizon);
  ASSERT_EQ(d.actions.size(), d.states.size() - 1);
  EXPECT_TRUE(check_success(d.states.back(), cfg));
  // Replay reproduces every state.
  SceneState s = d.init.state;
  for (std::size_t t = 0; t < d.actions.size(); ++t) {
    s = step_scene(s, d.actions[t], cfg);
    EXPECT_TRUE(same_state(s, d.states[t + 1]));
  }
}

TEST(ScriptedPolicy, DemonstrationsSucceedAcrossTemplates) {
  WorldConfig cfg;
  for (uint64_t seed = 0; seed < 60; ++seed) {
    Demonstration d = scripted_demonstration(seed, static_cast<int>(seed % 4), std::nullopt, cfg);
    EXPECT_TRUE(check_success(d.states.back(), cfg)) << seed;
  }
}

TEST(Keypoints, GridCellCenters) {
  KeypointSet k = keypoint_grid(64);
  ASSERT_EQ(k.coords.rows(), 256);
  ASSERT_EQ(k.coords.cols(), 2);
  std::set<float> xs, ys;
  for (int i = 0; i < 256; ++i) {
    xs.insert(k.coords(i, 0));
    ys.insert(k.coords(i, 1));
  }
  std::set<float> expected;
  for (int i = 0; i < 16; ++i) expected.insert(2.0f + 4.0f * i);
  EXPECT_EQ(xs, expected);
  EXPECT_EQ(ys, expected);
  EXPECT_THROW(keypoint_grid(60), ConfigError);
  EXPECT_EQ(keypoint_grid(32).coords(0, 0), 1.0f);
}

TEST(Keypoints, StaticTransitionIsIdentity) {
  WorldConfig cfg;
  SceneState s = init_scene(6, 0).state;
  KeypointSet k = keypoint_grid(64, s, cfg);
  SceneState n = step_scene(s, {0.0f, 0.0f, -1.0f}, cfg);
  KeypointSet k2 = track_keypoints(s, n, k, 64);
  EXPECT_EQ(k.coords, k2.coords);
  EXPECT_EQ(k.attachment, k2.attachment);
}

TEST(Keypoints, AgentMoveShiftsAttachedPoints) {
  WorldConfig cfg;
  SceneState s = init_scene(6, 0).state;
  s.objects.clear();
  s.agent_pos = {0.5, 0.5};
  KeypointSet k = keypoint_grid(64, s, cfg);
  SceneState n = step_scene(s, {1.0f, 0.0f, -1.0f}, cfg);
  KeypointSet k2 = track_keypoints(s, n, k, 64);
  int attached = 0;
  for (int i = 0; i < 256; ++i) {
    if (k.attachment[i] == kAgentBody) {
      ++attached;
      EXPECT_NEAR(k2.coords(i, 0) - k.coords(i, 0), 3.2f, 1e-5);
      EXPECT_EQ(k2.coords(i, 1), k.coords(i, 1));
    } else {
      EXPECT_EQ(k.attachment[i], kBackground);
      EXPECT_EQ(k2.coords.row(i), k.coords.row(i));
    }
  }
  EXPECT_GT(attached, 0);
}

TEST(Keypoints, HeldObjectSharesAgentDisplacement) {
  WorldConfig cfg;
  SceneState s = init_scene(5, 0).state;
  s.objects[0].pos = {0.4, 0.4};
  s.agent_pos = {0.42, 0.4};
  for (std::size_t i = 1; i < s.objects.size(); ++i) s.objects[i].pos = {0.9, 0.1 + 0.2 * i};
  KeypointSet k = keypoint_grid(64, s, cfg);
  SceneState n = step_scene(s, {0.6f, -0.8f, 1.0f}, cfg);
  KeypointSet k2 = track_keypoints(s, n, k, 64);
  std::set<std::pair<float, float>> deltas;
  int moved = 0;
  for (int i = 0; i < 256; ++i) {
    if (k.attachment[i] == kAgentBody || k.attachment[i] == 1) {
      ++moved;
      deltas.insert({k2.coords(i, 0) - k.coords(i, 0), k2.coords(i, 1) - k.coords(i, 1)});
    }
  }
  EXPECT_GT(moved, 1);
  EXPECT_EQ(deltas.size(), 1u);
}

TEST(Keypoints, RejectsNonConsecutiveStates) {
  SceneState s = init_scene(6, 0).state;
  KeypointSet k = keypoint_grid(64, s, WorldConfig{});
  SceneState n = step_scene(step_scene(s, {}), {});
  EXPECT_THROW(track_keypoints(s, n, k, 64), ContractError);
}

TEST(CheckSuccess, ThresholdAndRelease) {
  WorldConfig cfg;
  SceneState s = init_scene(12, 0).state;
  Object& t = s.objects[s.goal.target];
  t.pos = s.goal.location;
  s.gripper = 0;
  EXPECT_TRUE(check_success(s, cfg));
  t.pos = {s.goal.location.x + 0.0799, s.goal.location.y};
  EXPECT_TRUE(check_success(s, cfg));
  t.pos = {s.goal.location.x + 0.0801, s.goal.location.y};
  EXPECT_FALSE(check_success(s, cfg));
  t.pos = s.goal.location;
  t.held = true;
  s.gripper = 1;
  EXPECT_FALSE(check_success(s, cfg));
}

}  // namespace
}  // namespace care::world
