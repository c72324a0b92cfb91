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

#ifndef CARE_SYNTHWORLD_HPP_
#define CARE_SYNTHWORLD_HPP_

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "care/tensor.hpp"

namespace care::world {

enum class Shape : int { kSquare = 0, kCircle = 1, kTriangle = 2 };
enum class Color : int { kRed = 0, kGreen = 1, kBlue = 2, kYellow = 3 };

inline constexpr int kNumShapes = 3;
inline constexpr int kNumColors = 4;
inline constexpr int kNumCombos = kNumShapes * kNumColors;
inline constexpr int kNumTemplates = 4;
inline constexpr int kNumLabels = kNumTemplates * kNumCombos;
inline constexpr int kNumKeypoints = 256;
inline constexpr int kKeypointGrid = 16;
// Attachment id of the agent; object i has id i + 1, background is -1.
inline constexpr int kAgentBody = 0;
inline constexpr int kBackground = -1;

const char* shape_name(Shape s);
const char* color_name(Color c);

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

inline double dist(Vec2 a, Vec2 b) {
  const double dx = a.x - b.x, dy = a.y - b.y;
  return std::sqrt(dx * dx + dy * dy);
}

struct Object {
  Shape shape = Shape::kSquare;
  Color color = Color::kRed;
  Vec2 pos;
  double half_extent = 0.07;
  bool held = false;
};

struct GoalSpec {
  int target = 0;     // index into SceneState::objects
  int landmark = -1;  // object the target is pushed to, or -1
  Vec2 location;
};

struct SceneState {
  Vec2 agent_pos;
  int gripper = 0;  // 1 = closed
  std::vector<Object> objects;
  GoalSpec goal;
  int time_index = 0;

  int held_index() const;
};

struct Action {
  float dx = 0.0f;
  float dy = 0.0f;
  float grip = -1.0f;
};

Action clip(Action a);

struct Frame {
  int height = 0;
  int width = 0;
  int time_index = 0;
  std::vector<float> pixels;  // H x W x 3, row-major, values in [0, 1]

  float at(int row, int col, int ch) const { return pixels[(row * width + col) * 3 + ch]; }
  bool operator==(const Frame& o) const {
    return height == o.height && width == o.width && pixels == o.pixels;
  }
};

struct KeypointSet {
  Tensor coords;                // 256 x 2, (x, y) in pixels
  std::vector<int> attachment;  // 256 body ids
};

struct WorldConfig {
  int image_size = 64;
  double step_scale = 0.05;
  double pickup_radius = 0.06;
  double success_radius = 0.08;
  double agent_radius = 0.045;
  int horizon = 24;
};

struct SceneInit {
  SceneState state;
  std::string instruction;
  int task_label = 0;
};

// Target (color, shape) combination index: color * kNumShapes + shape.
int combo_index(Color c, Shape s);
int task_label(int template_id, int combo);

// Deterministic scene for (seed, template). `combo` pins the target
// descriptor; otherwise it is drawn from the seed.
SceneInit init_scene(uint64_t seed, int template_id, std::optional<int> combo = std::nullopt);

std::string instruction_for(const SceneState& s, int template_id);
// Every instruction the templates can produce, sorted.
std::vector<std::string> all_instructions();

SceneState step_scene(const SceneState& s, Action a, const WorldConfig& cfg = {});
Frame render(const SceneState& s, const WorldConfig& cfg = {});
Action scripted_policy(const SceneState& s, const WorldConfig& cfg = {});
bool check_success(const SceneState& s, const WorldConfig& cfg = {});

// Body id covering normalized point p (agent drawn on top), or kBackground.
int body_at(const SceneState& s, Vec2 p, const WorldConfig& cfg = {});
Vec2 body_pos(const SceneState& s, int body);

KeypointSet keypoint_grid(int image_size);
KeypointSet keypoint_grid(int image_size, const SceneState& s0, const WorldConfig& cfg);
KeypointSet track_keypoints(const SceneState& s_t, const SceneState& s_next,
                            const KeypointSet& k_t, int image_size);

struct Demonstration {
  SceneInit init;
  uint64_t seed = 0;
  int regenerations = 0;
  std::vector<SceneState> states;  // horizon entries
  std::vector<Action> actions;     // horizon - 1 entries
};

// Runs the scripted policy for cfg.horizon frames. Scenes the policy cannot
// solve in time are regenerated from derive_seed(seed, 0, attempt).
Demonstration scripted_demonstration(uint64_t seed, int template_id, std::optional<int> combo,
                                     const WorldConfig& cfg, int max_attempts = 64);

}  // namespace care::world

#endif  // CARE_SYNTHWORLD_HPP_
