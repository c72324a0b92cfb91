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

#include "care/synthworld.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "care/rng.hpp"

namespace care::world {

namespace {

constexpr std::array<const char*, kNumShapes> kShapeNames = {"square", "circle", "triangle"};
constexpr std::array<const char*, kNumColors> kColorNames = {"red", "green", "blue", "yellow"};
constexpr std::array<std::array<float, 3>, kNumColors> kPalette = {{
    {0.90f, 0.15f, 0.10f},
    {0.15f, 0.80f, 0.20f},
    {0.15f, 0.30f, 0.95f},
    {0.95f, 0.85f, 0.10f},
}};
constexpr std::array<float, 3> kBackgroundColor = {0.10f, 0.10f, 0.12f};
constexpr std::array<float, 3> kAgentOpen = {1.0f, 1.0f, 1.0f};
constexpr std::array<float, 3> kAgentClosed = {0.85f, 0.25f, 0.85f};

constexpr double kEdgeGoal = 0.15;
constexpr double kPlaceTolerance = 0.02;
constexpr double kMinObjectGap = 0.22;

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

float clamp_unit(float v) { return std::clamp(v, -1.0f, 1.0f); }

bool inside_shape(const Object& o, Vec2 p) {
  const double dx = p.x - o.pos.x, dy = p.y - o.pos.y, h = o.half_extent;
  switch (o.shape) {
    case Shape::kSquare:
      return std::abs(dx) <= h && std::abs(dy) <= h;
    case Shape::kCircle:
      return dx * dx + dy * dy <= h * h;
    case Shape::kTriangle:
      // Apex up (image y grows downward), base of width 2h at dy = +h.
      return dy >= -h && dy <= h && std::abs(dx) <= 0.5 * (dy + h);
  }
  return false;
}

Vec2 goal_location(const SceneState& s, int template_id) {
  const Object& t = s.objects[s.goal.target];
  switch (template_id) {
    case 0:
      return s.objects[s.goal.landmark].pos;
    case 1:
      return {kEdgeGoal, t.pos.y};
    case 2:
      return {1.0 - kEdgeGoal, t.pos.y};
    default:
      return {t.pos.x, kEdgeGoal};
  }
}

}  // namespace

const char* shape_name(Shape s) { return kShapeNames[static_cast<int>(s)]; }
const char* color_name(Color c) { return kColorNames[static_cast<int>(c)]; }

int SceneState::held_index() const {
  for (std::size_t i = 0; i < objects.size(); ++i) {
    if (objects[i].held) return static_cast<int>(i);
  }
  return -1;
}

Action clip(Action a) { return {clamp_unit(a.dx), clamp_unit(a.dy), clamp_unit(a.grip)}; }

int combo_index(Color c, Shape s) {
  return static_cast<int>(c) * kNumShapes + static_cast<int>(s);
}

int task_label(int template_id, int combo) { return template_id * kNumCombos + combo; }

std::string instruction_for(const SceneState& s, int template_id) {
  const Object& t = s.objects[s.goal.target];
  const std::string target = std::string(color_name(t.color)) + " " + shape_name(t.shape);
  switch (template_id) {
    case 0: {
      const Object& l = s.objects[s.goal.landmark];
      return "push the " + target + " to the " + color_name(l.color) + " " + shape_name(l.shape);
    }
    case 1:
      return "move the " + target + " to the left side";
    case 2:
      return "move the " + target + " to the right side";
    case 3:
      return "move the " + target + " to the top edge";
    default:
      throw ConfigError("unknown template id " + std::to_string(template_id));
  }
}

std::vector<std::string> all_instructions() {
  std::set<std::string> out;
  for (int c = 0; c < kNumColors; ++c) {
    for (int sh = 0; sh < kNumShapes; ++sh) {
      SceneState s;
      s.objects.resize(2);
      s.objects[0].color = static_cast<Color>(c);
      s.objects[0].shape = static_cast<Shape>(sh);
      s.goal.target = 0;
      s.goal.landmark = 1;
      for (int t = 1; t < kNumTemplates; ++t) out.insert(instruction_for(s, t));
      for (int c2 = 0; c2 < kNumColors; ++c2) {
        for (int sh2 = 0; sh2 < kNumShapes; ++sh2) {
          if (c2 == c && sh2 == sh) continue;
          s.objects[1].color = static_cast<Color>(c2);
          s.objects[1].shape = static_cast<Shape>(sh2);
          out.insert(instruction_for(s, 0));
        }
      }
    }
  }
  return {out.begin(), out.end()};
}

SceneInit init_scene(uint64_t seed, int template_id, std::optional<int> combo) {
  if (template_id < 0 || template_id >= kNumTemplates) {
    throw ConfigError("unknown template id " + std::to_string(template_id) + " (have " +
                      std::to_string(kNumTemplates) + ")");
  }
  if (combo && (*combo < 0 || *combo >= kNumCombos)) {
    throw ConfigError("target combination " + std::to_string(*combo) + " out of range");
  }
  Rng rng(derive_seed(seed, static_cast<uint64_t>(template_id)));
  const int target_combo =
      combo ? *combo : static_cast<int>(rng() % static_cast<uint64_t>(kNumCombos));
  const int n_objects = 2 + static_cast<int>(rng() % 3);

  std::vector<int> identities{target_combo};
  while (static_cast<int>(identities.size()) < n_objects) {
    const int c = static_cast<int>(rng() % static_cast<uint64_t>(kNumCombos));
    if (std::find(identities.begin(), identities.end(), c) == identities.end()) {
      identities.push_back(c);
    }
  }

  SceneState s;
  s.goal.target = 0;
  s.goal.landmark = template_id == 0 ? 1 : -1;
  for (int id : identities) {
    Object o;
    o.color = static_cast<Color>(id / kNumShapes);
    o.shape = static_cast<Shape>(id % kNumShapes);
    o.half_extent = uniform(rng, 0.06, 0.08);
    for (;;) {
      o.pos = {uniform(rng, 0.12, 0.88), uniform(rng, 0.12, 0.88)};
      bool ok = true;
      for (const Object& other : s.objects) ok = ok && dist(o.pos, other.pos) >= kMinObjectGap;
      if (ok && s.objects.empty() && template_id != 0) {
        // The target must start clearly away from its edge goal.
        s.objects.push_back(o);
        ok = dist(o.pos, goal_location(s, template_id)) > 0.25;
        s.objects.pop_back();
      }
      if (ok) break;
    }
    s.objects.push_back(o);
  }
  for (;;) {
    s.agent_pos = {uniform(rng, 0.1, 0.9), uniform(rng, 0.1, 0.9)};
    bool ok = true;
    for (const Object& o : s.objects) ok = ok && dist(s.agent_pos, o.pos) >= o.half_extent + 0.07;
    if (ok) break;
  }
  s.goal.location = goal_location(s, template_id);

  SceneInit init;
  init.state = s;
  init.instruction = instruction_for(s, template_id);
  init.task_label = task_label(template_id, target_combo);
  return init;
}

SceneState step_scene(const SceneState& s, Action a, const WorldConfig& cfg) {
  a = clip(a);
  SceneState n = s;
  int held = n.held_index();
  if (a.grip > 0.0f) {
    n.gripper = 1;
    if (held < 0) {
      double best = cfg.pickup_radius;
      for (std::size_t i = 0; i < n.objects.size(); ++i) {
        const double d = dist(n.agent_pos, n.objects[i].pos);
        if (d <= best) {
          best = d;
          held = static_cast<int>(i);
        }
      }
      if (held >= 0) n.objects[held].held = true;
    }
  } else {
    n.gripper = 0;
    if (held >= 0) n.objects[held].held = false;
    held = -1;
  }

  double mx = cfg.step_scale * static_cast<double>(a.dx);
  double my = cfg.step_scale * static_cast<double>(a.dy);
  // Displacement is limited so that agent and carried object stay in bounds.
  auto limit = [](double m, double p) { return std::clamp(m, -p, 1.0 - p); };
  mx = limit(mx, n.agent_pos.x);
  my = limit(my, n.agent_pos.y);
  if (held >= 0) {
    mx = limit(mx, n.objects[held].pos.x);
    my = limit(my, n.objects[held].pos.y);
  }
  n.agent_pos = {clamp01(n.agent_pos.x + mx), clamp01(n.agent_pos.y + my)};
  if (held >= 0) {
    Object& o = n.objects[held];
    o.pos = {clamp01(o.pos.x + mx), clamp01(o.pos.y + my)};
  }
  n.time_index = s.time_index + 1;
  return n;
}

Frame render(const SceneState& s, const WorldConfig& cfg) {
  const int S = cfg.image_size;
  Frame f;
  f.height = S;
  f.width = S;
  f.time_index = s.time_index;
  f.pixels.resize(static_cast<std::size_t>(S) * S * 3);
  const auto& agent_color = s.gripper != 0 ? kAgentClosed : kAgentOpen;
  const double r2 = cfg.agent_radius * cfg.agent_radius;
  for (int i = 0; i < S; ++i) {
    for (int j = 0; j < S; ++j) {
      const Vec2 p{(j + 0.5) / S, (i + 0.5) / S};
      const std::array<float, 3>* c = &kBackgroundColor;
      for (const Object& o : s.objects) {
        if (inside_shape(o, p)) c = &kPalette[static_cast<int>(o.color)];
      }
      const double dx = p.x - s.agent_pos.x, dy = p.y - s.agent_pos.y;
      if (dx * dx + dy * dy <= r2) c = &agent_color;
      float* px = &f.pixels[(static_cast<std::size_t>(i) * S + j) * 3];
      px[0] = (*c)[0];
      px[1] = (*c)[1];
      px[2] = (*c)[2];
    }
  }
  return f;
}

Action scripted_policy(const SceneState& s, const WorldConfig& cfg) {
  const Object& t = s.objects[s.goal.target];
  const double inv = 1.0 / cfg.step_scale;
  Action a;
  if (t.held) {
    const double ex = s.goal.location.x - t.pos.x, ey = s.goal.location.y - t.pos.y;
    if (std::hypot(ex, ey) <= kPlaceTolerance) {
      a = {0.0f, 0.0f, -1.0f};
    } else {
      a = {static_cast<float>(ex * inv), static_cast<float>(ey * inv), 1.0f};
    }
    return clip(a);
  }
  if (s.gripper == 0 && dist(t.pos, s.goal.location) <= kPlaceTolerance) {
    return {0.0f, 0.0f, -1.0f};
  }
  const double dx = t.pos.x - s.agent_pos.x, dy = t.pos.y - s.agent_pos.y;
  if (std::hypot(dx, dy) <= 0.5 * cfg.pickup_radius) {
    // Close enough to grasp; the object attaches before this step's motion.
    const double ex = s.goal.location.x - t.pos.x, ey = s.goal.location.y - t.pos.y;
    a = {static_cast<float>(ex * inv), static_cast<float>(ey * inv), 1.0f};
  } else {
    a = {static_cast<float>(dx * inv), static_cast<float>(dy * inv), -1.0f};
  }
  return clip(a);
}

bool check_success(const SceneState& s, const WorldConfig& cfg) {
  if (s.goal.target < 0 || s.goal.target >= static_cast<int>(s.objects.size())) return false;
  const Object& t = s.objects[s.goal.target];
  return !t.held && dist(t.pos, s.goal.location) <= cfg.success_radius;
}

int body_at(const SceneState& s, Vec2 p, const WorldConfig& cfg) {
  const double dx = p.x - s.agent_pos.x, dy = p.y - s.agent_pos.y;
  if (dx * dx + dy * dy <= cfg.agent_radius * cfg.agent_radius) return kAgentBody;
  for (int i = static_cast<int>(s.objects.size()) - 1; i >= 0; --i) {
    if (inside_shape(s.objects[i], p)) return i + 1;
  }
  return kBackground;
}

Vec2 body_pos(const SceneState& s, int body) {
  if (body == kAgentBody) return s.agent_pos;
  return s.objects.at(static_cast<std::size_t>(body - 1)).pos;
}

KeypointSet keypoint_grid(int image_size) {
  if (image_size <= 0 || image_size % kKeypointGrid != 0) {
    throw ConfigError("keypoint grid needs image size divisible by 16, got " +
                      std::to_string(image_size));
  }
  const float spacing = static_cast<float>(image_size / kKeypointGrid);
  KeypointSet k;
  k.coords.resize(kNumKeypoints, 2);
  k.attachment.assign(kNumKeypoints, kBackground);
  for (int r = 0; r < kKeypointGrid; ++r) {
    for (int c = 0; c < kKeypointGrid; ++c) {
      const int idx = r * kKeypointGrid + c;
      k.coords(idx, 0) = spacing / 2 + static_cast<float>(c) * spacing;
      k.coords(idx, 1) = spacing / 2 + static_cast<float>(r) * spacing;
    }
  }
  return k;
}

KeypointSet keypoint_grid(int image_size, const SceneState& s0, const WorldConfig& cfg) {
  KeypointSet k = keypoint_grid(image_size);
  for (int i = 0; i < kNumKeypoints; ++i) {
    const Vec2 p{k.coords(i, 0) / static_cast<double>(image_size),
                 k.coords(i, 1) / static_cast<double>(image_size)};
    k.attachment[i] = body_at(s0, p, cfg);
  }
  return k;
}

KeypointSet track_keypoints(const SceneState& s_t, const SceneState& s_next,
                            const KeypointSet& k_t, int image_size) {
  if (s_next.time_index != s_t.time_index + 1 || s_next.objects.size() != s_t.objects.size()) {
    throw ContractError("track_keypoints: states are not one step apart (t=" +
                        std::to_string(s_t.time_index) + ", next=" +
                        std::to_string(s_next.time_index) + ")");
  }
  if (k_t.coords.rows() != kNumKeypoints || k_t.coords.cols() != 2 ||
      k_t.attachment.size() != static_cast<std::size_t>(kNumKeypoints)) {
    throw ShapeError("track_keypoints: keypoint set must be 256x2");
  }
  const float hi = std::nextafter(static_cast<float>(image_size), 0.0f);
  KeypointSet k = k_t;
  for (int i = 0; i < kNumKeypoints; ++i) {
    const int body = k.attachment[i];
    if (body == kBackground) continue;
    const Vec2 a = body_pos(s_t, body), b = body_pos(s_next, body);
    const double dx = (b.x - a.x) * image_size, dy = (b.y - a.y) * image_size;
    k.coords(i, 0) = std::clamp(static_cast<float>(k_t.coords(i, 0) + dx), 0.0f, hi);
    k.coords(i, 1) = std::clamp(static_cast<float>(k_t.coords(i, 1) + dy), 0.0f, hi);
  }
  return k;
}

Demonstration scripted_demonstration(uint64_t seed, int template_id, std::optional<int> combo,
                                     const WorldConfig& cfg, int max_attempts) {
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    Demonstration d;
    d.seed = attempt == 0 ? seed : derive_seed(seed, 0, static_cast<uint64_t>(attempt));
    d.regenerations = attempt;
    d.init = init_scene(d.seed, template_id, combo);
    d.states.push_back(d.init.state);
    for (int t = 0; t + 1 < cfg.horizon; ++t) {
      const Action a = scripted_policy(d.states.back(), cfg);
      d.actions.push_back(a);
      d.states.push_back(step_scene(d.states.back(), a, cfg));
    }
    if (check_success(d.states.back(), cfg)) return d;
  }
  throw ConfigError("no solvable scene for seed " + std::to_string(seed) + " within " +
                    std::to_string(max_attempts) + " attempts");
}

}  // namespace care::world
