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


// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and a
// summary; artifacts and cached runs live under --work.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "care/evalharness.hpp"
#include "care/finetune.hpp"
#include "care/latentheads.hpp"
#include "care/pretrain.hpp"
#include "test_util.hpp"

namespace care::acceptance {
namespace {

namespace fs = std::filesystem;
using testing::grad_check;
using testing::project;

struct Options {
  fs::path work = fs::temp_directory_path() / "care_acceptance";
  int seeds = 3;
  int steps = 5000;
  int trajectories = 2000;
  int episodes = 100;
  uint64_t data_seed = 1;
};

struct Verdict {
  bool pass = false;
  std::string detail;
};

double now_s() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(float) * a.size()) == 0;
}

// Desk-scale profile shared by every directional run.
vlm::ModelConfig desk_model() {
  vlm::ModelConfig c;
  c.image_size = 32;
  c.patch = 8;
  c.d_v = 32;
  c.d_l = 64;
  c.n_layers = 2;
  c.key_dim = 64;
  return c;
}

constexpr int kDeskBatch = 16;

// Progress and verdict lines go to stdout and to <work>/acceptance.log.
std::ofstream& log_file() {
  static std::ofstream f;
  return f;
}

void say(const std::string& line) {
  std::cout << line << std::endl;
  if (log_file().is_open()) log_file() << line << std::endl;
}

// ---------------------------------------------------------------------------
// 1. Numerical core.

// Single-head cross-attention computed with plain loops in double.
Tensor cross_attention_oracle(const heads::CrossAttention& ca, const Tensor& q, const Tensor& ctx) {
  const int d = ca.d;
  auto affine = [](const Tensor& x, const Tensor& w, const Tensor& b) {
    std::vector<std::vector<double>> out(x.rows(), std::vector<double>(w.cols(), 0.0));
    for (int r = 0; r < x.rows(); ++r) {
      for (int c = 0; c < w.cols(); ++c) {
        double s = b(0, c);
        for (int k = 0; k < x.cols(); ++k) s += static_cast<double>(x(r, k)) * w(k, c);
        out[r][c] = s;
      }
    }
    return out;
  };
  const auto qq = affine(q, ca.wz.w->value, ca.wz.b->value);
  const auto kv = affine(ctx, ca.wf.w->value, ca.wf.b->value);
  Tensor out(q.rows(), d);
  for (int i = 0; i < q.rows(); ++i) {
    std::vector<double> s(kv.size());
    double mx = -1e300;
    for (std::size_t j = 0; j < kv.size(); ++j) {
      double dot = 0.0;
      for (int c = 0; c < d; ++c) dot += qq[i][c] * kv[j][c];
      s[j] = dot / std::sqrt(static_cast<double>(d));
      mx = std::max(mx, s[j]);
    }
    double z = 0.0;
    for (double& v : s) z += (v = std::exp(v - mx));
    for (int c = 0; c < d; ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < kv.size(); ++j) acc += s[j] / z * kv[j][c];
      out(i, c) = static_cast<float>(acc);
    }
  }
  return out;
}

Verdict criterion_numerical_core() {
  std::vector<std::string> failures;
  Rng rng(101);

  // Attention rows are distributions.
  {
    ag::AttentionLayout lay;
    lay.batch = 2;
    lay.q_len = lay.k_len = 5;
    lay.heads = 2;
    ag::Graph g;
    std::vector<Tensor> probs;
    ag::attention(g, g.constant(normal_tensor(rng, 10, 8, 3.0f)),
                  g.constant(normal_tensor(rng, 10, 8, 3.0f)),
                  g.constant(normal_tensor(rng, 10, 8, 1.0f)), lay, &probs);
    double worst = 0.0;
    for (const auto& p : probs) {
      for (Eigen::Index r = 0; r < p.rows(); ++r) {
        worst = std::max(worst, std::abs(p.row(r).cast<double>().sum() - 1.0));
      }
    }
    if (worst > 1e-6) failures.push_back("attention row sum off by " + fmt("%.2e", worst));
  }

  // Cross-attention against the scalar-loop oracle on 4 x 8 instances.
  {
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      ParamStore store;
      heads::CrossAttention ca = heads::CrossAttention::make(store, "ca", 8, 8, 8, rng);
      const Tensor q = normal_tensor(rng, 4, 8, 1.0f), ctx = normal_tensor(rng, 8, 8, 1.0f);
      ag::Graph g;
      const Tensor got = ca(g, g.constant(q), g.constant(ctx), 1)->value;
      worst = std::max(worst, static_cast<double>(
                                  (got - cross_attention_oracle(ca, q, ctx)).cwiseAbs().maxCoeff()));
    }
    if (worst > 1e-5) failures.push_back("cross-attention oracle gap " + fmt("%.2e", worst));
  }

  // UWL and both MSE losses against brute-force scalar loops.
  {
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
      const double lf = uniform01(rng) * 3.0, lp = uniform01(rng) * 3.0;
      const double s1 = uniform01(rng) * 4.0 - 2.0, s2 = uniform01(rng) * 4.0 - 2.0;
      const double brute = 0.5 * lf / std::exp(s1) + 0.5 * lp / std::exp(s2) + 0.5 * (s1 + s2);
      worst = std::max(worst, std::abs(heads::uwl_combine(lf, lp, s1, s2) - brute));
      ag::Graph g;
      auto c = [&g](double v) { return g.constant(Tensor::Constant(1, 1, static_cast<float>(v))); };
      const double graph = ag::uncertainty_weighted(g, c(lf), c(lp), c(s1), c(s2))->value(0, 0);
      const double brute_f = heads::uwl_combine(static_cast<float>(lf), static_cast<float>(lp),
                                                static_cast<float>(s1), static_cast<float>(s2));
      worst = std::max(worst, std::abs(graph - brute_f) / std::max(1.0, std::abs(brute_f)));
    }
    const Tensor fa = normal_tensor(rng, 16, 32, 1.0f), fb = normal_tensor(rng, 16, 32, 1.0f);
    double bf = 0.0;
    for (int i = 0; i < 16; ++i) {
      for (int j = 0; j < 32; ++j) bf += std::pow(static_cast<double>(fa(i, j)) - fb(i, j), 2);
    }
    bf /= 16.0 * 32.0;
    ag::Graph g;
    worst = std::max(worst, std::abs(heads::frame_loss(g, g.constant(fa), fb)->value(0, 0) - bf));
    const Tensor ka = normal_tensor(rng, 256, 2, 8.0f), kb = normal_tensor(rng, 256, 2, 8.0f);
    double bp = 0.0;
    for (int i = 0; i < 256; ++i) {
      for (int j = 0; j < 2; ++j) {
        bp += std::pow((static_cast<double>(ka(i, j)) - kb(i, j)) / 32.0, 2);
      }
    }
    bp /= 512.0;
    worst = std::max(worst, std::abs(heads::point_loss(g, g.constant(ka), kb, 32)->value(0, 0) - bp));
    if (worst > 1e-6) failures.push_back("loss oracle gap " + fmt("%.2e", worst));
  }

  // Gradients against central finite differences.
  {
    const vlm::ModelConfig cfg = testing::tiny_config();
    double worst = 0.0;
    // UWL: analytic graph gradient vs differences of the double-precision form.
    {
      Param ps1{"s1", Tensor::Constant(1, 1, 0.3f), {}, true};
      Param ps2{"s2", Tensor::Constant(1, 1, -0.7f), {}, true};
      ps1.zero_grad();
      ps2.zero_grad();
      const float lf = 0.9f, lp = 1.4f;
      ag::Graph g;
      g.backward(ag::uncertainty_weighted(g, g.constant(Tensor::Constant(1, 1, lf)),
                                          g.constant(Tensor::Constant(1, 1, lp)), g.param(ps1),
                                          g.param(ps2)));
      g.flush_param_grads();
      const double s1 = ps1.value(0, 0), s2 = ps2.value(0, 0), h = 1e-5;
      const double n1 = (heads::uwl_combine(lf, lp, s1 + h, s2) - heads::uwl_combine(lf, lp, s1 - h, s2)) / (2 * h);
      const double n2 = (heads::uwl_combine(lf, lp, s1, s2 + h) - heads::uwl_combine(lf, lp, s1, s2 - h)) / (2 * h);
      worst = std::max(worst, std::hypot(n1 - ps1.grad(0, 0), n2 - ps2.grad(0, 0)) / std::hypot(n1, n2));
    }
    {
      ParamStore store;
      vlm::Projector p = vlm::Projector::make(store, "projector", cfg, rng);
      worst = std::max(worst, grad_check({normal_tensor(rng, 4, cfg.d_v, 1.0f),
                                          normal_tensor(rng, 4, cfg.d_v, 1.0f)},
                                         [&p](ag::Graph& g, const std::vector<ag::Var>& x) {
                                           return project(g, p(g, x[0], x[1]));
                                         }, 1e-2));
    }
    {
      ParamStore store;
      heads::FrameDecoder fd = heads::FrameDecoder::make(store, "fd", cfg, rng);
      worst = std::max(worst, grad_check({normal_tensor(rng, 2 * cfg.n_latent, cfg.key_dim, 1.0f)},
                                         [&fd](ag::Graph& g, const std::vector<ag::Var>& x) {
                                           return project(g, fd(g, x[0], 2));
                                         }, 1e-2));
    }
    {
      ParamStore store;
      heads::CrossAttention ca = heads::CrossAttention::make(store, "ca", 8, 8, 8, rng);
      worst = std::max(worst, grad_check({normal_tensor(rng, 4, 8, 1.0f), normal_tensor(rng, 8, 8, 1.0f)},
                                         [&ca](ag::Graph& g, const std::vector<ag::Var>& x) {
                                           return project(g, ca(g, x[0], x[1], 1));
                                         }, 1e-2));
    }
    if (worst > 1e-3) failures.push_back("gradient rel-err " + fmt("%.2e", worst));
  }

  // Zero-init adapters and the zero-head point decoder are exact identities.
  {
    Model m = Model::create(testing::tiny_config(), 7);
    const auto frame = testing::scene_frame(3, m.cfg.image_size);
    const std::string instr = world::all_instructions()[5];
    auto z_of = [&]() {
      ag::Graph g;
      g.set_grad_enabled(false);
      return m.latent(g, m.encode(g, {frame.data()}).f_v, {m.prompt(instr)}).z->value;
    };
    const Tensor before = z_of();
    m.apply_adapters(AdapterSpec{}, 8);
    if (!bitwise_equal(before, z_of())) failures.push_back("zero-init adapters changed z");

    ParamStore store;
    heads::PointDecoder pd = heads::PointDecoder::make(store, "pd", m.cfg, rng);
    pd.mlp2.w->value.setZero();
    pd.mlp2.b->value.setZero();
    ag::Graph g;
    const Tensor k = world::keypoint_grid(m.cfg.image_size).coords / 16.0f;
    ag::Var z = g.constant(normal_tensor(rng, m.cfg.n_latent, m.cfg.d_l, 1.0f));
    if (!bitwise_equal(pd.decode(g, pd.fuse_points(g, z, k, 1), k)->value, k)) {
      failures.push_back("zero-head point decoder moved points");
    }
  }

  Verdict v;
  v.pass = failures.empty();
  for (const auto& f : failures) v.detail += (v.detail.empty() ? "" : "; ") + f;
  if (v.pass) v.detail = "attention, cross-attention, losses, gradients, zero-init identities";
  return v;
}

// ---------------------------------------------------------------------------
// 2. Oracle suite.

world::Vec2 body_position_oracle(const world::SceneState& s, int body) {
  return body == world::kAgentBody ? s.agent_pos : s.objects[static_cast<std::size_t>(body - 1)].pos;
}

Verdict criterion_oracles(const fs::path& work) {
  std::vector<std::string> failures;
  const int size = 32;
  world::WorldConfig wc;
  wc.image_size = size;
  Rng rng(202);
  int checked = 0, mismatched = 0;
  for (int i = 0; i < 1000; ++i) {
    world::SceneState s = world::init_scene(1000 + i, i % world::kNumTemplates).state;
    const int warmup = static_cast<int>(rng() % 6);
    for (int t = 0; t < warmup; ++t) s = world::step_scene(s, world::scripted_policy(s, wc), wc);
    const world::KeypointSet k = world::keypoint_grid(size, s, wc);
    const world::Action a{static_cast<float>(2.0 * uniform01(rng) - 1.0),
                          static_cast<float>(2.0 * uniform01(rng) - 1.0),
                          uniform01(rng) < 0.5 ? -1.0f : 1.0f};
    const world::SceneState n = world::step_scene(s, a, wc);
    const world::KeypointSet k2 = world::track_keypoints(s, n, k, size);
    const float hi = std::nextafter(static_cast<float>(size), 0.0f);
    for (int p = 0; p < world::kNumKeypoints; ++p) {
      const int body = k.attachment[p];
      if (body == world::kBackground) {
        mismatched += k2.coords.row(p) != k.coords.row(p);
        continue;
      }
      const world::Vec2 b0 = body_position_oracle(s, body), b1 = body_position_oracle(n, body);
      const double dx = (b1.x - b0.x) * size, dy = (b1.y - b0.y) * size;
      const float ux = static_cast<float>(k.coords(p, 0) + dx);
      const float uy = static_cast<float>(k.coords(p, 1) + dy);
      const float ex = std::min(std::max(ux, 0.0f), hi), ey = std::min(std::max(uy, 0.0f), hi);
      ++checked;
      mismatched += k2.coords(p, 0) != ex || k2.coords(p, 1) != ey;
    }
  }
  if (mismatched > 0) failures.push_back(std::to_string(mismatched) + " keypoint mismatches");

  data::GenConfig gc;
  gc.n_trajectories = 40;
  gc.image_size = size;
  gc.seed = 9;
  gc.pretrain_actions = true;
  const fs::path a = work / "oracle_a", b = work / "oracle_b";
  fs::remove_all(a);
  fs::remove_all(b);
  data::generate_dataset(gc, a);
  data::generate_dataset(gc, b);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    ++files;
    const fs::path rel = fs::relative(e.path(), a);
    if (!fs::exists(b / rel) || slurp(e.path()) != slurp(b / rel)) {
      failures.push_back("byte mismatch in " + rel.string());
      break;
    }
  }
  std::size_t files_b = 0;
  for (const auto& e : fs::recursive_directory_iterator(b)) files_b += e.is_regular_file();
  if (files != files_b) failures.push_back("file counts differ");

  const data::Dataset ds = data::Dataset::open(a);
  const world::WorldConfig w = gc.world();
  int replayed = 0;
  for (const char* split : {data::kSplitPretrain, data::kSplitFinetune, data::kSplitEval}) {
    for (const auto& tr : ds.split(split)) {
      world::SceneState s = world::init_scene(tr.seed, tr.template_id(), tr.combo()).state;
      world::KeypointSet k = world::keypoint_grid(w.image_size, s, w);
      bool ok = true;
      for (int t = 0; t < tr.length && ok; ++t) {
        if (t > 0) {
          const world::SceneState n = world::step_scene(s, (*tr.actions)[t - 1], w);
          k = world::track_keypoints(s, n, k, w.image_size);
          s = n;
        }
        const world::Frame f = world::render(s, w);
        ok = std::memcmp(f.pixels.data(), tr.frame(t), f.pixels.size() * sizeof(float)) == 0 &&
             std::memcmp(k.coords.data(), tr.track(t), 512 * sizeof(float)) == 0;
      }
      if (!ok) failures.push_back("replay mismatch in " + tr.name);
      ++replayed;
    }
  }
  fs::remove_all(a);
  fs::remove_all(b);

  Verdict v;
  v.pass = failures.empty() && checked > 0;
  v.detail = std::to_string(checked) + " attached keypoints, " + std::to_string(files) +
             " files byte-identical, " + std::to_string(replayed) + " trajectories replayed";
  for (const auto& f : failures) v.detail += "; " + f;
  return v;
}

// ---------------------------------------------------------------------------
// 3. Action-blindness.

Verdict criterion_action_blindness(const fs::path& work) {
  data::GenConfig gc;
  gc.n_trajectories = 60;
  gc.image_size = 32;
  gc.seed = 13;
  const fs::path plain = work / "blind_data", with = work / "blind_data_actions";
  fs::remove_all(plain);
  fs::remove_all(with);
  data::generate_dataset(gc, plain);
  gc.pretrain_actions = true;
  data::generate_dataset(gc, with);
  int action_files = 0;
  for (const auto& e : fs::recursive_directory_iterator(with)) {
    action_files += e.path().filename() == "actions.bin";
  }
  pretrain::PretrainConfig pc;
  pc.model = desk_model();
  pc.batch_size = kDeskBatch;
  pc.steps = 100;
  pc.checkpoint_every = 0;
  pc.seed = 4;
  fs::remove_all(work / "blind_a");
  fs::remove_all(work / "blind_b");
  pretrain::run_pretraining(pc, plain, work / "blind_a");
  pretrain::run_pretraining(pc, with, work / "blind_b");
  const std::string la = slurp(work / "blind_a" / "metrics.ndjson");
  const std::string lb = slurp(work / "blind_b" / "metrics.ndjson");
  Verdict v;
  v.pass = !la.empty() && la == lb && action_files == gc.n_trajectories;
  v.detail = std::to_string(std::count(la.begin(), la.end(), '\n')) + " log lines, " +
             (la == lb ? "identical" : "DIFFERENT") + " with " + std::to_string(action_files) +
             " extra action files";
  for (const char* d : {"blind_a", "blind_b", "blind_data", "blind_data_actions"}) {
    fs::remove_all(work / d);
  }
  return v;
}

// ---------------------------------------------------------------------------
// 4. Metric calibration.

DTensor gaussian(int rows, int cols, uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  DTensor x(rows, cols);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = d(rng);
  return x;
}

// Mean squared z-scored test action, i.e. the error of the train mean.
double normalized_variance(const DTensor& a_train, const DTensor& a_test) {
  double total = 0.0;
  for (Eigen::Index c = 0; c < a_train.cols(); ++c) {
    const double mu = a_train.col(c).mean();
    const double var = (a_train.col(c).array() - mu).square().mean();
    total += (a_test.col(c).array() - mu).square().sum() / var;
  }
  return total / static_cast<double>(a_test.size());
}

Verdict criterion_calibration(const data::Dataset& ds, const fs::path& work) {
  const Model model = Model::create(desk_model(), 5);
  const auto& split = ds.split(data::kSplitEval);
  const eval::TransitionSet t = eval::extract_transitions(model, split);
  // Trajectory-grouped 70/30 split.
  std::vector<int> train_rows, test_rows;
  for (int r = 0; r < static_cast<int>(t.trajectory.size()); ++r) {
    (derive_seed(77, static_cast<uint64_t>(t.trajectory[r])) % 10 < 7 ? train_rows : test_rows).push_back(r);
  }
  auto take = [](const DTensor& x, const std::vector<int>& rows) {
    DTensor out(static_cast<Eigen::Index>(rows.size()), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(rows[i]);
    return out;
  };
  std::vector<int> groups;
  for (int r : train_rows) groups.push_back(t.trajectory[r]);
  const DTensor a_tr = take(t.actions, train_rows), a_te = take(t.actions, test_rows);
  const double lp_gt = eval::lp_mse(a_tr, a_tr, a_te, a_te, {}, 0, groups);
  const DTensor z_tr = gaussian(static_cast<int>(train_rows.size()), 64, 1);
  const DTensor z_te = gaussian(static_cast<int>(test_rows.size()), 64, 2);
  const double lp_rand = eval::lp_mse(z_tr, a_tr, z_te, a_te, {}, 0, groups);
  const double var = normalized_variance(a_tr, a_te);

  const double sp_planted = eval::spcfc(t.f_next, t.f_next, 0, t.trajectory).value;
  const double sp_noise =
      eval::spcfc(gaussian(static_cast<int>(t.f_next.rows()), static_cast<int>(t.z.cols()), 3),
                  t.f_next, 0, t.trajectory).value;

  eval::EvalConfig ec;
  const eval::MetricsReport sem =
      eval::evaluate_semantic(model, ds, ec, eval::SemanticVariant::kInitialLatents, true);
  const double chance = 1.0 / world::kNumLabels;
  (void)work;

  Verdict v;
  const bool ok_gt = lp_gt < 1e-3;
  const bool ok_rand = std::abs(lp_rand - var) <= 0.1 * var;
  const bool ok_planted = sp_planted > 0.95;
  const bool ok_noise = sp_noise < 0.1;
  const bool ok_sem = std::abs(sem.value - chance) <= 0.05;
  v.pass = ok_gt && ok_rand && ok_planted && ok_noise && ok_sem;
  v.detail = "LP-MSE(gt)=" + fmt("%.2e", lp_gt) + " LP-MSE(rand)=" + fmt("%.3f", lp_rand) +
             " vs var " + fmt("%.3f", var) + ", S-PCFC planted=" + fmt("%.3f", sp_planted) +
             " noise=" + fmt("%.3f", sp_noise) + ", shuffled acc=" + fmt("%.3f", sem.value) +
             " vs chance " + fmt("%.3f", chance);
  return v;
}

// ---------------------------------------------------------------------------
// 5-8. Directional reproductions.

struct Arm {
  std::string name;
  pretrain::Objective objective;
  bool zero_ctx;
  bool finetune;
};

const std::vector<Arm>& arms() {
  static const std::vector<Arm> a = {
      {"multi", pretrain::Objective::kMulti, false, true},
      {"frame_only", pretrain::Objective::kFrameOnly, false, true},
      {"point_only", pretrain::Objective::kPointOnly, false, true},
      {"frame_only_zero_ctx", pretrain::Objective::kFrameOnly, true, false},
  };
  return a;
}

struct SeedResults {
  std::map<std::string, double> lp, spcfc, sr;
  std::map<std::string, double> semantic;  // multi latents per variant
};

// Fine-tunes (or reuses a finished fine-tune) and returns rollout success.
double finetune_and_roll(const finetune::FinetuneConfig& fc, const fs::path& data_root,
                         const fs::path& out, const Options& opt, uint64_t seed) {
  fs::path ckpt = out / "final";
  if (!fs::exists(out / "summary.json")) {
    fs::remove_all(out);
    ckpt = finetune::run_finetune(fc, data_root, out).checkpoint;
  }
  const Model m = load_checkpoint(ckpt).model;
  eval::EvalConfig ec;
  ec.seed = seed;
  ec.n_episodes = opt.episodes;
  return eval::evaluate_rollout(m, ec).value;
}

SeedResults run_seed(const Options& opt, const data::Dataset& ds, const fs::path& data_root,
                     uint64_t seed) {
  SeedResults res;
  eval::EvalConfig ec;
  ec.seed = seed;
  for (const Arm& arm : arms()) {
    const fs::path dir = opt.work / ("seed" + std::to_string(seed)) / arm.name;
    pretrain::PretrainConfig pc;
    pc.model = desk_model();
    pc.batch_size = kDeskBatch;
    pc.steps = opt.steps;
    pc.seed = seed;
    pc.objective = arm.objective;
    pc.zero_frame_context = arm.zero_ctx;
    const double t0 = now_s();
    const fs::path final_dir = pretrain::run_pretraining(pc, data_root, dir / "pretrain");
    const Model m = load_checkpoint(final_dir).model;
    res.lp[arm.name] = eval::evaluate_lp_mse(m, ds, ec).value;
    res.spcfc[arm.name] = eval::evaluate_spcfc(m, ds, ec).value;
    if (arm.name == "multi") {
      for (auto v : {eval::SemanticVariant::kInitial, eval::SemanticVariant::kInitialRepeated,
                     eval::SemanticVariant::kInitialLatents}) {
        res.semantic[eval::variant_name(v)] = eval::evaluate_semantic(m, ds, ec, v).value;
      }
    }
    if (arm.finetune) {
      finetune::FinetuneConfig fc;
      fc.seed = seed;
      fc.pretrain_checkpoint = final_dir.string();
      res.sr[arm.name] = finetune_and_roll(fc, data_root, dir / "finetune", opt, seed);
    }
    say("  seed " + std::to_string(seed) + " " + arm.name + ": lp=" + fmt("%.4f", res.lp[arm.name]) +
        " spcfc=" + fmt("%.4f", res.spcfc[arm.name]) +
        (arm.finetune ? " sr=" + fmt("%.2f", res.sr[arm.name]) : "") + " (" +
        fmt("%.0f", now_s() - t0) + " s)");
  }
  finetune::FinetuneConfig fc;
  fc.seed = seed;
  fc.from_scratch = true;
  fc.model = desk_model();
  res.sr["scratch"] = finetune_and_roll(
      fc, data_root, opt.work / ("seed" + std::to_string(seed)) / "scratch" / "finetune", opt, seed);
  say("  seed " + std::to_string(seed) + " scratch: sr=" + fmt("%.2f", res.sr["scratch"]));
  return res;
}

double mean_over(const std::vector<SeedResults>& runs,
                 const std::function<double(const SeedResults&)>& f) {
  double s = 0.0;
  for (const auto& r : runs) s += f(r);
  return s / static_cast<double>(runs.size());
}

int seeds_where(const std::vector<SeedResults>& runs,
                const std::function<bool(const SeedResults&)>& f) {
  int n = 0;
  for (const auto& r : runs) n += f(r);
  return n;
}

// ---------------------------------------------------------------------------
// 9. Checkpoint round trip and resume.

Verdict criterion_checkpoint(const fs::path& work, const fs::path& data_root,
                             const fs::path& vla_checkpoint) {
  std::vector<std::string> failures;
  const Model m = load_checkpoint(vla_checkpoint).model;
  const fs::path copy = work / "roundtrip";
  fs::remove_all(copy);
  save_checkpoint(copy, m);
  const Model back = load_checkpoint(copy).model;
  int identical = 0;
  for (int i = 0; i < 10; ++i) {
    Rng rng(900 + i);
    std::vector<float> frame(static_cast<std::size_t>(m.cfg.image_size) * m.cfg.image_size * 3);
    for (float& v : frame) v = static_cast<float>(uniform01(rng));
    const auto& words = world::all_instructions();
    const std::string instr = words[rng() % words.size()];
    auto run = [&](const Model& x) {
      ag::Graph g;
      g.set_grad_enabled(false);
      const Model::Latent lat = x.latent(g, x.encode(g, {frame.data()}).f_v, {x.prompt(instr)});
      return std::make_pair(lat.z->value, x.action_output(g, lat.z, 1)->value);
    };
    const auto a = run(m), b = run(back);
    identical += bitwise_equal(a.first, b.first) && bitwise_equal(a.second, b.second);
  }
  if (identical != 10) failures.push_back(std::to_string(10 - identical) + " forward mismatches");
  fs::remove_all(copy);

  pretrain::PretrainConfig pc;
  pc.model = desk_model();
  pc.batch_size = kDeskBatch;
  pc.steps = 30;
  pc.checkpoint_every = 10;
  pc.seed = 6;
  const fs::path full = work / "resume_full", cut = work / "resume_cut";
  fs::remove_all(full);
  fs::remove_all(cut);
  pretrain::run_pretraining(pc, data_root, full);
  pretrain::RunHooks stop;
  stop.stop_after = 15;
  pretrain::run_pretraining(pc, data_root, cut, stop);
  pretrain::run_pretraining(pc, data_root, cut);
  const std::string lf = slurp(full / "metrics.ndjson"), lc = slurp(cut / "metrics.ndjson");
  if (lf.empty() || lf != lc) failures.push_back("resumed log differs");
  if (slurp(full / "final" / "tensors.bin") != slurp(cut / "final" / "tensors.bin")) {
    failures.push_back("resumed weights differ");
  }
  fs::remove_all(full);
  fs::remove_all(cut);

  Verdict v;
  v.pass = failures.empty();
  v.detail = std::to_string(identical) + "/10 inputs bitwise, resume after step 15 of 30";
  for (const auto& f : failures) v.detail += "; " + f;
  return v;
}

// ---------------------------------------------------------------------------

int run(int argc, char** argv) {
  Options opt;
  CLI::App app{"End-to-end acceptance run"};
  app.add_option("--work", opt.work, "Directory for datasets, runs and results (reused)");
  app.add_option("--seeds", opt.seeds, "Seeds for the directional runs")->check(CLI::Range(1, 10));
  app.add_option("--steps", opt.steps, "Pretraining steps per run")->check(CLI::PositiveNumber);
  app.add_option("--trajectories", opt.trajectories, "Dataset size")->check(CLI::Range(200, 100000));
  app.add_option("--episodes", opt.episodes, "Rollout episodes per policy")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(opt.work);
  log_file().open(opt.work / "acceptance.log");

  std::vector<std::pair<std::string, Verdict>> verdicts;
  io::json record = io::json::object();
  auto report = [&](int id, const std::string& name, const Verdict& v, double seconds) {
    const std::string line = std::string(v.pass ? "PASS" : "FAIL") + " criterion " +
                             std::to_string(id) + " " + name + ": " + v.detail + " [" +
                             fmt("%.0f", seconds) + " s]";
    say(line);
    verdicts.emplace_back(name, v);
    record["criteria"][std::to_string(id)] = {
        {"name", name}, {"pass", v.pass}, {"detail", v.detail}, {"seconds", seconds}};
  };
  auto guarded = [&](int id, const std::string& name, double limit_s,
                     const std::function<Verdict()>& fn) {
    const double t0 = now_s();
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail = std::string("error: ") + e.what();
    }
    const double dt = now_s() - t0;
    if (limit_s > 0 && dt > limit_s) {
      v.pass = false;
      v.detail += "; exceeded " + fmt("%.0f", limit_s) + " s budget";
    }
    report(id, name, v, dt);
  };

  guarded(1, "numerical-core", 60, criterion_numerical_core);
  guarded(2, "oracle-suite", 60, [&] { return criterion_oracles(opt.work); });
  guarded(3, "action-blindness", 300, [&] { return criterion_action_blindness(opt.work); });

  // Shared dataset for criteria 4-9.
  const fs::path data_root = opt.work / "data";
  data::GenConfig gc;
  gc.n_trajectories = opt.trajectories;
  gc.image_size = desk_model().image_size;
  gc.seed = opt.data_seed;
  bool have_data = false;
  if (fs::exists(data_root / "manifest.json")) {
    const data::DatasetManifest m =
        data::DatasetManifest::from_json(io::read_json(data_root / "manifest.json"));
    have_data = m.n_trajectories == gc.n_trajectories && m.image_size == gc.image_size &&
                m.generator_seed == gc.seed && m.horizon == gc.horizon;
  }
  if (!have_data) {
    fs::remove_all(data_root);
    data::generate_dataset(gc, data_root);
  }
  const data::Dataset ds = data::Dataset::open(data_root);

  guarded(4, "metric-calibration", 300, [&] { return criterion_calibration(ds, opt.work); });

  // Directional runs shared by criteria 5-8.
  std::vector<SeedResults> runs;
  std::string run_error;
  const double t_runs = now_s();
  try {
    for (int s = 0; s < opt.seeds; ++s) runs.push_back(run_seed(opt, ds, data_root, s));
  } catch (const std::exception& e) {
    run_error = e.what();
  }
  const double runs_s = now_s() - t_runs;
  const int need = (opt.seeds * 2 + 2) / 3;  // 2 of 3
  auto directional = [&](int id, const std::string& name, double limit_s,
                         const std::function<Verdict()>& fn) {
    if (!run_error.empty()) {
      report(id, name, Verdict{false, "runs failed: " + run_error}, runs_s);
      return;
    }
    Verdict v = fn();
    if (limit_s > 0 && runs_s > limit_s) {
      v.pass = false;
      v.detail += "; runs exceeded " + fmt("%.0f", limit_s) + " s budget";
    }
    report(id, name, v, runs_s);
  };

  directional(5, "objective-ablation", 3600, [&] {
    const int lp_wins = seeds_where(runs, [](const SeedResults& r) {
      return r.lp.at("multi") < r.lp.at("frame_only") && r.lp.at("multi") < r.lp.at("point_only");
    });
    const int sr_wins = seeds_where(runs, [](const SeedResults& r) {
      return r.sr.at("multi") > r.sr.at("frame_only") && r.sr.at("multi") > r.sr.at("point_only");
    });
    Verdict v;
    v.pass = lp_wins >= need && sr_wins >= need;
    std::string d = "(a) LP-MSE multi lowest in " + std::to_string(lp_wins) + "/" +
                    std::to_string(runs.size()) + " seeds, (b) success multi highest in " +
                    std::to_string(sr_wins) + "/" + std::to_string(runs.size()) + "; means";
    for (const char* a : {"multi", "frame_only", "point_only"}) {
      d += std::string(" ") + a + " lp=" +
           fmt("%.4f", mean_over(runs, [a](const SeedResults& r) { return r.lp.at(a); })) +
           " sr=" + fmt("%.3f", mean_over(runs, [a](const SeedResults& r) { return r.sr.at(a); }));
    }
    v.detail = d;
    return v;
  });
  directional(6, "semantic-latents", 0, [&] {
    const double init = mean_over(runs, [](const SeedResults& r) { return r.semantic.at("initial"); });
    const double rep =
        mean_over(runs, [](const SeedResults& r) { return r.semantic.at("initial_repeated"); });
    const double lat =
        mean_over(runs, [](const SeedResults& r) { return r.semantic.at("initial_latents"); });
    Verdict v;
    v.pass = lat - rep >= 0.15 && std::abs(rep - init) <= 0.03;
    v.detail = "initial=" + fmt("%.3f", init) + " repeated=" + fmt("%.3f", rep) +
               " latents=" + fmt("%.3f", lat) + " (gap " + fmt("%.3f", lat - rep) + ")";
    return v;
  });
  directional(7, "shortcut-ablation", 0, [&] {
    const int wins = seeds_where(runs, [](const SeedResults& r) {
      return r.spcfc.at("multi") < r.spcfc.at("frame_only_zero_ctx");
    });
    Verdict v;
    v.pass = wins >= need;
    v.detail = "S-PCFC multi below zero-context frame_only in " + std::to_string(wins) + "/" +
               std::to_string(runs.size()) + " seeds; means multi=" +
               fmt("%.3f", mean_over(runs, [](const SeedResults& r) { return r.spcfc.at("multi"); })) +
               " zero_ctx=" +
               fmt("%.3f", mean_over(runs, [](const SeedResults& r) {
                     return r.spcfc.at("frame_only_zero_ctx");
                   }));
    return v;
  });
  directional(8, "finetune-value", 0, [&] {
    const double pre = mean_over(runs, [](const SeedResults& r) { return r.sr.at("multi"); });
    const double scratch = mean_over(runs, [](const SeedResults& r) { return r.sr.at("scratch"); });
    Verdict v;
    v.pass = pre - scratch >= 0.10;
    v.detail = "success pretrained=" + fmt("%.3f", pre) + " scratch=" + fmt("%.3f", scratch) +
               " (gap " + fmt("%+.3f", pre - scratch) + ", need +0.100)";
    return v;
  });

  const fs::path vla = opt.work / "seed0" / "multi" / "finetune" / "final";
  guarded(9, "checkpoint-roundtrip", 0, [&] { return criterion_checkpoint(opt.work, data_root, vla); });

  int passed = 0;
  for (const auto& [name, v] : verdicts) passed += v.pass;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    io::json s;
    s["lp_mse"] = runs[i].lp;
    s["spcfc"] = runs[i].spcfc;
    s["success_rate"] = runs[i].sr;
    s["semantic"] = runs[i].semantic;
    record["seeds"][std::to_string(i)] = s;
  }
  record["passed"] = passed;
  io::write_json_atomic(opt.work / "acceptance.json", record);
  say("SUMMARY " + std::to_string(passed) + "/" + std::to_string(verdicts.size()) +
      " criteria passed");
  // The exit status reports whether the harness itself ran; verdicts are in
  // the PASS/FAIL lines.
  return verdicts.size() == 9 ? 0 : 2;
}

}  // namespace
}  // namespace care::acceptance

int main(int argc, char** argv) { return care::acceptance::run(argc, argv); }
