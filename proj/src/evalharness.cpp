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

#include "care/evalharness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>
#include <tuple>

#include "care/finetune.hpp"
#include "care/nn.hpp"
#include "care/optim.hpp"

namespace care::eval {

namespace {

std::vector<int> permutation(int n, uint64_t seed) {
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

DTensor take_rows(const DTensor& x, const std::vector<int>& rows) {
  DTensor out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(i) = x.row(rows[i]);
  return out;
}

// Splits rows into (held, rest) with about `fraction` of the groups held.
// Without groups every row is its own group.
std::pair<std::vector<int>, std::vector<int>> split_groups(int n, const std::vector<int>& groups,
                                                           double fraction, uint64_t seed) {
  if (!groups.empty() && static_cast<int>(groups.size()) != n) {
    throw ShapeError("group ids must match the row count");
  }
  std::vector<int> ids;
  if (groups.empty()) {
    ids.resize(n);
    std::iota(ids.begin(), ids.end(), 0);
  } else {
    ids = groups;
  }
  std::vector<int> distinct = ids;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  const int n_groups = static_cast<int>(distinct.size());
  const std::vector<int> perm = permutation(n_groups, seed);
  const int n_held = static_cast<int>(std::round(n_groups * fraction));
  std::set<int> held;
  for (int i = 0; i < n_held; ++i) held.insert(distinct[perm[i]]);
  std::pair<std::vector<int>, std::vector<int>> out;
  for (int r = 0; r < n; ++r) (held.count(ids[r]) ? out.first : out.second).push_back(r);
  return out;
}

struct Standardizer {
  DTensor mu;
  DTensor scale;

  static Standardizer fit(const DTensor& x) {
    Standardizer s;
    s.mu = x.colwise().mean();
    s.scale = DTensor::Ones(1, x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      const double var = (x.col(c).array() - s.mu(0, c)).square().mean();
      if (var > 1e-24) s.scale(0, c) = std::sqrt(var);
    }
    return s;
  }
  DTensor apply(const DTensor& x) const {
    DTensor out = x;
    out.rowwise() -= mu.row(0);
    out.array().rowwise() /= scale.row(0).array();
    return out;
  }
};

double mse(const DTensor& a, const DTensor& b) {
  return (a - b).array().square().mean();
}

Tensor to_float(const DTensor& x) { return x.cast<float>(); }

void require_finite(const DTensor& x, const char* what) {
  if (!x.allFinite()) throw InputError(std::string(what) + " contains non-finite values");
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

io::json model_identity(const Model& model) {
  return {{"model", model.cfg.to_json()},
          {"stage", model.stage},
          {"weights", tensor_digest(model.store)}};
}

}  // namespace

// ---------------------------------------------------------------------------

io::json MetricsReport::to_json() const {
  io::json j = {{"metric_name", metric_name}, {"value", value},   {"n_samples", n_samples},
                {"seed", seed},               {"config_digest", config_digest},
                {"label", label.empty() ? metric_name : label},   {"details", details}};
  j["std_error"] = std_error ? io::json(*std_error) : io::json(nullptr);
  return j;
}

MetricsReport MetricsReport::from_json(const io::json& j) {
  io::reject_unknown_keys(j, {"metric_name", "value", "n_samples", "seed", "config_digest",
                              "label", "details", "std_error"},
                          "metrics report");
  MetricsReport r;
  try {
    r.metric_name = j.at("metric_name").get<std::string>();
    r.value = j.at("value").get<double>();
    r.n_samples = j.at("n_samples").get<int64_t>();
    r.seed = j.at("seed").get<uint64_t>();
    r.config_digest = j.at("config_digest").get<std::string>();
    r.label = j.value("label", r.metric_name);
    if (j.contains("details")) r.details = j.at("details");
    if (j.contains("std_error") && !j.at("std_error").is_null()) {
      r.std_error = j.at("std_error").get<double>();
    }
  } catch (const io::json::exception& e) {
    throw InputError(std::string("metrics report: ") + e.what());
  }
  return r;
}

std::string config_digest(const io::json& cfg) { return io::fnv1a_hex(cfg.dump()); }

// ---------------------------------------------------------------------------

DTensor RidgeFit::predict(const DTensor& x) const {
  if (x.cols() != w.rows()) throw ShapeError("ridge predict: input width mismatch");
  DTensor xs = x;
  xs.rowwise() -= mu.row(0);
  xs.array().rowwise() /= scale.row(0).array();
  DTensor out = xs * w;
  out.rowwise() += b.row(0);
  return out;
}

RidgeFit fit_ridge(const DTensor& x, const DTensor& y, double lambda) {
  if (x.rows() != y.rows()) throw ShapeError("ridge: row count mismatch");
  if (x.rows() < 2) throw InputError("ridge: need at least two rows");
  if (lambda < 0.0) throw ConfigError("ridge: lambda must be non-negative");
  require_finite(x, "ridge inputs");
  require_finite(y, "ridge targets");
  const Standardizer s = Standardizer::fit(x);
  const DTensor xs = s.apply(x);
  const DTensor y_mu = y.colwise().mean();
  DTensor yc = y;
  yc.rowwise() -= y_mu.row(0);
  RidgeFit fit;
  fit.mu = s.mu;
  fit.scale = s.scale;
  fit.lambda = lambda;
  // Tiny jitter keeps the unregularized solve well-posed on rank-deficient inputs.
  const double jitter = 1e-10 * static_cast<double>(x.rows());
  if (x.cols() <= x.rows()) {
    DTensor gram = xs.transpose() * xs;
    gram.diagonal().array() += lambda + jitter;
    fit.w = gram.ldlt().solve(xs.transpose() * yc);
  } else {
    DTensor gram = xs * xs.transpose();
    gram.diagonal().array() += lambda + jitter;
    fit.w = xs.transpose() * gram.ldlt().solve(yc);
  }
  fit.b = y_mu;
  return fit;
}

RidgeFit fit_ridge_cv(const DTensor& x, const DTensor& y, const std::vector<double>& lambdas,
                      double val_fraction, uint64_t seed, const std::vector<int>& groups) {
  if (lambdas.empty()) throw ConfigError("ridge: empty lambda grid");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw ConfigError("ridge: val_fraction must be in (0, 1)");
  }
  if (x.rows() != y.rows()) throw ShapeError("ridge: row count mismatch");
  const auto [val, tr] = split_groups(static_cast<int>(x.rows()), groups, val_fraction, seed);
  if (val.empty() || tr.size() < 2) throw InputError("ridge: too few rows for validation");
  const DTensor x_tr = take_rows(x, tr), y_tr = take_rows(y, tr);
  const DTensor x_val = take_rows(x, val), y_val = take_rows(y, val);
  double best = std::numeric_limits<double>::infinity();
  double best_lambda = lambdas.front();
  for (double l : lambdas) {
    const double err = mse(fit_ridge(x_tr, y_tr, l).predict(x_val), y_val);
    if (err < best) {
      best = err;
      best_lambda = l;
    }
  }
  return fit_ridge(x, y, best_lambda);
}

// ---------------------------------------------------------------------------

namespace {

struct Mlp {
  ParamStore store;
  nn::Linear l1, l2;

  Mlp(int in, int hidden, int out, uint64_t seed) {
    Rng rng(seed);
    l1 = nn::Linear::make(store, "l1", in, hidden, rng);
    l2 = nn::Linear::make(store, "l2", hidden, out, rng);
  }
  ag::Var forward(ag::Graph& g, ag::Var x) const { return l2(g, ag::gelu(g, l1(g, x))); }
  Tensor predict(const Tensor& x) const {
    ag::Graph g;
    g.set_grad_enabled(false);
    return forward(g, g.constant(x))->value;
  }
};

}  // namespace

double lp_mse(const DTensor& z_train, const DTensor& a_train, const DTensor& z_test,
              const DTensor& a_test, const ProbeConfig& cfg, uint64_t seed,
              const std::vector<int>& groups) {
  if (z_train.rows() != a_train.rows() || z_test.rows() != a_test.rows()) {
    throw ShapeError("lp_mse: latent and action row counts differ");
  }
  if (z_train.cols() != z_test.cols() || a_train.cols() != a_test.cols()) {
    throw ShapeError("lp_mse: train and test widths differ");
  }
  if (z_train.rows() < 200) {
    throw InputError("lp_mse: need at least 200 training transitions, got " +
                     std::to_string(z_train.rows()));
  }
  if (z_test.rows() < 1) throw InputError("lp_mse: empty test split");
  const Standardizer a_norm = Standardizer::fit(a_train);
  const DTensor y_train = a_norm.apply(a_train);
  const DTensor y_test = a_norm.apply(a_test);
  if (cfg.kind == ProbeKind::kAffine) {
    const RidgeFit fit =
        fit_ridge_cv(z_train, y_train, default_lambdas(), cfg.val_fraction, seed, groups);
    return mse(fit.predict(z_test), y_test);
  }
  const Standardizer z_norm = Standardizer::fit(z_train);
  const Tensor x = to_float(z_norm.apply(z_train));
  const Tensor y = to_float(y_train);
  Mlp mlp(static_cast<int>(x.cols()), cfg.mlp_hidden, static_cast<int>(y.cols()),
          derive_seed(seed, 0x9B0B));
  AdamConfig ac;
  ac.lr = cfg.mlp_lr;
  Adam opt(ac);
  for (int e = 0; e < cfg.mlp_epochs; ++e) {
    mlp.store.zero_grad();
    ag::Graph g;
    ag::Var loss = ag::mse(g, mlp.forward(g, g.constant(x)), y);
    g.backward(loss);
    g.flush_param_grads();
    opt.step(mlp.store);
  }
  const DTensor pred = mlp.predict(to_float(z_norm.apply(z_test))).cast<double>();
  return mse(pred, y_test);
}

SpcfcResult spcfc(const DTensor& z, const DTensor& f_next, uint64_t seed,
                  const std::vector<int>& groups) {
  if (z.rows() != f_next.rows()) throw ShapeError("spcfc: row count mismatch");
  if (z.rows() < 500) {
    throw InputError("spcfc: need at least 500 transitions, got " + std::to_string(z.rows()));
  }
  const auto [fit_rows, test_rows] =
      split_groups(static_cast<int>(z.rows()), groups, 0.5, derive_seed(seed, 0x5CFC));
  if (fit_rows.size() < 2 || test_rows.size() < 2) throw InputError("spcfc: degenerate split");
  std::vector<int> fit_groups;
  if (!groups.empty()) {
    for (int r : fit_rows) fit_groups.push_back(groups[r]);
  }
  const RidgeFit fit = fit_ridge_cv(take_rows(z, fit_rows), take_rows(f_next, fit_rows),
                                    default_lambdas(), 0.2, derive_seed(seed, 1), fit_groups);
  const DTensor pred = fit.predict(take_rows(z, test_rows));
  const DTensor truth = take_rows(f_next, test_rows);
  SpcfcResult r;
  double sum = 0.0;
  for (Eigen::Index c = 0; c < truth.cols(); ++c) {
    const Eigen::ArrayXd t = truth.col(c).array() - truth.col(c).mean();
    const Eigen::ArrayXd p = pred.col(c).array() - pred.col(c).mean();
    const double vt = t.square().sum();
    if (vt <= 1e-20) {
      ++r.dims_excluded;
      continue;
    }
    const double vp = p.square().sum();
    // A constant readout carries no information about the target.
    const double corr = vp <= 1e-30 ? 0.0 : (t * p).sum() / std::sqrt(vt * vp);
    sum += std::abs(corr);
    ++r.dims_used;
  }
  if (r.dims_used == 0) throw InputError("spcfc: every target dimension has zero variance");
  r.value = std::clamp(sum / r.dims_used, 0.0, 1.0);
  return r;
}

double classifier_accuracy(const DTensor& x_train, const std::vector<int>& y_train,
                           const DTensor& x_test, const std::vector<int>& y_test, int n_classes,
                           const ClassifierConfig& cfg, uint64_t seed) {
  if (x_train.rows() != static_cast<Eigen::Index>(y_train.size()) ||
      x_test.rows() != static_cast<Eigen::Index>(y_test.size())) {
    throw ShapeError("classifier: label count mismatch");
  }
  if (x_train.cols() != x_test.cols()) throw ShapeError("classifier: width mismatch");
  if (x_train.rows() == 0 || x_test.rows() == 0) throw InputError("classifier: empty split");
  for (int y : y_train) {
    if (y < 0 || y >= n_classes) throw InputError("classifier: label out of range");
  }
  const Standardizer s = Standardizer::fit(x_train);
  const Tensor x = to_float(s.apply(x_train));
  Mlp mlp(static_cast<int>(x.cols()), cfg.hidden, n_classes, derive_seed(seed, 0xC1A5));
  AdamConfig ac;
  ac.lr = cfg.lr;
  Adam opt(ac);
  for (int e = 0; e < cfg.epochs; ++e) {
    mlp.store.zero_grad();
    ag::Graph g;
    ag::Var loss = ag::softmax_cross_entropy(g, mlp.forward(g, g.constant(x)), y_train);
    g.backward(loss);
    g.flush_param_grads();
    opt.step(mlp.store);
  }
  const Tensor logits = mlp.predict(to_float(s.apply(x_test)));
  int correct = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index arg = 0;
    logits.row(i).maxCoeff(&arg);
    if (arg == y_test[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(y_test.size());
}

// ---------------------------------------------------------------------------

namespace {

DTensor flatten_rows(const Tensor& x, int batch) {
  const Eigen::Index per = x.size() / batch;
  return Eigen::Map<const Tensor>(x.data(), batch, per).cast<double>();
}

}  // namespace

TransitionSet extract_transitions(const Model& model, const std::vector<data::Trajectory>& trajs) {
  const int width_z = model.cfg.n_latent * model.cfg.d_l;
  const int width_f = model.cfg.n_patches() * model.cfg.d_v;
  int total = 0;
  bool have_actions = !trajs.empty();
  for (const auto& tr : trajs) {
    if (tr.image_size != model.cfg.image_size) {
      throw ConfigError("trajectory " + tr.name + " image size does not match the model");
    }
    total += std::max(0, tr.length - 1);
    have_actions = have_actions && tr.actions.has_value();
  }
  TransitionSet out;
  out.z.resize(total, width_z);
  out.f_next.resize(total, width_f);
  if (have_actions) out.actions.resize(total, 3);
  int row = 0;
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    const auto& tr = trajs[i];
    const int n = tr.length - 1;
    if (n <= 0) continue;
    std::vector<const float*> cur, next;
    for (int t = 0; t < n; ++t) {
      cur.push_back(tr.frame(t));
      next.push_back(tr.frame(t + 1));
    }
    ag::Graph g;
    g.set_grad_enabled(false);
    const Model::Encoded enc = model.encode(g, cur);
    const std::vector<text::TokenizedPrompt> prompts(n, model.prompt(tr.instruction));
    const Model::Latent lat = model.latent(g, enc.f_v, prompts);
    out.z.middleRows(row, n) = flatten_rows(lat.z->value, n);
    out.f_next.middleRows(row, n) = flatten_rows(model.target_features(next), n);
    if (have_actions) {
      for (int t = 0; t < n; ++t) {
        const world::Action& a = (*tr.actions)[t];
        out.actions.row(row + t) << a.dx, a.dy, a.grip;
      }
    }
    out.trajectory.insert(out.trajectory.end(), n, static_cast<int>(i));
    row += n;
  }
  return out;
}

const char* variant_name(SemanticVariant v) {
  switch (v) {
    case SemanticVariant::kInitial: return "initial";
    case SemanticVariant::kInitialRepeated: return "initial_repeated";
    case SemanticVariant::kInitialFrames: return "initial_frames";
    case SemanticVariant::kInitialLatents: return "initial_latents";
  }
  return "?";
}

SemanticVariant parse_variant(const std::string& s) {
  for (auto v : {SemanticVariant::kInitial, SemanticVariant::kInitialRepeated,
                 SemanticVariant::kInitialFrames, SemanticVariant::kInitialLatents}) {
    if (s == variant_name(v)) return v;
  }
  throw ConfigError("unknown semantic variant '" + s +
                    "' (expected initial, initial_repeated, initial_frames, initial_latents)");
}

namespace {

// Mean over patches of f_v for each frame: frames x d_l.
DTensor pooled_frames(const Tensor& f_v, int frames, int n_p) {
  DTensor out(frames, f_v.cols());
  for (int t = 0; t < frames; ++t) {
    out.row(t) = f_v.middleRows(t * n_p, n_p).colwise().mean().cast<double>();
  }
  return out;
}

DTensor semantic_row(const Model& model, const data::Trajectory& tr, SemanticVariant variant) {
  if (tr.length < kSemanticFrames) {
    throw InputError("semantic: trajectory " + tr.name + " has fewer than " +
                     std::to_string(kSemanticFrames) + " frames");
  }
  if (tr.image_size != model.cfg.image_size) {
    throw ConfigError("trajectory " + tr.name + " image size does not match the model");
  }
  const int n_p = model.cfg.n_patches();
  const int n_frames =
      variant == SemanticVariant::kInitialFrames || variant == SemanticVariant::kInitialLatents
          ? kSemanticFrames
          : 1;
  std::vector<const float*> frames;
  for (int t = 0; t < n_frames; ++t) frames.push_back(tr.frame(t));
  ag::Graph g;
  g.set_grad_enabled(false);
  const Model::Encoded enc = model.encode(g, frames);
  const DTensor pooled = pooled_frames(enc.f_v->value, n_frames, n_p);
  const Eigen::Index d = pooled.cols();
  switch (variant) {
    case SemanticVariant::kInitial:
      return pooled.row(0);
    case SemanticVariant::kInitialRepeated:
      return pooled.row(0).replicate(1, kSemanticFrames);
    case SemanticVariant::kInitialFrames:
      return Eigen::Map<const DTensor>(pooled.data(), 1, kSemanticFrames * d);
    case SemanticVariant::kInitialLatents: {
      // z_0..z_8 describe the transitions between the ten frames.
      const int n_z = kSemanticFrames - 1;
      const std::vector<text::TokenizedPrompt> prompts(n_z, model.prompt(tr.instruction));
      ag::Graph g2;
      g2.set_grad_enabled(false);
      const Tensor f_v = enc.f_v->value.topRows(static_cast<Eigen::Index>(n_z) * n_p);
      const Tensor z = model.latent(g2, g2.constant(f_v), prompts).z->value;
      const DTensor zf = flatten_rows(z, 1);
      DTensor row(1, d + zf.cols());
      row << pooled.row(0), zf;
      return row;
    }
  }
  throw ConfigError("unknown semantic variant");
}

}  // namespace

DTensor semantic_inputs(const Model& model, const std::vector<data::Trajectory>& trajs,
                        SemanticVariant variant) {
  DTensor out;
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    const DTensor row = semantic_row(model, trajs[i], variant);
    if (i == 0) out.resize(static_cast<Eigen::Index>(trajs.size()), row.cols());
    out.row(i) = row;
  }
  return out;
}

// ---------------------------------------------------------------------------

Policy scripted(const world::WorldConfig& cfg) {
  return [cfg](const world::SceneState& s, const world::Frame&, const std::string&) {
    return world::scripted_policy(s, cfg);
  };
}

Policy model_policy(const Model& model) {
  if (!model.action_head) throw ContractError("model_policy: checkpoint has no action head");
  return [&model](const world::SceneState&, const world::Frame& frame,
                  const std::string& instruction) {
    return finetune::act(model, frame, instruction);
  };
}

RolloutResult rollout_success(const Policy& policy, int n_episodes, uint64_t seed,
                              const world::WorldConfig& cfg) {
  if (n_episodes <= 0) throw ConfigError("rollout: n_episodes must be positive");
  RolloutResult r;
  r.n_episodes = n_episodes;
  int wins = 0;
  for (int i = 0; i < n_episodes; ++i) {
    const world::Demonstration demo = world::scripted_demonstration(
        derive_seed(seed, static_cast<uint64_t>(i), 0xE915), i % world::kNumTemplates,
        std::nullopt, cfg);
    world::SceneState s = demo.init.state;
    bool ok = world::check_success(s, cfg);
    for (int t = 0; t + 1 < cfg.horizon && !ok; ++t) {
      const world::Frame frame = world::render(s, cfg);
      s = world::step_scene(s, world::clip(policy(s, frame, demo.init.instruction)), cfg);
      ok = world::check_success(s, cfg);
    }
    r.successes.push_back(ok ? 1 : 0);
    wins += ok ? 1 : 0;
  }
  const double p = static_cast<double>(wins) / n_episodes;
  r.success_rate = p;
  r.std_error = std::sqrt(p * (1.0 - p) / n_episodes);
  return r;
}

// ---------------------------------------------------------------------------

io::json EvalConfig::to_json() const {
  return {{"checkpoint", checkpoint},
          {"data_root", data_root},
          {"label", label},
          {"seed", seed},
          {"probe",
           {{"kind", probe.kind == ProbeKind::kAffine ? "affine" : "mlp"},
            {"val_fraction", probe.val_fraction},
            {"mlp_hidden", probe.mlp_hidden},
            {"mlp_epochs", probe.mlp_epochs},
            {"mlp_lr", probe.mlp_lr}}},
          {"classifier",
           {{"hidden", classifier.hidden}, {"epochs", classifier.epochs}, {"lr", classifier.lr}}},
          {"n_episodes", n_episodes},
          {"semantic_variant", semantic_variant}};
}

EvalConfig EvalConfig::from_json(const io::json& j) {
  io::reject_unknown_keys(j, {"checkpoint", "data_root", "label", "seed", "probe", "classifier",
                              "n_episodes", "semantic_variant"},
                          "eval config");
  EvalConfig c;
  try {
    c.checkpoint = j.value("checkpoint", c.checkpoint);
    c.data_root = j.value("data_root", c.data_root);
    c.label = j.value("label", c.label);
    c.seed = j.value("seed", c.seed);
    c.n_episodes = j.value("n_episodes", c.n_episodes);
    c.semantic_variant = j.value("semantic_variant", c.semantic_variant);
    if (j.contains("probe")) {
      const io::json& p = j.at("probe");
      io::reject_unknown_keys(p, {"kind", "val_fraction", "mlp_hidden", "mlp_epochs", "mlp_lr"},
                              "eval config probe");
      const std::string kind = p.value("kind", std::string("affine"));
      if (kind == "affine") {
        c.probe.kind = ProbeKind::kAffine;
      } else if (kind == "mlp") {
        c.probe.kind = ProbeKind::kMlp;
      } else {
        throw ConfigError("eval config: probe.kind must be affine or mlp");
      }
      c.probe.val_fraction = p.value("val_fraction", c.probe.val_fraction);
      c.probe.mlp_hidden = p.value("mlp_hidden", c.probe.mlp_hidden);
      c.probe.mlp_epochs = p.value("mlp_epochs", c.probe.mlp_epochs);
      c.probe.mlp_lr = p.value("mlp_lr", c.probe.mlp_lr);
    }
    if (j.contains("classifier")) {
      const io::json& k = j.at("classifier");
      io::reject_unknown_keys(k, {"hidden", "epochs", "lr"}, "eval config classifier");
      c.classifier.hidden = k.value("hidden", c.classifier.hidden);
      c.classifier.epochs = k.value("epochs", c.classifier.epochs);
      c.classifier.lr = k.value("lr", c.classifier.lr);
    }
  } catch (const io::json::exception& e) {
    throw ConfigError(std::string("eval config: ") + e.what());
  }
  if (c.n_episodes <= 0) throw ConfigError("eval config: n_episodes must be positive");
  if (c.probe.mlp_hidden <= 0 || c.probe.mlp_epochs < 0 || c.classifier.hidden <= 0 ||
      c.classifier.epochs < 0) {
    throw ConfigError("eval config: widths and epochs must be positive");
  }
  parse_variant(c.semantic_variant);
  return c;
}

namespace {

MetricsReport make_report(const std::string& metric, double value, int64_t n,
                          const EvalConfig& cfg, const Model& model, io::json details) {
  MetricsReport r;
  r.metric_name = metric;
  r.value = value;
  r.n_samples = n;
  r.seed = cfg.seed;
  r.label = cfg.label.empty() ? metric : cfg.label;
  r.details = std::move(details);
  // Paths and labels do not change the result, so they stay out of the digest.
  io::json eval_cfg = cfg.to_json();
  eval_cfg.erase("checkpoint");
  eval_cfg.erase("data_root");
  eval_cfg.erase("label");
  r.config_digest = config_digest({{"metric", metric},
                                   {"eval", eval_cfg},
                                   {"checkpoint", model_identity(model)},
                                   {"details", r.details}});
  return r;
}

}  // namespace

MetricsReport evaluate_lp_mse(const Model& model, const data::Dataset& ds,
                              const EvalConfig& cfg) {
  const auto& trajs = ds.split(data::kSplitEval);
  const TransitionSet set = extract_transitions(model, trajs);
  if (set.actions.size() == 0) throw InputError("lp_mse: eval split carries no actions");
  const auto [test, train] = split_groups(static_cast<int>(set.z.rows()), set.trajectory, 0.3,
                                         derive_seed(cfg.seed, 0x1B));
  std::vector<int> train_groups;
  for (int r : train) train_groups.push_back(set.trajectory[r]);
  const double v = lp_mse(take_rows(set.z, train), take_rows(set.actions, train),
                          take_rows(set.z, test), take_rows(set.actions, test), cfg.probe,
                          derive_seed(cfg.seed, 0x1C), train_groups);
  return make_report("lp_mse", v, static_cast<int64_t>(test.size()), cfg, model,
                     {{"probe", cfg.probe.kind == ProbeKind::kAffine ? "affine" : "mlp"},
                      {"n_train", train.size()},
                      {"n_test", test.size()}});
}

MetricsReport evaluate_spcfc(const Model& model, const data::Dataset& ds,
                             const EvalConfig& cfg) {
  const TransitionSet set = extract_transitions(model, ds.split(data::kSplitEval));
  const SpcfcResult r = spcfc(set.z, set.f_next, cfg.seed, set.trajectory);
  return make_report("spcfc", r.value, set.z.rows(), cfg, model,
                     {{"dims_used", r.dims_used}, {"dims_excluded", r.dims_excluded}});
}

MetricsReport evaluate_semantic(const Model& model, const data::Dataset& ds,
                                const EvalConfig& cfg, SemanticVariant variant,
                                bool shuffle_labels) {
  // Trajectories are streamed from disk so the whole corpus is never resident.
  std::vector<std::string> names;
  for (const auto& [split, list] : ds.manifest().splits) {
    names.insert(names.end(), list.begin(), list.end());
  }
  std::sort(names.begin(), names.end());
  DTensor x;
  std::vector<int> labels;
  for (std::size_t i = 0; i < names.size(); ++i) {
    const data::Trajectory tr = data::load_trajectory(ds.root(), names[i]);
    const DTensor row = semantic_row(model, tr, variant);
    if (i == 0) x.resize(static_cast<Eigen::Index>(names.size()), row.cols());
    x.row(i) = row;
    labels.push_back(tr.task_label);
  }
  const std::set<int> distinct(labels.begin(), labels.end());
  if (distinct.size() < 20) {
    throw InputError("semantic: need at least 20 task labels, found " +
                     std::to_string(distinct.size()));
  }
  if (shuffle_labels) {
    Rng rng(derive_seed(cfg.seed, 0x5AFF));
    std::shuffle(labels.begin(), labels.end(), rng);
  }
  const int n = static_cast<int>(labels.size());
  const std::vector<int> perm = permutation(n, derive_seed(cfg.seed, 0x5E3));
  const std::vector<int> tr(perm.begin(), perm.begin() + n / 2);
  const std::vector<int> te(perm.begin() + n / 2, perm.end());
  std::vector<int> y_tr, y_te;
  for (int i : tr) y_tr.push_back(labels[i]);
  for (int i : te) y_te.push_back(labels[i]);
  const double acc = classifier_accuracy(take_rows(x, tr), y_tr, take_rows(x, te), y_te,
                                         world::kNumLabels, cfg.classifier,
                                         derive_seed(cfg.seed, 0x5E4));
  return make_report("semantic_accuracy", acc, static_cast<int64_t>(te.size()), cfg, model,
                     {{"variant", variant_name(variant)},
                      {"shuffled_labels", shuffle_labels},
                      {"n_labels", distinct.size()},
                      {"input_dim", x.cols()}});
}

MetricsReport evaluate_rollout(const Model& model, const EvalConfig& cfg) {
  world::WorldConfig wc;
  wc.image_size = model.cfg.image_size;
  const RolloutResult r = rollout_success(model_policy(model), cfg.n_episodes, cfg.seed, wc);
  MetricsReport rep = make_report("rollout_success", r.success_rate, r.n_episodes, cfg, model,
                                  io::json::object());
  rep.std_error = r.std_error;
  return rep;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<MetricsReport> ordered(const std::vector<MetricsReport>& reports) {
  if (reports.size() < 2) throw InputError("compare: need at least two reports");
  for (const auto& r : reports) {
    if (r.metric_name != reports.front().metric_name) {
      throw InputError("compare: mixed metric names '" + reports.front().metric_name +
                       "' and '" + r.metric_name + "'");
    }
  }
  std::vector<MetricsReport> out = reports;
  std::stable_sort(out.begin(), out.end(), [](const MetricsReport& a, const MetricsReport& b) {
    return std::tie(a.config_digest, a.seed, a.label) <
           std::tie(b.config_digest, b.seed, b.label);
  });
  return out;
}

std::string label_of(const MetricsReport& r) { return r.label.empty() ? r.metric_name : r.label; }

}  // namespace

std::string comparison_csv(const std::vector<MetricsReport>& reports) {
  std::ostringstream os;
  os << "name,value,n,seed\n";
  for (const auto& r : ordered(reports)) {
    os << csv_field(label_of(r)) << ',' << fmt(r.value) << ',' << r.n_samples << ',' << r.seed
       << '\n';
  }
  return os.str();
}

std::string comparison_svg(const std::vector<MetricsReport>& reports) {
  const std::vector<MetricsReport> rows = ordered(reports);
  const int bar_h = 22, gap = 8, left = 220, width = 640, top = 40;
  const int height = top + static_cast<int>(rows.size()) * (bar_h + gap) + 20;
  double vmax = 0.0;
  for (const auto& r : rows) vmax = std::max(vmax, r.value + r.std_error.value_or(0.0));
  if (vmax <= 0.0) vmax = 1.0;
  const double span = width - left - 80;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" font-family=\"monospace\" font-size=\"12\">\n";
  os << "<text x=\"10\" y=\"24\" font-size=\"14\">" << xml_escape(rows.front().metric_name)
     << "</text>\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    const int y = top + static_cast<int>(i) * (bar_h + gap);
    const double w = std::max(0.0, r.value) / vmax * span;
    os << "<text x=\"10\" y=\"" << y + 15 << "\">" << xml_escape(label_of(r)) << "</text>\n";
    os << "<rect x=\"" << left << "\" y=\"" << y << "\" width=\"" << fmt(w) << "\" height=\""
       << bar_h << "\" fill=\"#4a78b5\"/>\n";
    if (r.std_error) {
      const double e = *r.std_error / vmax * span;
      const double cy = y + bar_h / 2.0;
      os << "<line x1=\"" << fmt(left + w - e) << "\" y1=\"" << fmt(cy) << "\" x2=\""
         << fmt(left + w + e) << "\" y2=\"" << fmt(cy) << "\" stroke=\"black\"/>\n";
    }
    os << "<text x=\"" << fmt(left + w + 6) << "\" y=\"" << y + 15 << "\">" << fmt(r.value)
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void compare_runs(const std::vector<MetricsReport>& reports, const std::filesystem::path& csv,
                  const std::filesystem::path& svg) {
  const std::string c = comparison_csv(reports);
  const std::string s = comparison_svg(reports);
  io::write_text_atomic(csv, c);
  io::write_text_atomic(svg, s);
}

std::string line_chart_svg(const std::string& title, const std::vector<Series>& series) {
  static const char* kColors[] = {"#4a78b5", "#d1603d", "#3a9b5c", "#8e5bb5", "#b59a2f",
                                  "#2fa6b5"};
  const int width = 720, height = 420, left = 60, right = 160, top = 40, bottom = 40;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw ShapeError("line chart: x and y lengths differ");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (!(x1 > x0)) {
    x0 = std::isfinite(x0) ? x0 - 1 : 0;
    x1 = x0 + 2;
  }
  if (!(y1 > y0)) {
    y0 = std::isfinite(y0) ? y0 - 1 : 0;
    y1 = y0 + 2;
  }
  const double pw = width - left - right, ph = height - top - bottom;
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return top + ph - (y - y0) / (y1 - y0) * ph; };
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" font-family=\"monospace\" font-size=\"12\">\n";
  os << "<text x=\"10\" y=\"24\" font-size=\"14\">" << xml_escape(title) << "</text>\n";
  os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << fmt(pw) << "\" height=\""
     << fmt(ph) << "\" fill=\"none\" stroke=\"#999\"/>\n";
  os << "<text x=\"" << left << "\" y=\"" << height - 12 << "\">" << fmt(x0) << "</text>\n";
  os << "<text x=\"" << fmt(left + pw - 40) << "\" y=\"" << height - 12 << "\">" << fmt(x1)
     << "</text>\n";
  os << "<text x=\"4\" y=\"" << top + 12 << "\">" << fmt(y1) << "</text>\n";
  os << "<text x=\"4\" y=\"" << fmt(top + ph) << "\">" << fmt(y0) << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kColors[k % (sizeof(kColors) / sizeof(kColors[0]))];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" points=\"";
    bool first = true;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      os << (first ? "" : " ") << fmt(px(s.x[i])) << ',' << fmt(py(s.y[i]));
      first = false;
    }
    os << "\"/>\n";
    os << "<text x=\"" << width - right + 10 << "\" y=\"" << top + 16 * (k + 1) << "\" fill=\""
       << color << "\">" << xml_escape(s.name) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace care::eval
