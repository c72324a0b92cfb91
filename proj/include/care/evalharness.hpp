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

#ifndef CARE_EVALHARNESS_HPP_
#define CARE_EVALHARNESS_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "care/dataset.hpp"
#include "care/model.hpp"
#include "care/synthworld.hpp"

namespace care::eval {

struct MetricsReport {
  std::string metric_name;
  double value = 0.0;
  int64_t n_samples = 0;
  uint64_t seed = 0;
  std::string config_digest;
  std::string label;                 // run name shown in tables
  std::optional<double> std_error;   // rollout success only
  io::json details = io::json::object();

  io::json to_json() const;
  static MetricsReport from_json(const io::json& j);
};

// Stable digest of a JSON configuration (FNV-1a over its canonical dump).
std::string config_digest(const io::json& cfg);

// ---------------------------------------------------------------------------
// Ridge regression with an unpenalized intercept.

struct RidgeFit {
  DTensor w;      // in x out
  DTensor b;      // 1 x out
  DTensor mu;     // input standardization
  DTensor scale;
  double lambda = 0.0;

  DTensor predict(const DTensor& x) const;
};

RidgeFit fit_ridge(const DTensor& x, const DTensor& y, double lambda);
// Picks lambda on a held-out `val_fraction` of the groups (rows when `groups`
// is empty), then refits on all rows.
RidgeFit fit_ridge_cv(const DTensor& x, const DTensor& y, const std::vector<double>& lambdas,
                      double val_fraction, uint64_t seed, const std::vector<int>& groups = {});

inline const std::vector<double>& default_lambdas() {
  static const std::vector<double> l = {1e-6, 1e-4, 1e-2, 1.0, 1e2, 1e4, 1e6};
  return l;
}

// ---------------------------------------------------------------------------
// Metrics on raw matrices (one row per sample).

enum class ProbeKind { kAffine, kMlp };

struct ProbeConfig {
  ProbeKind kind = ProbeKind::kAffine;
  double val_fraction = 0.2;
  int mlp_hidden = 64;
  int mlp_epochs = 300;
  float mlp_lr = 3e-3f;
};

// Test MSE on actions z-scored with probe-train statistics. InputError with
// fewer than 200 training rows. `groups` (one id per training row, e.g. the
// trajectory) keeps correlated rows on one side of the validation split.
double lp_mse(const DTensor& z_train, const DTensor& a_train, const DTensor& z_test,
              const DTensor& a_test, const ProbeConfig& cfg, uint64_t seed,
              const std::vector<int>& groups = {});

struct SpcfcResult {
  double value = 0.0;
  int dims_used = 0;
  int dims_excluded = 0;  // zero-variance target dimensions
};

// Affine readout z -> f_next fit on one half, mean |Pearson r| on the other.
// InputError with fewer than 500 rows.
SpcfcResult spcfc(const DTensor& z, const DTensor& f_next, uint64_t seed,
                  const std::vector<int>& groups = {});

struct ClassifierConfig {
  int hidden = 64;
  int epochs = 200;
  float lr = 3e-3f;
};

// Two-layer classifier on standardized inputs; returns test accuracy.
double classifier_accuracy(const DTensor& x_train, const std::vector<int>& y_train,
                           const DTensor& x_test, const std::vector<int>& y_test, int n_classes,
                           const ClassifierConfig& cfg, uint64_t seed);

// ---------------------------------------------------------------------------
// Model-level extraction.

struct TransitionSet {
  DTensor z;        // flattened latent per transition
  DTensor f_next;   // flattened target features of frame t+1
  DTensor actions;  // empty when the split carries none
  std::vector<int> trajectory;
};

TransitionSet extract_transitions(const Model& model, const std::vector<data::Trajectory>& trajs);

enum class SemanticVariant { kInitial, kInitialRepeated, kInitialFrames, kInitialLatents };

const char* variant_name(SemanticVariant v);
SemanticVariant parse_variant(const std::string& s);

inline constexpr int kSemanticFrames = 10;

// Per-trajectory classifier inputs. Frame features are patch-mean-pooled
// f_v; latents are flattened z_t for t = 0..8.
DTensor semantic_inputs(const Model& model, const std::vector<data::Trajectory>& trajs,
                        SemanticVariant variant);

// ---------------------------------------------------------------------------
// Closed-loop evaluation.

using Policy = std::function<world::Action(const world::SceneState&, const world::Frame&,
                                           const std::string& instruction)>;

Policy scripted(const world::WorldConfig& cfg);
Policy model_policy(const Model& model);

struct RolloutResult {
  double success_rate = 0.0;
  double std_error = 0.0;  // sqrt(p (1 - p) / n)
  int n_episodes = 0;
  std::vector<uint8_t> successes;
};

// Episode i starts from a solvable scene drawn with derive_seed(seed, i),
// template i mod 4; the policy runs until success or the horizon.
RolloutResult rollout_success(const Policy& policy, int n_episodes, uint64_t seed,
                              const world::WorldConfig& cfg);

// ---------------------------------------------------------------------------
// Checkpoint + dataset wrappers producing reports.

struct EvalConfig {
  std::string checkpoint;
  std::string data_root;
  std::string label;  // run name written into reports; empty = metric name
  uint64_t seed = 0;
  ProbeConfig probe;
  ClassifierConfig classifier;
  int n_episodes = 100;
  std::string semantic_variant = "initial_latents";

  io::json to_json() const;
  static EvalConfig from_json(const io::json& j);
};

MetricsReport evaluate_lp_mse(const Model& model, const data::Dataset& ds, const EvalConfig& cfg);
MetricsReport evaluate_spcfc(const Model& model, const data::Dataset& ds, const EvalConfig& cfg);
MetricsReport evaluate_semantic(const Model& model, const data::Dataset& ds,
                                const EvalConfig& cfg, SemanticVariant variant,
                                bool shuffle_labels = false);
MetricsReport evaluate_rollout(const Model& model, const EvalConfig& cfg);

// ---------------------------------------------------------------------------
// Comparison artifacts.

// Rows sorted by (config_digest, seed, label). InputError on fewer than two
// reports or mixed metric names.
std::string comparison_csv(const std::vector<MetricsReport>& reports);
std::string comparison_svg(const std::vector<MetricsReport>& reports);
void compare_runs(const std::vector<MetricsReport>& reports, const std::filesystem::path& csv,
                  const std::filesystem::path& svg);

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};
// Deterministic multi-series line chart.
std::string line_chart_svg(const std::string& title, const std::vector<Series>& series);

}  // namespace care::eval

#endif  // CARE_EVALHARNESS_HPP_
