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

#ifndef CARE_OPTIM_HPP_
#define CARE_OPTIM_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "care/params.hpp"

namespace care {

struct AdamConfig {
  float lr = 3e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

// Adam over the trainable subset of a ParamStore. Moments are keyed by
// parameter name so the state survives a checkpoint round-trip.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(ParamStore& params);
  int64_t steps_taken() const { return t_; }
  const AdamConfig& config() const { return cfg_; }
  void set_lr(float lr) { cfg_.lr = lr; }

  // Named state tensors ("m.<param>", "v.<param>") for checkpointing.
  std::vector<std::pair<std::string, Tensor>> export_state() const;
  void import_state(int64_t t, const std::vector<std::pair<std::string, Tensor>>& state);

 private:
  AdamConfig cfg_;
  int64_t t_ = 0;
  std::map<std::string, Tensor> m_;
  std::map<std::string, Tensor> v_;
};

// L2 norm over gradients of trainable params (double accumulation).
double global_grad_norm(const ParamStore& params);
// Rescales trainable grads so their global norm is at most max_norm.
// Returns the pre-clip norm.
double clip_grad_norm(ParamStore& params, double max_norm);

}  // namespace care

#endif  // CARE_OPTIM_HPP_
