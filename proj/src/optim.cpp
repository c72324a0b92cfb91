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

#include "care/optim.hpp"

#include <cmath>

namespace care {

void Adam::step(ParamStore& params) {
  ++t_;
  const double bc1 = 1.0 - std::pow(static_cast<double>(cfg_.beta1), static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(static_cast<double>(cfg_.beta2), static_cast<double>(t_));
  const float step_size = static_cast<float>(cfg_.lr / bc1);
  const float inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = params[i];
    if (!p.trainable) continue;
    Tensor& m = m_[p.name];
    Tensor& v = v_[p.name];
    if (m.size() == 0) {
      m = Tensor::Zero(p.value.rows(), p.value.cols());
      v = Tensor::Zero(p.value.rows(), p.value.cols());
    }
    m = cfg_.beta1 * m + (1.0f - cfg_.beta1) * p.grad;
    v = cfg_.beta2 * v + (1.0f - cfg_.beta2) * p.grad.cwiseProduct(p.grad);
    if (cfg_.lr == 0.0f) continue;
    p.value.array() -=
        step_size * m.array() / ((v.array().sqrt() * inv_sqrt_bc2) + cfg_.eps);
  }
}

std::vector<std::pair<std::string, Tensor>> Adam::export_state() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& [name, m] : m_) out.emplace_back("m." + name, m);
  for (const auto& [name, v] : v_) out.emplace_back("v." + name, v);
  return out;
}

void Adam::import_state(int64_t t, const std::vector<std::pair<std::string, Tensor>>& state) {
  t_ = t;
  m_.clear();
  v_.clear();
  for (const auto& [key, tensor] : state) {
    if (key.rfind("m.", 0) == 0) {
      m_[key.substr(2)] = tensor;
    } else if (key.rfind("v.", 0) == 0) {
      v_[key.substr(2)] = tensor;
    } else {
      throw ContractError("unexpected optimizer state entry: " + key);
    }
  }
}

double global_grad_norm(const ParamStore& params) {
  double acc = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Param& p = params[i];
    if (!p.trainable) continue;
    for (Eigen::Index k = 0; k < p.grad.size(); ++k) {
      const double x = p.grad.data()[k];
      acc += x * x;
    }
  }
  return std::sqrt(acc);
}

double clip_grad_norm(ParamStore& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (max_norm > 0.0 && norm > max_norm) {
    const float s = static_cast<float>(max_norm / norm);
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i].trainable) params[i].grad *= s;
    }
  }
  return norm;
}

}  // namespace care
