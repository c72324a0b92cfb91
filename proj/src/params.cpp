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

#include "care/params.hpp"

#include <cmath>

namespace care {

Param& ParamStore::add(const std::string& name, Tensor init, bool trainable) {
  if (index_.count(name) != 0) throw ContractError("duplicate parameter name: " + name);
  auto p = std::make_unique<Param>();
  p->name = name;
  p->value = std::move(init);
  p->grad = Tensor::Zero(p->value.rows(), p->value.cols());
  p->trainable = trainable;
  Param* raw = p.get();
  params_.push_back(std::move(p));
  index_[name] = raw;
  return *raw;
}

Param& ParamStore::at(const std::string& name) {
  Param* p = find(name);
  if (p == nullptr) throw ContractError("unknown parameter: " + name);
  return *p;
}

const Param& ParamStore::at(const std::string& name) const {
  const Param* p = find(name);
  if (p == nullptr) throw ContractError("unknown parameter: " + name);
  return *p;
}

Param* ParamStore::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : it->second;
}

const Param* ParamStore::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : it->second;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p->grad.setZero();
}

void ParamStore::set_trainable(const std::string& prefix, bool trainable) {
  for (auto& p : params_) {
    if (p->name.compare(0, prefix.size(), prefix) == 0) p->trainable = trainable;
  }
}

std::size_t ParamStore::count_trainable() const {
  std::size_t n = 0;
  for (const auto& p : params_) {
    if (p->trainable) n += static_cast<std::size_t>(p->value.size());
  }
  return n;
}

std::size_t ParamStore::count_all() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
  return n;
}

std::size_t ParamStore::copy_values_from(const ParamStore& other) {
  std::size_t copied = 0;
  for (auto& p : params_) {
    const Param* src = other.find(p->name);
    if (src == nullptr) continue;
    if (src->value.rows() != p->value.rows() || src->value.cols() != p->value.cols()) {
      throw ShapeError("copy_values_from: shape mismatch for " + p->name);
    }
    p->value = src->value;
    ++copied;
  }
  return copied;
}

void ParamStore::for_each(const std::function<void(Param&)>& fn) {
  for (auto& p : params_) fn(*p);
}

void ParamStore::for_each(const std::function<void(const Param&)>& fn) const {
  for (const auto& p : params_) fn(*p);
}

Tensor xavier_uniform(Rng& rng, int in, int out) {
  const float limit = std::sqrt(6.0f / static_cast<float>(in + out));
  return uniform_tensor(rng, in, out, -limit, limit);
}

}  // namespace care
