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

#ifndef CARE_PARAMS_HPP_
#define CARE_PARAMS_HPP_

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "care/rng.hpp"
#include "care/tensor.hpp"

namespace care {

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

// Owns every learnable tensor of a model, in insertion order. Modules keep
// raw Param pointers into the store; pointers stay valid for the store's
// lifetime because params are heap-allocated individually.
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;
  ParamStore(ParamStore&&) = default;
  ParamStore& operator=(ParamStore&&) = default;

  Param& add(const std::string& name, Tensor init, bool trainable = true);
  Param& at(const std::string& name);
  const Param& at(const std::string& name) const;
  Param* find(const std::string& name);
  const Param* find(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return params_.size(); }
  Param& operator[](std::size_t i) { return *params_[i]; }
  const Param& operator[](std::size_t i) const { return *params_[i]; }

  void zero_grad();
  // Marks every parameter whose name starts with `prefix` (empty = all).
  void set_trainable(const std::string& prefix, bool trainable);
  std::size_t count_trainable() const;
  std::size_t count_all() const;

  // Copies values of all params present in `other` under the same name.
  // Returns the number of tensors copied; shape mismatch throws.
  std::size_t copy_values_from(const ParamStore& other);

  void for_each(const std::function<void(Param&)>& fn);
  void for_each(const std::function<void(const Param&)>& fn) const;

 private:
  std::vector<std::unique_ptr<Param>> params_;
  std::unordered_map<std::string, Param*> index_;
};

// Xavier-uniform initialization for an in x out weight.
Tensor xavier_uniform(Rng& rng, int in, int out);

}  // namespace care

#endif  // CARE_PARAMS_HPP_
