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

#ifndef CARE_RNG_HPP_
#define CARE_RNG_HPP_

#include <cstdint>
#include <random>

#include "care/tensor.hpp"

namespace care {

using Rng = std::mt19937_64;

// SplitMix64 finalizer; used to derive independent stream seeds from
// (base seed, index) pairs so any schedule yields the same streams.
inline uint64_t mix_seed(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t base, uint64_t index) {
  return mix_seed(mix_seed(base) ^ (index * 0xd1b54a32d192ed03ULL + 1));
}

inline uint64_t derive_seed(uint64_t base, uint64_t index, uint64_t sub) {
  return derive_seed(derive_seed(base, index), sub);
}

// Uniform in [0, 1) built from the top 53 bits; independent of the
// standard library's distribution implementations.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

inline Tensor uniform_tensor(Rng& rng, Eigen::Index rows, Eigen::Index cols, float lo,
                             float hi) {
  Tensor t(rows, cols);
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    t.data()[i] = static_cast<float>(uniform(rng, lo, hi));
  }
  return t;
}

inline Tensor normal_tensor(Rng& rng, Eigen::Index rows, Eigen::Index cols, float stddev) {
  std::normal_distribution<float> dist(0.0f, stddev);
  Tensor t(rows, cols);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = dist(rng);
  return t;
}

}  // namespace care

#endif  // CARE_RNG_HPP_
