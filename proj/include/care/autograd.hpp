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

#ifndef CARE_AUTOGRAD_HPP_
#define CARE_AUTOGRAD_HPP_

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "care/params.hpp"
#include "care/tensor.hpp"

namespace care::ag {

struct Node {
  Tensor value;
  Tensor grad;  // empty until something flows into it
  bool requires_grad = false;
  std::function<void()> backward;

  Tensor& grad_buffer() {
    if (grad.size() == 0) grad = Tensor::Zero(value.rows(), value.cols());
    return grad;
  }
  bool has_grad() const { return grad.size() != 0; }
};

// Nodes are owned by their Graph; a Var is valid until the graph dies.
using Var = Node*;

// Reverse-mode tape. One graph per forward/backward pass; ops append nodes
// in topological order so backward is a single reverse sweep.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  // Leaf bound to a parameter; requires grad iff the parameter is trainable
  // and the graph is not in no-grad mode.
  Var param(Param& p);
  Var emit(Tensor value, bool requires_grad);

  void backward(Var loss);
  // Adds accumulated leaf gradients into Param::grad.
  void flush_param_grads();

  void set_grad_enabled(bool on) { grad_enabled_ = on; }
  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<std::unique_ptr<Node>> nodes_;
  std::vector<std::pair<Param*, Node*>> leaves_;
  bool grad_enabled_ = true;
};

// ---------------------------------------------------------------------------
// Dense ops. Shapes are row-major 2D; "rows" of a batched sequence tensor are
// laid out sample-major: row = b * length + position.

Var matmul(Graph& g, Var a, Var b);
// x (n x in) * w (in x out) + b (1 x out).
Var linear(Graph& g, Var x, Var w, Var b);
// scale * (x * a^T) * bm^T; a is r x in, bm is out x r.
Var low_rank(Graph& g, Var x, Var a, Var bm, float scale);
Var add(Graph& g, Var a, Var b);
Var scale(Graph& g, Var a, float s);
// Adds row (r mod period) of p to row r of x.
Var add_periodic_rows(Graph& g, Var x, Var p);
Var gelu(Graph& g, Var x);
Var layer_norm(Graph& g, Var x, Var gamma, Var beta, float eps = 1e-5f);
Var concat_cols(Graph& g, Var a, Var b);
// Per-sample sequence concatenation: [a_b ; b_b] for each of `batch` samples.
Var concat_seq(Graph& g, Var a, Var b, int batch);
Var gather_rows(Graph& g, Var x, std::vector<int> rows);
Var reshape(Graph& g, Var x, Eigen::Index rows, Eigen::Index cols);

struct AttentionLayout {
  int batch = 1;
  int q_len = 1;
  int k_len = 1;
  int heads = 1;
  bool causal = false;
  // Optional per-(sample, key) validity, batch * k_len entries.
  std::vector<uint8_t> key_valid;
  // Scores are multiplied by this; <= 0 selects 1/sqrt(head_dim).
  float score_scale = 0.0f;
};

// Scaled dot-product attention per (sample, head). If `probs` is non-null it
// receives the softmax matrices, index b * heads + h.
Var attention(Graph& g, Var q, Var k, Var v, const AttentionLayout& layout,
              std::vector<Tensor>* probs = nullptr);

// Scalar (1x1) reductions; accumulation is done in double.
Var mse(Graph& g, Var pred, const Tensor& target);
Var mse(Graph& g, Var pred, Var target);
Var l1(Graph& g, Var pred, const Tensor& target);
Var softmax_cross_entropy(Graph& g, Var logits, const std::vector<int>& labels);

// 0.5*exp(-s1)*lf + 0.5*exp(-s2)*lp + 0.5*s1 + 0.5*s2 with 1x1 inputs.
Var uncertainty_weighted(Graph& g, Var lf, Var lp, Var s1, Var s2);

// Pure helpers (no graph).
Tensor gelu_value(const Tensor& x);
Tensor softmax_rows(const Tensor& x);

}  // namespace care::ag

#endif  // CARE_AUTOGRAD_HPP_
