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

#include "care/autograd.hpp"

#include <cmath>
#include <limits>

namespace care::ag {

namespace {

bool any_grad(std::initializer_list<Var> vars) {
  for (Var v : vars) {
    if (v->requires_grad) return true;
  }
  return false;
}

void check_same_shape(Var a, Var b, const char* op) {
  if (a->value.rows() != b->value.rows() || a->value.cols() != b->value.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a->value) + " vs " +
                     shape_str(b->value));
  }
}

constexpr float kGeluC = 0.7978845608028654f;  // sqrt(2/pi)
constexpr float kGeluA = 0.044715f;

}  // namespace

Var Graph::emit(Tensor value, bool requires_grad) {
  auto node = std::make_unique<Node>();
  node->value = std::move(value);
  node->requires_grad = requires_grad && grad_enabled_;
  Var raw = node.get();
  nodes_.push_back(std::move(node));
  return raw;
}

Var Graph::constant(Tensor value) { return emit(std::move(value), false); }

Var Graph::param(Param& p) {
  Var v = emit(p.value, p.trainable);
  if (v->requires_grad) leaves_.emplace_back(&p, v);
  return v;
}

void Graph::backward(Var loss) {
  if (loss->value.rows() != 1 || loss->value.cols() != 1) {
    throw ShapeError("backward: loss must be 1x1, got " + shape_str(loss->value));
  }
  if (!loss->requires_grad) return;
  loss->grad_buffer().setOnes();
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& n = **it;
    if (n.requires_grad && n.backward && n.has_grad()) n.backward();
  }
}

void Graph::flush_param_grads() {
  for (auto& [p, node] : leaves_) {
    if (!node->has_grad()) continue;
    if (p->grad.rows() != node->grad.rows() || p->grad.cols() != node->grad.cols()) {
      p->grad = Tensor::Zero(p->value.rows(), p->value.cols());
    }
    p->grad += node->grad;
  }
}

Var matmul(Graph& g, Var a, Var b) {
  if (a->value.cols() != b->value.rows()) {
    throw ShapeError("matmul: " + shape_str(a->value) + " * " + shape_str(b->value));
  }
  Tensor y(a->value.rows(), b->value.cols());
  y.noalias() = a->value * b->value;
  Var out = g.emit(std::move(y), any_grad({a, b}));
  if (out->requires_grad) {
    out->backward = [a, b, out] {
      const Tensor& dy = out->grad;
      if (a->requires_grad) a->grad_buffer().noalias() += dy * b->value.transpose();
      if (b->requires_grad) b->grad_buffer().noalias() += a->value.transpose() * dy;
    };
  }
  return out;
}

Var linear(Graph& g, Var x, Var w, Var b) {
  if (x->value.cols() != w->value.rows() || b->value.rows() != 1 ||
      b->value.cols() != w->value.cols()) {
    throw ShapeError("linear: x " + shape_str(x->value) + ", w " + shape_str(w->value) +
                     ", b " + shape_str(b->value));
  }
  Tensor y(x->value.rows(), w->value.cols());
  y.noalias() = x->value * w->value;
  y.rowwise() += b->value.row(0);
  Var out = g.emit(std::move(y), any_grad({x, w, b}));
  if (out->requires_grad) {
    out->backward = [x, w, b, out] {
      const Tensor& dy = out->grad;
      if (x->requires_grad) x->grad_buffer().noalias() += dy * w->value.transpose();
      if (w->requires_grad) w->grad_buffer().noalias() += x->value.transpose() * dy;
      if (b->requires_grad) b->grad_buffer() += dy.colwise().sum();
    };
  }
  return out;
}

Var low_rank(Graph& g, Var x, Var a, Var bm, float s) {
  if (x->value.cols() != a->value.cols() || bm->value.cols() != a->value.rows()) {
    throw ShapeError("low_rank: x " + shape_str(x->value) + ", A " + shape_str(a->value) +
                     ", B " + shape_str(bm->value));
  }
  auto t = std::make_shared<Tensor>(x->value.rows(), a->value.rows());
  t->noalias() = x->value * a->value.transpose();
  Tensor y(x->value.rows(), bm->value.rows());
  y.noalias() = s * (*t) * bm->value.transpose();
  Var out = g.emit(std::move(y), any_grad({x, a, bm}));
  if (out->requires_grad) {
    out->backward = [x, a, bm, out, t, s] {
      const Tensor& dy = out->grad;
      Tensor dt(dy.rows(), bm->value.cols());
      dt.noalias() = s * dy * bm->value;
      if (bm->requires_grad) bm->grad_buffer().noalias() += s * dy.transpose() * (*t);
      if (a->requires_grad) a->grad_buffer().noalias() += dt.transpose() * x->value;
      if (x->requires_grad) x->grad_buffer().noalias() += dt * a->value;
    };
  }
  return out;
}

Var add(Graph& g, Var a, Var b) {
  check_same_shape(a, b, "add");
  Var out = g.emit(a->value + b->value, any_grad({a, b}));
  if (out->requires_grad) {
    out->backward = [a, b, out] {
      if (a->requires_grad) a->grad_buffer() += out->grad;
      if (b->requires_grad) b->grad_buffer() += out->grad;
    };
  }
  return out;
}

Var scale(Graph& g, Var a, float s) {
  Var out = g.emit(a->value * s, a->requires_grad);
  if (out->requires_grad) {
    out->backward = [a, out, s] { a->grad_buffer() += out->grad * s; };
  }
  return out;
}

Var add_periodic_rows(Graph& g, Var x, Var p) {
  const Eigen::Index period = p->value.rows();
  if (p->value.cols() != x->value.cols() || period == 0 || x->value.rows() % period != 0) {
    throw ShapeError("add_periodic_rows: x " + shape_str(x->value) + ", p " +
                     shape_str(p->value));
  }
  Tensor y = x->value;
  for (Eigen::Index r = 0; r < y.rows(); r += period) y.middleRows(r, period) += p->value;
  Var out = g.emit(std::move(y), any_grad({x, p}));
  if (out->requires_grad) {
    out->backward = [x, p, out, period] {
      if (x->requires_grad) x->grad_buffer() += out->grad;
      if (p->requires_grad) {
        Tensor& pg = p->grad_buffer();
        for (Eigen::Index r = 0; r < out->grad.rows(); r += period) {
          pg += out->grad.middleRows(r, period);
        }
      }
    };
  }
  return out;
}

Tensor gelu_value(const Tensor& x) {
  const auto v = x.array();
  Tensor t = (kGeluC * (v + kGeluA * v.cube())).tanh().matrix();
  return (0.5f * v * (1.0f + t.array())).matrix();
}

Var gelu(Graph& g, Var x) {
  const auto v = x->value.array();
  auto t = std::make_shared<Tensor>((kGeluC * (v + kGeluA * v.cube())).tanh().matrix());
  Tensor y = (0.5f * v * (1.0f + t->array())).matrix();
  Var out = g.emit(std::move(y), x->requires_grad);
  if (out->requires_grad) {
    out->backward = [x, out, t] {
      const auto v = x->value.array();
      const auto th = t->array();
      x->grad_buffer().array() +=
          out->grad.array() *
          (0.5f * (1.0f + th) +
           0.5f * v * (1.0f - th.square()) * kGeluC * (1.0f + 3.0f * kGeluA * v.square()));
    };
  }
  return out;
}

Var layer_norm(Graph& g, Var x, Var gamma, Var beta, float eps) {
  const Eigen::Index n = x->value.rows();
  const Eigen::Index d = x->value.cols();
  if (gamma->value.rows() != 1 || gamma->value.cols() != d || beta->value.rows() != 1 ||
      beta->value.cols() != d) {
    throw ShapeError("layer_norm: x " + shape_str(x->value) + ", gamma " +
                     shape_str(gamma->value));
  }
  auto xhat = std::make_shared<Tensor>(n, d);
  auto rstd = std::make_shared<Eigen::VectorXf>(n);
  Tensor y(n, d);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto row = x->value.row(r);
    const float mean = row.mean();
    const float var = (row.array() - mean).square().mean();
    const float rs = 1.0f / std::sqrt(var + eps);
    (*rstd)(r) = rs;
    xhat->row(r) = (row.array() - mean) * rs;
    y.row(r) = xhat->row(r).cwiseProduct(gamma->value.row(0)) + beta->value.row(0);
  }
  Var out = g.emit(std::move(y), any_grad({x, gamma, beta}));
  if (out->requires_grad) {
    out->backward = [x, gamma, beta, out, xhat, rstd, d] {
      const Tensor& dy = out->grad;
      if (gamma->requires_grad) {
        gamma->grad_buffer() += dy.cwiseProduct(*xhat).colwise().sum();
      }
      if (beta->requires_grad) beta->grad_buffer() += dy.colwise().sum();
      if (x->requires_grad) {
        Tensor& xg = x->grad_buffer();
        const float inv_d = 1.0f / static_cast<float>(d);
        for (Eigen::Index r = 0; r < dy.rows(); ++r) {
          Eigen::RowVectorXf dxhat = dy.row(r).cwiseProduct(gamma->value.row(0));
          const float s1 = dxhat.sum();
          const float s2 = dxhat.dot(xhat->row(r));
          xg.row(r).array() +=
              (*rstd)(r) * inv_d *
              (static_cast<float>(d) * dxhat.array() - s1 - xhat->row(r).array() * s2);
        }
      }
    };
  }
  return out;
}

Var concat_cols(Graph& g, Var a, Var b) {
  if (a->value.rows() != b->value.rows()) {
    throw ShapeError("concat_cols: " + shape_str(a->value) + " vs " + shape_str(b->value));
  }
  const Eigen::Index ca = a->value.cols();
  Tensor y(a->value.rows(), ca + b->value.cols());
  y.leftCols(ca) = a->value;
  y.rightCols(b->value.cols()) = b->value;
  Var out = g.emit(std::move(y), any_grad({a, b}));
  if (out->requires_grad) {
    out->backward = [a, b, out, ca] {
      if (a->requires_grad) a->grad_buffer() += out->grad.leftCols(ca);
      if (b->requires_grad) b->grad_buffer() += out->grad.rightCols(b->value.cols());
    };
  }
  return out;
}

Var concat_seq(Graph& g, Var a, Var b, int batch) {
  if (batch <= 0 || a->value.rows() % batch != 0 || b->value.rows() % batch != 0 ||
      a->value.cols() != b->value.cols()) {
    throw ShapeError("concat_seq: " + shape_str(a->value) + " and " + shape_str(b->value) +
                     " with batch " + std::to_string(batch));
  }
  const Eigen::Index la = a->value.rows() / batch;
  const Eigen::Index lb = b->value.rows() / batch;
  const Eigen::Index l = la + lb;
  Tensor y(batch * l, a->value.cols());
  for (int s = 0; s < batch; ++s) {
    y.middleRows(s * l, la) = a->value.middleRows(s * la, la);
    y.middleRows(s * l + la, lb) = b->value.middleRows(s * lb, lb);
  }
  Var out = g.emit(std::move(y), any_grad({a, b}));
  if (out->requires_grad) {
    out->backward = [a, b, out, batch, la, lb, l] {
      for (int s = 0; s < batch; ++s) {
        if (a->requires_grad) a->grad_buffer().middleRows(s * la, la) += out->grad.middleRows(s * l, la);
        if (b->requires_grad) {
          b->grad_buffer().middleRows(s * lb, lb) += out->grad.middleRows(s * l + la, lb);
        }
      }
    };
  }
  return out;
}

Var gather_rows(Graph& g, Var x, std::vector<int> rows) {
  Tensor y(static_cast<Eigen::Index>(rows.size()), x->value.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= x->value.rows()) {
      throw ShapeError("gather_rows: index " + std::to_string(rows[i]) + " out of range " +
                       std::to_string(x->value.rows()));
    }
    y.row(static_cast<Eigen::Index>(i)) = x->value.row(rows[i]);
  }
  Var out = g.emit(std::move(y), x->requires_grad);
  if (out->requires_grad) {
    out->backward = [x, out, rows = std::move(rows)] {
      Tensor& xg = x->grad_buffer();
      for (std::size_t i = 0; i < rows.size(); ++i) {
        xg.row(rows[i]) += out->grad.row(static_cast<Eigen::Index>(i));
      }
    };
  }
  return out;
}

Var reshape(Graph& g, Var x, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != x->value.size()) {
    throw ShapeError("reshape: " + shape_str(x->value) + " to " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  }
  Tensor y = Eigen::Map<const Tensor>(x->value.data(), rows, cols);
  Var out = g.emit(std::move(y), x->requires_grad);
  if (out->requires_grad) {
    out->backward = [x, out] {
      x->grad_buffer() +=
          Eigen::Map<const Tensor>(out->grad.data(), x->value.rows(), x->value.cols());
    };
  }
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  Tensor y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const float m = x.row(r).maxCoeff();
    y.row(r) = (x.row(r).array() - m).exp();
    y.row(r) /= y.row(r).sum();
  }
  return y;
}

Var attention(Graph& g, Var q, Var k, Var v, const AttentionLayout& lay,
              std::vector<Tensor>* probs) {
  const int B = lay.batch, Lq = lay.q_len, Lk = lay.k_len, H = lay.heads;
  if (B <= 0 || Lq <= 0 || Lk <= 0 || H <= 0) throw ShapeError("attention: empty layout");
  if (q->value.rows() != B * Lq || k->value.rows() != B * Lk || v->value.rows() != B * Lk ||
      q->value.cols() != k->value.cols() || q->value.cols() % H != 0 ||
      v->value.cols() % H != 0) {
    throw ShapeError("attention: q " + shape_str(q->value) + ", k " + shape_str(k->value) +
                     ", v " + shape_str(v->value) + " for batch " + std::to_string(B) +
                     ", heads " + std::to_string(H));
  }
  if (lay.causal && Lq != Lk) throw ShapeError("attention: causal mask needs q_len == k_len");
  if (!lay.key_valid.empty() && lay.key_valid.size() != static_cast<std::size_t>(B * Lk)) {
    throw ShapeError("attention: key_valid size mismatch");
  }
  const int dh = static_cast<int>(q->value.cols()) / H;
  const int dv = static_cast<int>(v->value.cols()) / H;
  const float sc = lay.score_scale > 0.0f ? lay.score_scale : 1.0f / std::sqrt(static_cast<float>(dh));
  auto P = std::make_shared<std::vector<Tensor>>(static_cast<std::size_t>(B * H));
  Tensor y(B * Lq, v->value.cols());
  constexpr float kNegInf = -std::numeric_limits<float>::infinity();
  for (int b = 0; b < B; ++b) {
    for (int h = 0; h < H; ++h) {
      const auto Qb = q->value.block(b * Lq, h * dh, Lq, dh);
      const auto Kb = k->value.block(b * Lk, h * dh, Lk, dh);
      const auto Vb = v->value.block(b * Lk, h * dv, Lk, dv);
      Tensor S(Lq, Lk);
      S.noalias() = Qb * Kb.transpose();
      S *= sc;
      for (int i = 0; i < Lq; ++i) {
        float m = kNegInf;
        for (int j = 0; j < Lk; ++j) {
          const bool masked = (lay.causal && j > i) ||
                              (!lay.key_valid.empty() && lay.key_valid[b * Lk + j] == 0);
          if (masked) S(i, j) = kNegInf;
          m = std::max(m, S(i, j));
        }
        if (m == kNegInf) {
          S.row(i).setZero();
          continue;
        }
        float sum = 0.0f;
        for (int j = 0; j < Lk; ++j) {
          const float e = S(i, j) == kNegInf ? 0.0f : std::exp(S(i, j) - m);
          S(i, j) = e;
          sum += e;
        }
        S.row(i) /= sum;
      }
      y.block(b * Lq, h * dv, Lq, dv).noalias() = S * Vb;
      (*P)[static_cast<std::size_t>(b * H + h)] = std::move(S);
    }
  }
  if (probs != nullptr) *probs = *P;
  Var out = g.emit(std::move(y), any_grad({q, k, v}));
  if (out->requires_grad) {
    out->backward = [q, k, v, out, P, B, Lq, Lk, H, dh, dv, sc] {
      for (int b = 0; b < B; ++b) {
        for (int h = 0; h < H; ++h) {
          const Tensor& Pm = (*P)[static_cast<std::size_t>(b * H + h)];
          const auto dO = out->grad.block(b * Lq, h * dv, Lq, dv);
          const auto Vb = v->value.block(b * Lk, h * dv, Lk, dv);
          if (v->requires_grad) {
            v->grad_buffer().block(b * Lk, h * dv, Lk, dv).noalias() += Pm.transpose() * dO;
          }
          if (!q->requires_grad && !k->requires_grad) continue;
          Tensor dP(Lq, Lk);
          dP.noalias() = dO * Vb.transpose();
          Eigen::VectorXf rs = Pm.cwiseProduct(dP).rowwise().sum();
          Tensor dS = Pm.cwiseProduct(dP - rs.replicate(1, Lk));
          dS *= sc;
          if (q->requires_grad) {
            q->grad_buffer().block(b * Lq, h * dh, Lq, dh).noalias() +=
                dS * k->value.block(b * Lk, h * dh, Lk, dh);
          }
          if (k->requires_grad) {
            k->grad_buffer().block(b * Lk, h * dh, Lk, dh).noalias() +=
                dS.transpose() * q->value.block(b * Lq, h * dh, Lq, dh);
          }
        }
      }
    };
  }
  return out;
}

Var mse(Graph& g, Var pred, const Tensor& target) {
  if (pred->value.rows() != target.rows() || pred->value.cols() != target.cols()) {
    throw ShapeError("mse: " + shape_str(pred->value) + " vs " + shape_str(target));
  }
  const Eigen::Index n = target.size();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double d = static_cast<double>(pred->value.data()[i]) - target.data()[i];
    acc += d * d;
  }
  Tensor y(1, 1);
  y(0, 0) = static_cast<float>(acc / static_cast<double>(n));
  Var out = g.emit(std::move(y), pred->requires_grad);
  if (out->requires_grad) {
    auto tgt = std::make_shared<Tensor>(target);
    out->backward = [pred, out, tgt, n] {
      const float c = 2.0f * out->grad(0, 0) / static_cast<float>(n);
      pred->grad_buffer() += c * (pred->value - *tgt);
    };
  }
  return out;
}

Var mse(Graph& g, Var pred, Var target) {
  check_same_shape(pred, target, "mse");
  const Eigen::Index n = pred->value.size();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double d = static_cast<double>(pred->value.data()[i]) - target->value.data()[i];
    acc += d * d;
  }
  Tensor y(1, 1);
  y(0, 0) = static_cast<float>(acc / static_cast<double>(n));
  Var out = g.emit(std::move(y), any_grad({pred, target}));
  if (out->requires_grad) {
    out->backward = [pred, target, out, n] {
      const float c = 2.0f * out->grad(0, 0) / static_cast<float>(n);
      if (pred->requires_grad) pred->grad_buffer() += c * (pred->value - target->value);
      if (target->requires_grad) target->grad_buffer() += c * (target->value - pred->value);
    };
  }
  return out;
}

Var l1(Graph& g, Var pred, const Tensor& target) {
  if (pred->value.rows() != target.rows() || pred->value.cols() != target.cols()) {
    throw ShapeError("l1: " + shape_str(pred->value) + " vs " + shape_str(target));
  }
  const Eigen::Index n = target.size();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    acc += std::abs(static_cast<double>(pred->value.data()[i]) - target.data()[i]);
  }
  Tensor y(1, 1);
  y(0, 0) = static_cast<float>(acc / static_cast<double>(n));
  Var out = g.emit(std::move(y), pred->requires_grad);
  if (out->requires_grad) {
    auto tgt = std::make_shared<Tensor>(target);
    out->backward = [pred, out, tgt, n] {
      const float c = out->grad(0, 0) / static_cast<float>(n);
      Tensor& pg = pred->grad_buffer();
      for (Eigen::Index i = 0; i < n; ++i) {
        const float d = pred->value.data()[i] - tgt->data()[i];
        pg.data()[i] += d > 0.0f ? c : (d < 0.0f ? -c : 0.0f);
      }
    };
  }
  return out;
}

Var softmax_cross_entropy(Graph& g, Var logits, const std::vector<int>& labels) {
  const Eigen::Index n = logits->value.rows();
  const Eigen::Index c = logits->value.cols();
  if (static_cast<Eigen::Index>(labels.size()) != n) {
    throw ShapeError("softmax_cross_entropy: label count mismatch");
  }
  auto probs = std::make_shared<Tensor>(softmax_rows(logits->value));
  double acc = 0.0;
  for (Eigen::Index r = 0; r < n; ++r) {
    if (labels[r] < 0 || labels[r] >= c) throw ShapeError("softmax_cross_entropy: bad label");
    acc -= std::log(std::max(static_cast<double>((*probs)(r, labels[r])), 1e-30));
  }
  Tensor y(1, 1);
  y(0, 0) = static_cast<float>(acc / static_cast<double>(n));
  Var out = g.emit(std::move(y), logits->requires_grad);
  if (out->requires_grad) {
    out->backward = [logits, out, probs, labels, n] {
      const float s = out->grad(0, 0) / static_cast<float>(n);
      Tensor d = *probs;
      for (Eigen::Index r = 0; r < n; ++r) d(r, labels[r]) -= 1.0f;
      logits->grad_buffer() += s * d;
    };
  }
  return out;
}

Var uncertainty_weighted(Graph& g, Var lf, Var lp, Var s1, Var s2) {
  for (Var v : {lf, lp, s1, s2}) {
    if (v->value.rows() != 1 || v->value.cols() != 1) {
      throw ShapeError("uncertainty_weighted: scalar inputs required");
    }
  }
  const double f = lf->value(0, 0), p = lp->value(0, 0);
  const double a = s1->value(0, 0), b = s2->value(0, 0);
  if (!std::isfinite(f) || !std::isfinite(p) || !std::isfinite(a) || !std::isfinite(b)) {
    throw TrainingError("uncertainty_weighted: non-finite input");
  }
  const double wa = 0.5 * std::exp(-a), wb = 0.5 * std::exp(-b);
  Tensor y(1, 1);
  y(0, 0) = static_cast<float>(wa * f + wb * p + 0.5 * a + 0.5 * b);
  Var out = g.emit(std::move(y), any_grad({lf, lp, s1, s2}));
  if (out->requires_grad) {
    out->backward = [lf, lp, s1, s2, out, f, p, wa, wb] {
      const double up = out->grad(0, 0);
      if (lf->requires_grad) lf->grad_buffer()(0, 0) += static_cast<float>(up * wa);
      if (lp->requires_grad) lp->grad_buffer()(0, 0) += static_cast<float>(up * wb);
      if (s1->requires_grad) s1->grad_buffer()(0, 0) += static_cast<float>(up * (0.5 - wa * f));
      if (s2->requires_grad) s2->grad_buffer()(0, 0) += static_cast<float>(up * (0.5 - wb * p));
    };
  }
  return out;
}

}  // namespace care::ag
