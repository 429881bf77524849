// Copyright 2026 The Remedis Authors.
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

#pragma once

// Reverse-mode automatic differentiation over dense double tensors.
//
// A Tape records every op whose inputs require gradients. Vars are cheap
// handles (tape pointer + node id). Tapes are single-threaded; use one tape
// per worker.
//
// Shape rules:
//   add        equal shapes, or rhs 1-D with size == lhs last extent (row bias)
//   sub, mul   equal shapes
//   matmul     [m,k] x [k,n] -> [m,n]
//   conv2d     [N,C,H,W] * [O,C,K,K] -> [N,O,Ho,Wo],
//              Ho = floor((H + 2*pad - K) / stride) + 1
//   group_norm [N,C,...] with gamma/beta [C]; groups must divide C
//   weight_standardize  per leading (output-channel) slice
//   gather     rows of the leading axis
//   concat     along the leading axis

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "remedis/tensor.hpp"

namespace remedis::ad {

inline constexpr double kNormEpsilon = 1e-5;

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

// Receives d(loss)/d(output) and accumulates into the input gradients.
// Entries of `input_grads` are null for inputs that do not require grad.
using BackwardFn =
    std::function<void(const Tensor& grad_out, std::span<Tensor* const> input_grads)>;

class Gradients {
 public:
  const Tensor& operator[](Var v) const;
  const Tensor& at(std::size_t leaf_id) const;
  bool contains(Var v) const { return grads_.contains(v.id); }
  std::size_t size() const { return grads_.size(); }

 private:
  friend class Tape;
  std::unordered_map<std::size_t, Tensor> grads_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Appends an op node. The backward rule is kept only when an input
  // requires grad. Throws kNumericOverflow if `value` has non-finite data.
  Var record(const char* op, Tensor value, std::vector<std::size_t> inputs,
             BackwardFn backward);

  // Gradients for every grad-requiring leaf. Unreachable leaves get zeros.
  Gradients backward(Var loss) const;

 private:
  struct Node {
    const char* op = "leaf";
    Tensor value;
    bool requires_grad = false;
    bool is_leaf = true;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

// Elementwise and structural ops.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var relu(Var a);
Var tanh(Var a);
Var exp(Var a);
Var log(Var a);
Var reshape(Var a, Shape shape);
Var transpose(Var a);
Var matmul(Var a, Var b);
Var conv2d(Var input, Var weight, std::size_t stride, std::size_t pad);
Var global_avg_pool(Var input);
Var group_norm(Var input, Var gamma, Var beta, std::size_t groups,
               double eps = kNormEpsilon);
Var weight_standardize(Var weight, double eps = kNormEpsilon);

// Reductions.
Var sum(Var a);
Var mean(Var a);

// Row-wise L2 norms of a 2-D tensor: [N,D] -> [N].
Var l2_norm(Var a);
// Row-wise unit normalization; zero rows are an error.
Var l2_normalize(Var a);
Var softmax_rows(Var a);

// Per-row cross entropy of softmax(logits) against target distributions.
// logits, targets: [N,C] -> [N]. Targets are constants.
Var cross_entropy_rows(Var logits, const Tensor& targets);
// Mean cross entropy against integer labels.
Var softmax_cross_entropy(Var logits, std::span<const int> labels);

Var gather(Var a, std::span<const std::size_t> rows);
Var concat(std::span<const Var> parts);
// Replaces entries where mask is true with `value`; masked entries get no
// gradient.
Var masked_fill(Var a, const std::vector<bool>& mask, double value);

// Plain cosine similarity; zero-norm input is an error.
double cosine_similarity(std::span<const double> u, std::span<const double> v);

Tensor one_hot(std::span<const int> labels, std::size_t classes);

// Compares backward() against central differences of `fn` at `point`.
// Returns max_i |g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8).
using ScalarFn = std::function<Var(Tape&, Var)>;
double finite_difference_check(const ScalarFn& fn, const Tensor& point,
                               double epsilon = 1e-5);

}  // namespace remedis::ad
