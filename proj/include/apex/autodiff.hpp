// Copyright 2026 The APEX Prompting Authors.
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

// Tensor-level reverse-mode differentiation.
//
// A Var is a shared handle to a Node holding a value, a gradient of the same
// shape and the closure that pushes its gradient into its parents. Graphs are
// built eagerly by calling the ops below and torn down when the last handle
// goes away. Gradients accumulate additively; callers zero them between
// optimizer steps.

#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "apex/tensor.hpp"

namespace apex::ad {

struct Node;
using NodePtr = std::shared_ptr<Node>;
using BackwardFn = std::function<void(Node& self)>;

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::string op;
  std::vector<NodePtr> parents;
  BackwardFn backward;
};

class Var {
 public:
  Var() = default;
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  Tensor& mutable_value() { return node_->value; }
  Tensor& mutable_grad() { return node_->grad; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  const std::string& op() const { return node_->op; }
  void zero_grad();

  bool defined() const { return static_cast<bool>(node_); }
  Node* node() const { return node_.get(); }
  const NodePtr& shared() const { return node_; }

 private:
  NodePtr node_;
};

/// Leaf without gradient.
Var constant(Tensor value);
/// Leaf that accumulates gradient.
Var parameter(Tensor value);

/// Builds an interior node. The node requires grad iff any parent does; the
/// backward closure is dropped otherwise.
Var make_node(Tensor value, std::string op, std::vector<Var> parents, BackwardFn fn);

/// Accumulates d(loss)/d(node) into every requires-grad ancestor of `loss`.
/// Throws ShapeError for a non-scalar loss.
void backward(const Var& loss);

enum class Elementwise { kAdd, kSub, kMul, kDiv, kExp, kLog, kSigmoid, kRelu, kSoftplus };
enum class Reduce { kSum, kMean, kMax };

bool is_binary(Elementwise op);

/// Pointwise op; `b` is required for binary tags and ignored otherwise.
Var elementwise(Elementwise op, const Var& a, const std::optional<Var>& b = std::nullopt);
/// Reduction over everything (shape {1}) or over one axis of a rank-2 tensor.
Var reduce(Reduce op, const Var& a, std::optional<std::size_t> axis = std::nullopt);

inline Var add(const Var& a, const Var& b) { return elementwise(Elementwise::kAdd, a, b); }
inline Var sub(const Var& a, const Var& b) { return elementwise(Elementwise::kSub, a, b); }
inline Var mul(const Var& a, const Var& b) { return elementwise(Elementwise::kMul, a, b); }
inline Var div(const Var& a, const Var& b) { return elementwise(Elementwise::kDiv, a, b); }
inline Var exp(const Var& a) { return elementwise(Elementwise::kExp, a); }
inline Var log(const Var& a) { return elementwise(Elementwise::kLog, a); }
inline Var sigmoid(const Var& a) { return elementwise(Elementwise::kSigmoid, a); }
inline Var relu(const Var& a) { return elementwise(Elementwise::kRelu, a); }
inline Var softplus(const Var& a) { return elementwise(Elementwise::kSoftplus, a); }

inline Var sum(const Var& a, std::optional<std::size_t> axis = std::nullopt) {
  return reduce(Reduce::kSum, a, axis);
}
inline Var mean(const Var& a, std::optional<std::size_t> axis = std::nullopt) {
  return reduce(Reduce::kMean, a, axis);
}
inline Var max(const Var& a, std::optional<std::size_t> axis = std::nullopt) {
  return reduce(Reduce::kMax, a, axis);
}

Var add_scalar(const Var& a, double s);
Var mul_scalar(const Var& a, double s);
/// s - a
Var rsub_scalar(double s, const Var& a);
Var clamp(const Var& a, double lo, double hi);

Var matmul(const Var& a, const Var& b);
/// x[n x in] * w[out x in]^T + b[out]; a rank-1 x is treated as one row.
Var linear(const Var& x, const Var& w, const Var& b);
/// Adds a row vector to every row of a rank-2 tensor.
Var add_row(const Var& a, const Var& row);

Var reshape(const Var& a, Shape shape);
/// out[r, i] = a[r, index[i]] for every row r (rank-1 a: single row).
Var gather_cols(const Var& a, std::span<const std::size_t> index);
/// out[i] = a.flat[index[i]].
Var gather_rows(const Var& a, std::span<const std::size_t> index);
Var pick(const Var& a, std::span<const std::size_t> flat_index);
/// Stacks rank-1 (or single-row) inputs of equal length into rows.
Var stack_rows(std::span<const Var> rows);
/// Row r of a rank-2 tensor as a rank-1 tensor.
Var row(const Var& a, std::size_t r);

/// Same value, no gradient flows to `a`.
Var stop_gradient(const Var& a);

/// Cosine of two vectors. Norms in the denominator are floored at 1e-12;
/// an exactly-zero input raises DegenerateInputError.
Var cosine_similarity(const Var& u, const Var& v);
/// cos(z_i, b_j) for all rows: z[n x K], b[J x K] -> [n x J].
Var cosine_rows(const Var& z, const Var& b);
Var softmax_rows(const Var& x);
/// out[i] = log sum_{j : mask[i, j]} exp(x[i, j]); rank-2 x, row-major mask.
Var masked_logsumexp_rows(const Var& x, const std::vector<bool>& mask);

inline constexpr double kCosineEps = 1e-12;

}  // namespace apex::ad
