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

#include "apex/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "apex/errors.hpp"
#include "apex/kernels.hpp"

namespace apex::ad {

namespace {

Tensor& grad_of(const NodePtr& p) { return p->grad; }

void accumulate(const NodePtr& p, std::size_t i, double g) {
  if (p->requires_grad) p->grad[i] += g;
}

std::size_t rows_of(const Tensor& t) { return t.rank() == 1 ? 1 : t.dim(0); }
std::size_t cols_of(const Tensor& t) { return t.shape().back(); }

void require_rank_le2(const Tensor& t, const char* what) {
  if (t.rank() == 0 || t.rank() > 2) {
    throw ShapeError(std::string(what) + ": expected rank 1 or 2, got " +
                     shape_string(t.shape()));
  }
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// Scaled so that tiny but nonzero vectors do not underflow to norm 0.
double norm(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  if (m == 0.0 || !std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += (x / m) * (x / m);
  return m * std::sqrt(s);
}

}  // namespace

void Var::zero_grad() {
  std::fill(node_->grad.storage().begin(), node_->grad.storage().end(), 0.0);
}

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = "const";
  return Var(std::move(n));
}

Var parameter(Tensor value) {
  auto n = std::make_shared<Node>();
  n->grad = Tensor(value.shape());
  n->value = std::move(value);
  n->requires_grad = true;
  n->op = "param";
  return Var(std::move(n));
}

Var make_node(Tensor value, std::string op, std::vector<Var> parents, BackwardFn fn) {
  auto n = std::make_shared<Node>();
  n->op = std::move(op);
  for (const auto& p : parents) n->requires_grad = n->requires_grad || p.requires_grad();
  if (n->requires_grad) {
    n->grad = Tensor(value.shape());
    n->parents.reserve(parents.size());
    for (const auto& p : parents) n->parents.push_back(p.shared());
    n->backward = std::move(fn);
  }
  n->value = std::move(value);
  return Var(std::move(n));
}

void backward(const Var& loss) {
  if (loss.value().size() != 1) {
    throw ShapeError("backward: loss must be scalar, got " +
                     shape_string(loss.value().shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node(), 0}};
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

bool is_binary(Elementwise op) {
  switch (op) {
    case Elementwise::kAdd:
    case Elementwise::kSub:
    case Elementwise::kMul:
    case Elementwise::kDiv:
      return true;
    default:
      return false;
  }
}

Var elementwise(Elementwise op, const Var& a, const std::optional<Var>& b) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  const std::size_t n = av.size();

  if (is_binary(op)) {
    if (!b) throw ShapeError("elementwise: binary op needs two operands");
    require_same_shape(av, b->value(), "elementwise");
    const Tensor& bv = b->value();
    for (std::size_t i = 0; i < n; ++i) {
      switch (op) {
        case Elementwise::kAdd: out[i] = av[i] + bv[i]; break;
        case Elementwise::kSub: out[i] = av[i] - bv[i]; break;
        case Elementwise::kMul: out[i] = av[i] * bv[i]; break;
        case Elementwise::kDiv:
          if (bv[i] == 0.0) throw DomainError("elementwise: division by zero");
          out[i] = av[i] / bv[i];
          break;
        default: break;
      }
    }
    return make_node(std::move(out), "elementwise", {a, *b}, [op](Node& self) {
      const auto& pa = self.parents[0];
      const auto& pb = self.parents[1];
      const Tensor& x = pa->value;
      const Tensor& y = pb->value;
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const double g = self.grad[i];
        switch (op) {
          case Elementwise::kAdd: accumulate(pa, i, g); accumulate(pb, i, g); break;
          case Elementwise::kSub: accumulate(pa, i, g); accumulate(pb, i, -g); break;
          case Elementwise::kMul:
            accumulate(pa, i, g * y[i]);
            accumulate(pb, i, g * x[i]);
            break;
          case Elementwise::kDiv:
            accumulate(pa, i, g / y[i]);
            accumulate(pb, i, -g * x[i] / (y[i] * y[i]));
            break;
          default: break;
        }
      }
    });
  }

  for (std::size_t i = 0; i < n; ++i) {
    const double x = av[i];
    switch (op) {
      case Elementwise::kExp: out[i] = std::exp(x); break;
      case Elementwise::kLog:
        if (!(x > 0.0)) throw DomainError("log of non-positive value");
        out[i] = std::log(x);
        break;
      case Elementwise::kSigmoid: out[i] = stable_sigmoid(x); break;
      case Elementwise::kRelu: out[i] = x > 0.0 ? x : 0.0; break;
      case Elementwise::kSoftplus: out[i] = stable_softplus(x); break;
      default: break;
    }
  }
  return make_node(std::move(out), "elementwise", {a}, [op](Node& self) {
    const auto& pa = self.parents[0];
    const Tensor& x = pa->value;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double g = self.grad[i];
      switch (op) {
        case Elementwise::kExp: accumulate(pa, i, g * self.value[i]); break;
        case Elementwise::kLog: accumulate(pa, i, g / x[i]); break;
        case Elementwise::kSigmoid: {
          const double s = self.value[i];
          accumulate(pa, i, g * s * (1.0 - s));
          break;
        }
        case Elementwise::kRelu: accumulate(pa, i, x[i] > 0.0 ? g : 0.0); break;
        case Elementwise::kSoftplus: accumulate(pa, i, g * stable_sigmoid(x[i])); break;
        default: break;
      }
    }
  });
}

Var reduce(Reduce op, const Var& a, std::optional<std::size_t> axis) {
  const Tensor& av = a.value();
  if (av.empty()) throw ShapeError("reduce: empty tensor");

  if (!axis) {
    double acc = op == Reduce::kMax ? -std::numeric_limits<double>::infinity() : 0.0;
    std::size_t arg = 0;
    for (std::size_t i = 0; i < av.size(); ++i) {
      if (op == Reduce::kMax) {
        if (av[i] > acc) {
          acc = av[i];
          arg = i;
        }
      } else {
        acc += av[i];
      }
    }
    if (op == Reduce::kMean) acc /= static_cast<double>(av.size());
    return make_node(Tensor::scalar(acc), "reduce", {a}, [op, arg](Node& self) {
      const auto& pa = self.parents[0];
      const double g = self.grad[0];
      const std::size_t n = pa->value.size();
      if (op == Reduce::kMax) {
        accumulate(pa, arg, g);
        return;
      }
      const double scale = op == Reduce::kMean ? g / static_cast<double>(n) : g;
      for (std::size_t i = 0; i < n; ++i) accumulate(pa, i, scale);
    });
  }

  if (av.rank() != 2 || *axis > 1) {
    throw ShapeError("reduce: axis " + std::to_string(*axis) + " invalid for " +
                     shape_string(av.shape()));
  }
  const std::size_t rows = av.dim(0);
  const std::size_t cols = av.dim(1);
  const std::size_t out_len = *axis == 0 ? cols : rows;
  const std::size_t red_len = *axis == 0 ? rows : cols;
  Tensor out(Shape{out_len},
             op == Reduce::kMax ? -std::numeric_limits<double>::infinity() : 0.0);
  std::vector<std::size_t> arg(out_len, 0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t o = *axis == 0 ? c : r;
      const double v = av.at(r, c);
      if (op == Reduce::kMax) {
        if (v > out[o]) {
          out[o] = v;
          arg[o] = r * cols + c;
        }
      } else {
        out[o] += v;
      }
    }
  }
  if (op == Reduce::kMean) {
    for (auto& v : out.storage()) v /= static_cast<double>(red_len);
  }
  const std::size_t ax = *axis;
  return make_node(std::move(out), "reduce", {a},
                   [op, ax, rows, cols, red_len, arg = std::move(arg)](Node& self) {
                     const auto& pa = self.parents[0];
                     if (op == Reduce::kMax) {
                       for (std::size_t o = 0; o < self.grad.size(); ++o)
                         accumulate(pa, arg[o], self.grad[o]);
                       return;
                     }
                     const double scale =
                         op == Reduce::kMean ? 1.0 / static_cast<double>(red_len) : 1.0;
                     for (std::size_t r = 0; r < rows; ++r)
                       for (std::size_t c = 0; c < cols; ++c)
                         accumulate(pa, r * cols + c, scale * self.grad[ax == 0 ? c : r]);
                   });
}

Var add_scalar(const Var& a, double s) {
  Tensor out = a.value();
  for (auto& v : out.storage()) v += s;
  return make_node(std::move(out), "add_scalar", {a}, [](Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      accumulate(self.parents[0], i, self.grad[i]);
  });
}

Var mul_scalar(const Var& a, double s) {
  Tensor out = a.value();
  for (auto& v : out.storage()) v *= s;
  return make_node(std::move(out), "mul_scalar", {a}, [s](Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      accumulate(self.parents[0], i, s * self.grad[i]);
  });
}

Var rsub_scalar(double s, const Var& a) {
  Tensor out = a.value();
  for (auto& v : out.storage()) v = s - v;
  return make_node(std::move(out), "rsub_scalar", {a}, [](Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      accumulate(self.parents[0], i, -self.grad[i]);
  });
}

Var clamp(const Var& a, double lo, double hi) {
  Tensor out = a.value();
  for (auto& v : out.storage()) v = std::clamp(v, lo, hi);
  return make_node(std::move(out), "clamp", {a}, [lo, hi](Node& self) {
    const Tensor& x = self.parents[0]->value;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (x[i] >= lo && x[i] <= hi) accumulate(self.parents[0], i, self.grad[i]);
    }
  });
}

Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw ShapeError("matmul: cannot multiply " + shape_string(av.shape()) + " by " +
                     shape_string(bv.shape()));
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out(Shape{m, n});
  kernels::gemm_nn(av.data(), bv.data(), out.data(), m, k, n);
  return make_node(std::move(out), "matmul", {a, b}, [m, k, n](Node& self) {
    const auto& pa = self.parents[0];
    const auto& pb = self.parents[1];
    if (pa->requires_grad) {
      Tensor ga(Shape{m, k});
      kernels::gemm_nt(self.grad.data(), pb->value.data(), ga.data(), m, n, k);
      for (std::size_t i = 0; i < ga.size(); ++i) grad_of(pa)[i] += ga[i];
    }
    if (pb->requires_grad) {
      Tensor gb(Shape{k, n});
      kernels::gemm_tn(pa->value.data(), self.grad.data(), gb.data(), k, m, n);
      for (std::size_t i = 0; i < gb.size(); ++i) grad_of(pb)[i] += gb[i];
    }
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  require_rank_le2(xv, "linear");
  if (wv.rank() != 2 || bv.rank() != 1 || bv.dim(0) != wv.dim(0) ||
      cols_of(xv) != wv.dim(1)) {
    throw ShapeError("linear: input " + shape_string(xv.shape()) + ", weight " +
                     shape_string(wv.shape()) + ", bias " + shape_string(bv.shape()));
  }
  const std::size_t n = rows_of(xv), in = wv.dim(1), out_dim = wv.dim(0);
  Tensor out(xv.rank() == 1 ? Shape{out_dim} : Shape{n, out_dim});
  kernels::gemm_nt(xv.data(), wv.data(), out.data(), n, in, out_dim);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t o = 0; o < out_dim; ++o) out[r * out_dim + o] += bv[o];

  return make_node(std::move(out), "linear", {x, w, b}, [n, in, out_dim](Node& self) {
    const auto& px = self.parents[0];
    const auto& pw = self.parents[1];
    const auto& pb = self.parents[2];
    if (px->requires_grad) {
      Tensor gx(Shape{n, in});
      kernels::gemm_nn(self.grad.data(), pw->value.data(), gx.data(), n, out_dim, in);
      for (std::size_t i = 0; i < gx.size(); ++i) px->grad[i] += gx[i];
    }
    if (pw->requires_grad) {
      Tensor gw(Shape{out_dim, in});
      kernels::gemm_tn(self.grad.data(), px->value.data(), gw.data(), out_dim, n, in);
      for (std::size_t i = 0; i < gw.size(); ++i) pw->grad[i] += gw[i];
    }
    if (pb->requires_grad) {
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t o = 0; o < out_dim; ++o) pb->grad[o] += self.grad[r * out_dim + o];
    }
  });
}

Var add_row(const Var& a, const Var& row_vec) {
  const Tensor& av = a.value();
  require_rank_le2(av, "add_row");
  const std::size_t cols = cols_of(av);
  if (row_vec.value().size() != cols) throw ShapeError("add_row: length mismatch");
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += row_vec.value()[i % cols];
  return make_node(std::move(out), "add_row", {a, row_vec}, [cols](Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      accumulate(self.parents[0], i, self.grad[i]);
      accumulate(self.parents[1], i % cols, self.grad[i]);
    }
  });
}

Var reshape(const Var& a, Shape shape) {
  return make_node(a.value().reshaped(std::move(shape)), "reshape", {a}, [](Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      accumulate(self.parents[0], i, self.grad[i]);
  });
}

Var gather_cols(const Var& a, std::span<const std::size_t> index) {
  const Tensor& av = a.value();
  require_rank_le2(av, "gather_cols");
  const std::size_t rows = rows_of(av), cols = cols_of(av), len = index.size();
  for (auto i : index) {
    if (i >= cols) throw ShapeError("gather_cols: index out of range");
  }
  Tensor out(av.rank() == 1 ? Shape{len} : Shape{rows, len});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < len; ++i) out[r * len + i] = av[r * cols + index[i]];
  std::vector<std::size_t> idx(index.begin(), index.end());
  return make_node(std::move(out), "gather_cols", {a},
                   [rows, cols, idx = std::move(idx)](Node& self) {
                     const std::size_t len = idx.size();
                     for (std::size_t r = 0; r < rows; ++r)
                       for (std::size_t i = 0; i < len; ++i)
                         accumulate(self.parents[0], r * cols + idx[i], self.grad[r * len + i]);
                   });
}

Var gather_rows(const Var& a, std::span<const std::size_t> index) {
  const Tensor& av = a.value();
  if (av.rank() != 2) throw ShapeError("gather_rows: expected a matrix");
  const std::size_t rows = av.dim(0), cols = av.dim(1);
  Tensor out(Shape{index.size(), cols});
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= rows) throw ShapeError("gather_rows: index out of range");
    std::copy_n(av.data().begin() + static_cast<std::ptrdiff_t>(index[i] * cols), cols,
                out.data().begin() + static_cast<std::ptrdiff_t>(i * cols));
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return make_node(std::move(out), "gather_rows", {a}, [cols, idx = std::move(idx)](Node& self) {
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t c = 0; c < cols; ++c)
        accumulate(self.parents[0], idx[i] * cols + c, self.grad[i * cols + c]);
  });
}

Var pick(const Var& a, std::span<const std::size_t> flat_index) {
  const Tensor& av = a.value();
  Tensor out(Shape{flat_index.size()});
  for (std::size_t i = 0; i < flat_index.size(); ++i) {
    if (flat_index[i] >= av.size()) throw ShapeError("pick: index out of range");
    out[i] = av[flat_index[i]];
  }
  std::vector<std::size_t> idx(flat_index.begin(), flat_index.end());
  return make_node(std::move(out), "pick", {a}, [idx = std::move(idx)](Node& self) {
    for (std::size_t i = 0; i < idx.size(); ++i)
      accumulate(self.parents[0], idx[i], self.grad[i]);
  });
}

Var stack_rows(std::span<const Var> rows) {
  if (rows.empty()) throw ShapeError("stack_rows: no inputs");
  const std::size_t cols = rows.front().value().size();
  Tensor out(Shape{rows.size(), cols});
  std::vector<Var> parents;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].value().size() != cols) throw ShapeError("stack_rows: ragged rows");
    std::copy(rows[r].value().data().begin(), rows[r].value().data().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(r * cols));
    parents.push_back(rows[r]);
  }
  return make_node(std::move(out), "stack_rows", std::move(parents), [cols](Node& self) {
    for (std::size_t r = 0; r < self.parents.size(); ++r)
      for (std::size_t c = 0; c < cols; ++c)
        accumulate(self.parents[r], c, self.grad[r * cols + c]);
  });
}

Var row(const Var& a, std::size_t r) {
  const Tensor& av = a.value();
  if (av.rank() != 2 || r >= av.dim(0)) throw ShapeError("row: index out of range");
  const std::size_t cols = av.dim(1);
  Tensor out(Shape{cols});
  std::copy_n(av.data().begin() + static_cast<std::ptrdiff_t>(r * cols), cols,
              out.data().begin());
  return make_node(std::move(out), "row", {a}, [r, cols](Node& self) {
    for (std::size_t c = 0; c < cols; ++c)
      accumulate(self.parents[0], r * cols + c, self.grad[c]);
  });
}

Var stop_gradient(const Var& a) {
  Var out = constant(a.value());
  out.node()->op = "stop_gradient";
  return out;
}

namespace {

// Denominator norm, floored at kCosineEps.
double guarded_norm(double n) { return std::max(n, kCosineEps); }

// d|x|/dx = x/|x| contributes -d x/|x|^2 after dividing by the guarded norm;
// below the floor the norm is constant and the radial term vanishes.
double radial_factor(double n) { return n >= kCosineEps ? 1.0 / (n * n) : 0.0; }

}  // namespace

Var cosine_similarity(const Var& u, const Var& v) {
  if (u.value().size() != v.value().size()) {
    throw ShapeError("cosine_similarity: length mismatch");
  }
  const auto uu = u.value().data();
  const auto vv = v.value().data();
  const double nu = norm(uu), nv = norm(vv);
  if (nu == 0.0 || nv == 0.0) {
    throw DegenerateInputError("cosine_similarity: zero-norm input");
  }
  double dot = 0.0;
  for (std::size_t i = 0; i < uu.size(); ++i) dot += uu[i] * vv[i];
  const double du = guarded_norm(nu), dv = guarded_norm(nv);
  const double c = dot / (du * dv);
  const double ru = radial_factor(nu), rv = radial_factor(nv);
  return make_node(Tensor::scalar(c), "cosine", {u, v},
                   [dot, du, dv, ru, rv](Node& self) {
                     const double g = self.grad[0];
                     const auto& pu = self.parents[0];
                     const auto& pv = self.parents[1];
                     for (std::size_t i = 0; i < pu->value.size(); ++i) {
                       const double x = pu->value[i], y = pv->value[i];
                       accumulate(pu, i, g * (y - dot * x * ru) / (du * dv));
                       accumulate(pv, i, g * (x - dot * y * rv) / (du * dv));
                     }
                   });
}

Var cosine_rows(const Var& z, const Var& b) {
  const Tensor& zv = z.value();
  const Tensor& bv = b.value();
  require_rank_le2(zv, "cosine_rows");
  if (bv.rank() != 2 || cols_of(zv) != bv.dim(1)) {
    throw ShapeError("cosine_rows: " + shape_string(zv.shape()) + " vs " +
                     shape_string(bv.shape()));
  }
  const std::size_t n = rows_of(zv), k = bv.dim(1), j = bv.dim(0);
  std::vector<double> nz(n), nb(j);
  for (std::size_t r = 0; r < n; ++r) {
    nz[r] = norm(zv.data().subspan(r * k, k));
    if (nz[r] == 0.0) throw DegenerateInputError("cosine_rows: zero-norm query");
  }
  for (std::size_t s = 0; s < j; ++s) {
    nb[s] = norm(bv.data().subspan(s * k, k));
    if (nb[s] == 0.0) throw DegenerateInputError("cosine_rows: zero-norm slot");
  }
  Tensor dots(Shape{n, j});
  kernels::gemm_nt(zv.data(), bv.data(), dots.data(), n, k, j);
  Tensor out(zv.rank() == 1 ? Shape{j} : Shape{n, j});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t s = 0; s < j; ++s)
      out[r * j + s] = dots[r * j + s] / (guarded_norm(nz[r]) * guarded_norm(nb[s]));

  return make_node(
      std::move(out), "cosine_rows", {z, b},
      [n, k, j, nz = std::move(nz), nb = std::move(nb), dots = std::move(dots)](Node& self) {
        const auto& pz = self.parents[0];
        const auto& pb = self.parents[1];
        // With c = d / (|z| |b|): dc/dz = b/(|z| |b|) - d z/(|z|^3 |b|).
        Tensor coef(Shape{n, j});
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t s = 0; s < j; ++s)
            coef[r * j + s] = self.grad[r * j + s] / (guarded_norm(nz[r]) * guarded_norm(nb[s]));
        if (pz->requires_grad) {
          Tensor gz(Shape{n, k});
          kernels::gemm_nn(coef.data(), pb->value.data(), gz.data(), n, j, k);
          for (std::size_t r = 0; r < n; ++r) {
            double radial = 0.0;
            for (std::size_t s = 0; s < j; ++s) radial += coef[r * j + s] * dots[r * j + s];
            radial *= radial_factor(nz[r]);
            for (std::size_t c = 0; c < k; ++c)
              pz->grad[r * k + c] += gz[r * k + c] - radial * pz->value[r * k + c];
          }
        }
        if (pb->requires_grad) {
          Tensor gb(Shape{j, k});
          kernels::gemm_tn(coef.data(), pz->value.data(), gb.data(), j, n, k);
          for (std::size_t s = 0; s < j; ++s) {
            double radial = 0.0;
            for (std::size_t r = 0; r < n; ++r) radial += coef[r * j + s] * dots[r * j + s];
            radial *= radial_factor(nb[s]);
            for (std::size_t c = 0; c < k; ++c)
              pb->grad[s * k + c] += gb[s * k + c] - radial * pb->value[s * k + c];
          }
        }
      });
}

Var softmax_rows(const Var& x) {
  const Tensor& xv = x.value();
  require_rank_le2(xv, "softmax_rows");
  const std::size_t rows = rows_of(xv), cols = cols_of(xv);
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c) mx = std::max(mx, xv[r * cols + c]);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      out[r * cols + c] = std::exp(xv[r * cols + c] - mx);
      z += out[r * cols + c];
    }
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] /= z;
  }
  return make_node(std::move(out), "softmax_rows", {x}, [rows, cols](Node& self) {
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c)
        dot += self.grad[r * cols + c] * self.value[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t i = r * cols + c;
        accumulate(self.parents[0], i, self.value[i] * (self.grad[i] - dot));
      }
    }
  });
}

Var masked_logsumexp_rows(const Var& x, const std::vector<bool>& mask) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || mask.size() != xv.size()) {
    throw ShapeError("masked_logsumexp_rows: mask does not match input");
  }
  const std::size_t rows = xv.dim(0), cols = xv.dim(1);
  Tensor out(Shape{rows});
  Tensor weights(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c)
      if (mask[r * cols + c]) mx = std::max(mx, xv[r * cols + c]);
    if (!std::isfinite(mx)) throw ShapeError("masked_logsumexp_rows: empty row");
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      if (!mask[r * cols + c]) continue;
      weights[r * cols + c] = std::exp(xv[r * cols + c] - mx);
      z += weights[r * cols + c];
    }
    for (std::size_t c = 0; c < cols; ++c) weights[r * cols + c] /= z;
    out[r] = mx + std::log(z);
  }
  return make_node(std::move(out), "masked_logsumexp_rows", {x},
                   [rows, cols, weights = std::move(weights)](Node& self) {
                     for (std::size_t r = 0; r < rows; ++r)
                       for (std::size_t c = 0; c < cols; ++c)
                         accumulate(self.parents[0], r * cols + c,
                                    self.grad[r] * weights[r * cols + c]);
                   });
}

}  // namespace apex::ad
