#include "cloudattn/autodiff.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_set>

namespace cloudattn::ad {

namespace {

thread_local bool g_grad_enabled = true;

Var make_node(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in->requires_grad;
  if (needs && g_grad_enabled) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward_fn = std::move(fn);
  }
  return node;
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + " expects a rank-2 tensor, got " +
                         shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + " shape mismatch: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void require_axis(const Tensor& t, std::size_t axis, const char* op) {
  if (axis >= t.rank()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " invalid for shape " + shape_str(t.shape()));
  }
}

Tensor& grad_of(const Var& v) { return v->grad_ref(); }

}  // namespace

Tensor& Node::grad_ref() {
  if (grad.empty()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

Var parameter(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return node;
}

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return node;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

void backward(const Var& loss) {
  if (loss->value.numel() != 1) {
    throw std::invalid_argument("backward requires a scalar loss, got shape " +
                                shape_str(loss->value.shape()));
  }
  if (!loss->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.get(), 0);
  visited.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (!n->is_leaf()) n->grad = Tensor(n->value.shape(), 0.0);
  }
  loss->grad_ref()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->is_leaf() && n->backward_fn) n->backward_fn(*n);
  }
}

void zero_grad(std::span<const Var> leaves) {
  for (const auto& v : leaves) v->grad = Tensor();
}

Var matmul(const Var& a, const Var& b) {
  const Tensor& A = a->value;
  const Tensor& B = b->value;
  require_rank2(A, "matmul");
  require_rank2(B, "matmul");
  if (A.cols() != B.rows()) {
    throw DimensionError("matmul inner dimensions disagree: " + shape_str(A.shape()) + " x " +
                         shape_str(B.shape()));
  }
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor out = Tensor::matrix(m, n);
  kernels::gemm(A.data(), B.data(), out.data(), m, n, k, false, false, false);
  return make_node(std::move(out), {a, b}, [m, k, n](Node& self) {
    const auto& a = self.inputs[0];
    const auto& b = self.inputs[1];
    if (a->requires_grad)
      kernels::gemm(self.grad.data(), b->value.data(), grad_of(a).data(), m, k, n, false, true,
                    true);
    if (b->requires_grad)
      kernels::gemm(a->value.data(), self.grad.data(), grad_of(b).data(), k, n, m, true, false,
                    true);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  const Tensor& A = a->value;
  const Tensor& B = b->value;
  require_rank2(A, "matmul_nt");
  require_rank2(B, "matmul_nt");
  if (A.cols() != B.cols()) {
    throw DimensionError("matmul_nt inner dimensions disagree: " + shape_str(A.shape()) +
                         " x " + shape_str(B.shape()) + "^T");
  }
  const std::size_t m = A.rows(), k = A.cols(), n = B.rows();
  Tensor out = Tensor::matrix(m, n);
  kernels::gemm(A.data(), B.data(), out.data(), m, n, k, false, true, false);
  return make_node(std::move(out), {a, b}, [m, k, n](Node& self) {
    const auto& a = self.inputs[0];
    const auto& b = self.inputs[1];
    if (a->requires_grad)
      kernels::gemm(self.grad.data(), b->value.data(), grad_of(a).data(), m, k, n, false, false,
                    true);
    if (b->requires_grad)
      kernels::gemm(self.grad.data(), a->value.data(), grad_of(b).data(), n, k, m, true, false,
                    true);
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a->value, b->value, "add");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b->value[i];
  return make_node(std::move(out), {a, b}, [](Node& self) {
    for (const auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      Tensor& g = grad_of(in);
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a->value, b->value, "sub");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b->value[i];
  return make_node(std::move(out), {a, b}, [](Node& self) {
    const auto& a = self.inputs[0];
    const auto& b = self.inputs[1];
    if (a->requires_grad) {
      Tensor& g = grad_of(a);
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
    if (b->requires_grad) {
      Tensor& g = grad_of(b);
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a->value, b->value, "mul");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b->value[i];
  return make_node(std::move(out), {a, b}, [](Node& self) {
    const auto& a = self.inputs[0];
    const auto& b = self.inputs[1];
    if (a->requires_grad) {
      Tensor& g = grad_of(a);
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * b->value[i];
    }
    if (b->requires_grad) {
      Tensor& g = grad_of(b);
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * a->value[i];
    }
  });
}

Var scale(const Var& x, double factor) {
  Tensor out = x->value;
  for (auto& v : out.values()) v *= factor;
  return make_node(std::move(out), {x}, [factor](Node& self) {
    Tensor& g = grad_of(self.inputs[0]);
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += factor * self.grad[i];
  });
}

Var add_bias(const Var& x, const Var& bias) {
  const Tensor& X = x->value;
  require_rank2(X, "add_bias");
  const std::size_t m = X.rows(), n = X.cols();
  if (bias->value.numel() != n) {
    throw DimensionError("add_bias: bias " + shape_str(bias->value.shape()) +
                         " does not match columns of " + shape_str(X.shape()));
  }
  Tensor out = X;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bias->value[j];
  return make_node(std::move(out), {x, bias}, [m, n](Node& self) {
    const auto& x = self.inputs[0];
    const auto& b = self.inputs[1];
    if (x->requires_grad) {
      Tensor& g = grad_of(x);
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
    if (b->requires_grad) {
      Tensor& g = grad_of(b);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
    }
  });
}

Var relu(const Var& x) {
  Tensor out = x->value;
  for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
  return make_node(std::move(out), {x}, [](Node& self) {
    const auto& x = self.inputs[0];
    Tensor& g = grad_of(x);
    for (std::size_t i = 0; i < g.numel(); ++i)
      if (x->value[i] > 0.0) g[i] += self.grad[i];
  });
}

Var log(const Var& x, double floor) {
  Tensor out = x->value;
  for (auto& v : out.values()) v = std::log(std::max(v, floor));
  return make_node(std::move(out), {x}, [floor](Node& self) {
    const auto& x = self.inputs[0];
    Tensor& g = grad_of(x);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const double v = x->value[i];
      if (v > floor) g[i] += self.grad[i] / v;
    }
  });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  for (const auto& p : parts) require_rank2(p->value, "concat");
  if (axis > 1) throw DimensionError("concat: axis must be 0 or 1");
  const std::size_t other = parts[0]->value.dim(1 - axis);
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p->value.dim(1 - axis) != other) {
      std::string shapes;
      for (const auto& q : parts) shapes += shape_str(q->value.shape()) + " ";
      throw DimensionError("concat along axis " + std::to_string(axis) +
                           " needs matching other dimension: " + shapes);
    }
    total += p->value.dim(axis);
  }
  const std::size_t rows = axis == 0 ? total : other;
  const std::size_t cols = axis == 0 ? other : total;
  Tensor out = Tensor::matrix(rows, cols);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const Tensor& t = p->value;
    offsets.push_back(off);
    for (std::size_t i = 0; i < t.rows(); ++i)
      for (std::size_t j = 0; j < t.cols(); ++j) {
        if (axis == 0)
          out.at(off + i, j) = t.at(i, j);
        else
          out.at(i, off + j) = t.at(i, j);
      }
    off += t.dim(axis);
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return make_node(std::move(out), std::move(inputs), [axis, offsets, cols](Node& self) {
    for (std::size_t p = 0; p < self.inputs.size(); ++p) {
      const auto& in = self.inputs[p];
      if (!in->requires_grad) continue;
      Tensor& g = grad_of(in);
      const std::size_t r = in->value.rows(), c = in->value.cols(), o = offsets[p];
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) {
          const std::size_t src = axis == 0 ? (o + i) * cols + j : i * cols + (o + j);
          g[i * c + j] += self.grad[src];
        }
    }
  });
}

Var slice(const Var& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Tensor& X = x->value;
  require_rank2(X, "slice");
  require_axis(X, axis, "slice");
  if (begin >= end || end > X.dim(axis)) {
    throw DimensionError("slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") out of range on axis " + std::to_string(axis) + " of " +
                         shape_str(X.shape()));
  }
  const std::size_t cols = X.cols();
  const std::size_t out_r = axis == 0 ? end - begin : X.rows();
  const std::size_t out_c = axis == 0 ? cols : end - begin;
  const std::size_t r0 = axis == 0 ? begin : 0;
  const std::size_t c0 = axis == 0 ? 0 : begin;
  Tensor out = Tensor::matrix(out_r, out_c);
  for (std::size_t i = 0; i < out_r; ++i)
    for (std::size_t j = 0; j < out_c; ++j) out[i * out_c + j] = X[(r0 + i) * cols + c0 + j];
  return make_node(std::move(out), {x}, [=](Node& self) {
    Tensor& g = grad_of(self.inputs[0]);
    for (std::size_t i = 0; i < out_r; ++i)
      for (std::size_t j = 0; j < out_c; ++j)
        g[(r0 + i) * cols + c0 + j] += self.grad[i * out_c + j];
  });
}

Var gather_rows(const Var& x, std::span<const std::size_t> idx) {
  const Tensor& X = x->value;
  require_rank2(X, "gather_rows");
  if (idx.empty()) throw DimensionError("gather_rows with an empty index list");
  const std::size_t n = X.rows(), c = X.cols();
  Tensor out = Tensor::matrix(idx.size(), c);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= n) {
      throw DimensionError("gather_rows index " + std::to_string(idx[i]) + " out of range for " +
                           shape_str(X.shape()));
    }
    std::copy_n(X.data() + idx[i] * c, c, out.data() + i * c);
  }
  std::vector<std::size_t> saved(idx.begin(), idx.end());
  return make_node(std::move(out), {x}, [saved = std::move(saved), c](Node& self) {
    Tensor& g = grad_of(self.inputs[0]);
    for (std::size_t i = 0; i < saved.size(); ++i) {
      double* dst = g.data() + saved[i] * c;
      const double* src = self.grad.data() + i * c;
      for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
    }
  });
}

Var weighted_gather(const Var& x, std::span<const std::size_t> idx,
                    std::span<const double> weights, std::size_t k) {
  const Tensor& X = x->value;
  require_rank2(X, "weighted_gather");
  if (k == 0 || idx.size() != weights.size() || idx.empty() || idx.size() % k != 0) {
    throw DimensionError("weighted_gather: index/weight lists must be equal, nonempty multiples of k");
  }
  const std::size_t n = X.rows(), c = X.cols(), m = idx.size() / k;
  Tensor out = Tensor::matrix(m, c);
  for (std::size_t i = 0; i < m; ++i) {
    double* dst = out.data() + i * c;
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t r = idx[i * k + j];
      if (r >= n) throw DimensionError("weighted_gather index out of range");
      const double w = weights[i * k + j];
      const double* src = X.data() + r * c;
      for (std::size_t q = 0; q < c; ++q) dst[q] += w * src[q];
    }
  }
  std::vector<std::size_t> si(idx.begin(), idx.end());
  std::vector<double> sw(weights.begin(), weights.end());
  return make_node(std::move(out), {x}, [si = std::move(si), sw = std::move(sw), k, m, c](Node& self) {
    Tensor& g = grad_of(self.inputs[0]);
    for (std::size_t i = 0; i < m; ++i) {
      const double* src = self.grad.data() + i * c;
      for (std::size_t j = 0; j < k; ++j) {
        double* dst = g.data() + si[i * k + j] * c;
        const double w = sw[i * k + j];
        for (std::size_t q = 0; q < c; ++q) dst[q] += w * src[q];
      }
    }
  });
}

Var reduce_max(const Var& x, std::size_t axis) {
  const Tensor& X = x->value;
  require_rank2(X, "reduce_max");
  require_axis(X, axis, "reduce_max");
  const std::size_t r = X.rows(), c = X.cols();
  const std::size_t outer = axis == 0 ? c : r;
  const std::size_t inner = axis == 0 ? r : c;
  Tensor out = axis == 0 ? Tensor::matrix(1, c) : Tensor::matrix(r, 1);
  std::vector<std::size_t> arg(outer);
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t best = 0;
    double bv = axis == 0 ? X[o] : X[o * c];
    for (std::size_t i = 1; i < inner; ++i) {
      const double v = axis == 0 ? X[i * c + o] : X[o * c + i];
      if (v > bv) {
        bv = v;
        best = i;
      }
    }
    out[o] = bv;
    arg[o] = axis == 0 ? best * c + o : o * c + best;
  }
  return make_node(std::move(out), {x}, [arg = std::move(arg)](Node& self) {
    Tensor& g = grad_of(self.inputs[0]);
    for (std::size_t o = 0; o < arg.size(); ++o) g[arg[o]] += self.grad[o];
  });
}

Var reduce_mean(const Var& x, std::size_t axis) {
  const Tensor& X = x->value;
  require_rank2(X, "reduce_mean");
  require_axis(X, axis, "reduce_mean");
  const std::size_t r = X.rows(), c = X.cols();
  Tensor out = axis == 0 ? Tensor::matrix(1, c) : Tensor::matrix(r, 1);
  const double inv = 1.0 / static_cast<double>(axis == 0 ? r : c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[axis == 0 ? j : i] += X[i * c + j];
  for (auto& v : out.values()) v *= inv;
  return make_node(std::move(out), {x}, [axis, r, c, inv](Node& self) {
    Tensor& g = grad_of(self.inputs[0]);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += inv * self.grad[axis == 0 ? j : i];
  });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x->value.values()) s += v;
  return make_node(Tensor::scalar(s), {x}, [](Node& self) {
    Tensor& g = grad_of(self.inputs[0]);
    const double up = self.grad[0];
    for (auto& v : g.values()) v += up;
  });
}

Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x->value.numel())); }

Var grouped_prefix_max(const Var& x, std::size_t group, std::size_t take) {
  const Tensor& X = x->value;
  require_rank2(X, "grouped_prefix_max");
  if (group == 0 || X.rows() % group != 0 || take == 0 || take > group) {
    throw DimensionError("grouped_prefix_max: rows of " + shape_str(X.shape()) +
                         " must split into groups of " + std::to_string(group) + " with take " +
                         std::to_string(take) + " in [1, group]");
  }
  const std::size_t groups = X.rows() / group, c = X.cols();
  Tensor out = Tensor::matrix(groups, c);
  std::vector<std::size_t> arg(groups * c);
  for (std::size_t gi = 0; gi < groups; ++gi) {
    const std::size_t base = gi * group;
    for (std::size_t j = 0; j < c; ++j) {
      std::size_t best = base;
      double bv = X[base * c + j];
      for (std::size_t r = base + 1; r < base + take; ++r) {
        const double v = X[r * c + j];
        if (v > bv) {
          bv = v;
          best = r;
        }
      }
      out[gi * c + j] = bv;
      arg[gi * c + j] = best * c + j;
    }
  }
  return make_node(std::move(out), {x}, [arg = std::move(arg)](Node& self) {
    Tensor& g = grad_of(self.inputs[0]);
    for (std::size_t o = 0; o < arg.size(); ++o) g[arg[o]] += self.grad[o];
  });
}

Var softmax(const Var& x, std::size_t axis) {
  const Tensor& X = x->value;
  require_rank2(X, "softmax");
  require_axis(X, axis, "softmax");
  const std::size_t r = X.rows(), c = X.cols();
  const std::size_t outer = axis == 1 ? r : c;
  const std::size_t inner = axis == 1 ? c : r;
  const std::size_t so = axis == 1 ? c : 1;  // stride between lanes
  const std::size_t si = axis == 1 ? 1 : c;  // stride within a lane
  Tensor out = X;
  for (std::size_t o = 0; o < outer; ++o) {
    double* lane = out.data() + o * so;
    double mx = lane[0];
    for (std::size_t i = 1; i < inner; ++i) mx = std::max(mx, lane[i * si]);
    double total = 0.0;
    for (std::size_t i = 0; i < inner; ++i) {
      lane[i * si] = std::exp(lane[i * si] - mx);
      total += lane[i * si];
    }
    const double inv = 1.0 / total;
    for (std::size_t i = 0; i < inner; ++i) lane[i * si] *= inv;
  }
  return make_node(std::move(out), {x}, [outer, inner, so, si](Node& self) {
    Tensor& g = grad_of(self.inputs[0]);
    const Tensor& y = self.value;
    for (std::size_t o = 0; o < outer; ++o) {
      const std::size_t base = o * so;
      double dot = 0.0;
      for (std::size_t i = 0; i < inner; ++i) dot += self.grad[base + i * si] * y[base + i * si];
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t p = base + i * si;
        g[p] += y[p] * (self.grad[p] - dot);
      }
    }
  });
}

Var layer_norm(const Var& x, double eps) {
  const Tensor& X = x->value;
  require_rank2(X, "layer_norm");
  const std::size_t r = X.rows(), c = X.cols();
  Tensor out = X;
  std::vector<double> inv_std(r);
  for (std::size_t i = 0; i < r; ++i) {
    double* row = out.data() + i * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) row[j] = (row[j] - mu) * inv_std[i];
  }
  return make_node(std::move(out), {x}, [inv_std = std::move(inv_std), r, c](Node& self) {
    Tensor& g = grad_of(self.inputs[0]);
    const Tensor& y = self.value;
    const double invc = 1.0 / static_cast<double>(c);
    for (std::size_t i = 0; i < r; ++i) {
      const double* gy = self.grad.data() + i * c;
      const double* yi = y.data() + i * c;
      double mg = 0.0, mgy = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        mg += gy[j];
        mgy += gy[j] * yi[j];
      }
      mg *= invc;
      mgy *= invc;
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += inv_std[i] * (gy[j] - mg - yi[j] * mgy);
    }
  });
}

Var neighbor_attention(const Var& q, const Var& k, const Var& v,
                       std::span<const std::size_t> neighbors, std::size_t kn, double scale,
                       Tensor* weights_out) {
  const Tensor& Q = q->value;
  const Tensor& K = k->value;
  const Tensor& V = v->value;
  require_rank2(Q, "neighbor_attention");
  require_rank2(K, "neighbor_attention");
  require_rank2(V, "neighbor_attention");
  const std::size_t m = Q.rows(), dh = Q.cols(), s = K.rows(), dv = V.cols();
  if (K.cols() != dh || V.rows() != s) {
    throw DimensionError("neighbor_attention shape mismatch: q " + shape_str(Q.shape()) + ", k " +
                         shape_str(K.shape()) + ", v " + shape_str(V.shape()));
  }
  if (kn == 0 || neighbors.size() != m * kn) {
    throw DimensionError("neighbor_attention: expected " + std::to_string(m * kn) +
                         " neighbor indices, got " + std::to_string(neighbors.size()));
  }
  for (auto n : neighbors)
    if (n >= s) throw DimensionError("neighbor_attention: neighbor index out of range");

  Tensor attn = Tensor::matrix(m, kn);
  Tensor out = Tensor::matrix(m, dv);
  for (std::size_t i = 0; i < m; ++i) {
    const double* qi = Q.data() + i * dh;
    double* ai = attn.data() + i * kn;
    double mx = 0.0;
    for (std::size_t j = 0; j < kn; ++j) {
      const double* kj = K.data() + neighbors[i * kn + j] * dh;
      double dot = 0.0;
      for (std::size_t p = 0; p < dh; ++p) dot += qi[p] * kj[p];
      ai[j] = dot * scale;
      mx = j == 0 ? ai[j] : std::max(mx, ai[j]);
    }
    double total = 0.0;
    for (std::size_t j = 0; j < kn; ++j) {
      ai[j] = std::exp(ai[j] - mx);
      total += ai[j];
    }
    const double inv = 1.0 / total;
    double* oi = out.data() + i * dv;
    for (std::size_t j = 0; j < kn; ++j) {
      ai[j] *= inv;
      const double* vj = V.data() + neighbors[i * kn + j] * dv;
      for (std::size_t p = 0; p < dv; ++p) oi[p] += ai[j] * vj[p];
    }
  }
  if (weights_out) *weights_out = attn;

  std::vector<std::size_t> nb(neighbors.begin(), neighbors.end());
  return make_node(
      std::move(out), {q, k, v},
      [attn = std::move(attn), nb = std::move(nb), m, kn, dh, dv, scale](Node& self) {
        const auto& q = self.inputs[0];
        const auto& k = self.inputs[1];
        const auto& v = self.inputs[2];
        Tensor* gq = q->requires_grad ? &grad_of(q) : nullptr;
        Tensor* gk = k->requires_grad ? &grad_of(k) : nullptr;
        Tensor* gv = v->requires_grad ? &grad_of(v) : nullptr;
        std::vector<double> ga(kn);
        for (std::size_t i = 0; i < m; ++i) {
          const double* go = self.grad.data() + i * dv;
          const double* ai = attn.data() + i * kn;
          double dot = 0.0;
          for (std::size_t j = 0; j < kn; ++j) {
            const std::size_t n = nb[i * kn + j];
            const double* vj = v->value.data() + n * dv;
            double acc = 0.0;
            for (std::size_t p = 0; p < dv; ++p) acc += go[p] * vj[p];
            ga[j] = acc;
            dot += ai[j] * acc;
            if (gv) {
              double* gvj = gv->data() + n * dv;
              for (std::size_t p = 0; p < dv; ++p) gvj[p] += ai[j] * go[p];
            }
          }
          const double* qi = q->value.data() + i * dh;
          for (std::size_t j = 0; j < kn; ++j) {
            const double gs = ai[j] * (ga[j] - dot) * scale;
            const std::size_t n = nb[i * kn + j];
            if (gq) {
              const double* kj = k->value.data() + n * dh;
              double* gqi = gq->data() + i * dh;
              for (std::size_t p = 0; p < dh; ++p) gqi[p] += gs * kj[p];
            }
            if (gk) {
              double* gkj = gk->data() + n * dh;
              for (std::size_t p = 0; p < dh; ++p) gkj[p] += gs * qi[p];
            }
          }
        }
      });
}

}  // namespace cloudattn::ad
