#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "cloudattn/tensor.h"

namespace cloudattn::ad {

struct Node;
using Var = std::shared_ptr<Node>;

/// One vertex of the reverse-mode graph. `grad` is materialized on first use.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<Var> inputs;
  /// Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return inputs.empty(); }
  Tensor& grad_ref();
};

/// Leaf holding a trainable value.
Var parameter(Tensor value);
/// Leaf that never receives a gradient.
Var constant(Tensor value);

/// RAII switch that disables graph recording on this thread (inference / benchmarks).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool grad_enabled();

/// Populates gradients of every reachable node that requires them. Interior gradients are
/// recomputed on each call; leaf gradients accumulate until zero_grad().
void backward(const Var& loss);
void zero_grad(std::span<const Var> leaves);

// Linear algebra.
Var matmul(const Var& a, const Var& b);
/// a * b^T
Var matmul_nt(const Var& a, const Var& b);

// Elementwise.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double factor);
/// x[m x n] + bias[n] broadcast over rows; the only broadcast the substrate supports.
Var add_bias(const Var& x, const Var& bias);
/// relu'(0) is defined as 0.
Var relu(const Var& x);
/// log(max(x, floor)); gradient is zero where the floor is active.
Var log(const Var& x, double floor = 0.0);

// Shape manipulation.
Var concat(std::span<const Var> parts, std::size_t axis);
Var slice(const Var& x, std::size_t axis, std::size_t begin, std::size_t end);
/// rows x[idx[i]]; gradient scatter-adds back.
Var gather_rows(const Var& x, std::span<const std::size_t> idx);
/// out[i] = sum_j weights[i*k+j] * x[idx[i*k+j]], weights constant.
Var weighted_gather(const Var& x, std::span<const std::size_t> idx, std::span<const double> weights,
                    std::size_t k);

// Reductions (keep the reduced axis with size 1).
/// Ties route the whole gradient to the lowest index.
Var reduce_max(const Var& x, std::size_t axis);
Var reduce_mean(const Var& x, std::size_t axis);
Var sum(const Var& x);
Var mean(const Var& x);

/// Rows are grouped in consecutive blocks of `group`; output row g is the column-wise max over
/// the first `take` rows of block g. Ties go to the earliest row.
Var grouped_prefix_max(const Var& x, std::size_t group, std::size_t take);

// Normalizers.
Var softmax(const Var& x, std::size_t axis);
/// Row-wise normalization to zero mean, unit variance (no affine).
Var layer_norm(const Var& x, double eps = 1e-5);

/// Scaled dot-product attention restricted to a neighbor list per query.
/// q: M x dh, k/v: S x dh, neighbors: M*kn indices into S. Optional `weights_out` receives the
/// M x kn attention weights.
Var neighbor_attention(const Var& q, const Var& k, const Var& v,
                       std::span<const std::size_t> neighbors, std::size_t kn, double scale,
                       Tensor* weights_out = nullptr);

}  // namespace cloudattn::ad
