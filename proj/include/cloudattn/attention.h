#pragma once

#include <cstddef>
#include <vector>

#include "cloudattn/tokenizer.h"

namespace cloudattn {

/// Position-wise two-layer MLP: d_model -> d_ff -> relu -> d_model.
struct FeedForward {
  Linear fc1;
  Linear fc2;
};

/// Projections for h heads. wq/wk/wv are d_model x (h * d_head); wo is (h * d_head) x d_model.
struct MhaParams {
  ad::Var wq, wk, wv, wo;
  FeedForward ff;
  std::size_t heads = 1;

  std::size_t d_model() const { return wq->value.rows(); }
  std::size_t d_head() const { return wq->value.cols() / heads; }
};

struct AttentionConfig {
  std::size_t heads = 4;
  std::size_t d_model = 64;
  std::size_t d_ff = 128;
  std::size_t k_neighbors = 16;
  /// Optional layer norm on unit inputs; off reproduces the plain residual equations.
  bool prenorm = false;

  void validate() const;
};

ad::Var feed_forward(const FeedForward& ff, const ad::Var& x);

/// Dense multi-head attention of `query` rows over all `source` rows, followed by wo.
/// `weights`, when given, receives one Q x S weight matrix per head.
ad::Var mha(const ad::Var& query, const ad::Var& source, const MhaParams& params,
            std::vector<Tensor>* weights = nullptr);

/// Multi-head attention where query i sees only source rows neighbors[i*kn .. i*kn+kn).
/// `weights` receives dense Q x S matrices with zeros outside each neighbor list.
ad::Var mha_neighbors(const ad::Var& query, const ad::Var& source,
                      std::span<const std::size_t> neighbors, std::size_t kn,
                      const MhaParams& params, std::vector<Tensor>* weights = nullptr);

/// Local attention unit: each token attends to its k nearest tokens by anchor distance
/// (itself included); S = X + MHA, out = S + FF(S).
TokenSet lau_forward(const TokenSet& tokens, const MhaParams& params, const AttentionConfig& cfg,
                     std::vector<Tensor>* weights = nullptr);

/// Global attention unit: tokens query the embedded raw points (P x d_model);
/// C = T + MHA(T, P), out = C + FF(C). Cost is O(M * P).
TokenSet gau_forward(const TokenSet& tokens, const ad::Var& cloud_embed, const MhaParams& params,
                     const AttentionConfig& cfg);

}  // namespace cloudattn
