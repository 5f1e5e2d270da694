#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "cloudattn/autodiff.h"
#include "cloudattn/spatial.h"

namespace cloudattn {

/// Affine map x * weight + bias, weight stored in_dim x out_dim.
struct Linear {
  ad::Var weight;
  ad::Var bias;

  std::size_t in_dim() const { return weight->value.rows(); }
  std::size_t out_dim() const { return weight->value.cols(); }
};

ad::Var affine(const Linear& layer, const ad::Var& x);

/// Neighbor counts per scale (strictly increasing) sliced out of a single sorted ball query.
struct ScaleConfig {
  std::vector<std::size_t> ks{8, 16, 32};
  double radius = 0.2;
  std::size_t centroid_count = 128;
  std::size_t out_dim_per_scale = 32;

  std::size_t largest_k() const { return ks.back(); }
  std::size_t token_width() const { return ks.size() * out_dim_per_scale; }
  void validate() const;
};

/// M tokens: features (M x D, differentiable) anchored at centroid coordinates (M x 3).
struct TokenSet {
  ad::Var feats;
  Tensor anchors;

  std::size_t size() const { return anchors.rows(); }
  std::size_t width() const { return feats->value.cols(); }
};

/// What tokenize looked at, for inspection dumps. `neighbors` holds the padded per-centroid
/// lists of length K_N that the scales slice into.
struct TokenizeTrace {
  std::vector<std::size_t> centroid_ids;
  NeighborIndex ball;
  std::vector<std::vector<std::size_t>> neighbors;
};

/// Multi-scale tokenization of a point set. `feats` may be null (geometry only).
/// Each neighbor contributes delta((p_j - c) ++ f_j); scale i max-pools the first K_i sorted
/// neighbors; token = concat over scales. A ball with fewer than K_N points is padded by
/// repeating its nearest point.
TokenSet tokenize_points(const Tensor& coords, const ad::Var& feats, const ScaleConfig& cfg,
                         const Linear& delta, std::uint64_t seed,
                         TokenizeTrace* trace = nullptr);

/// tokenize_points on a raw cloud; its optional features enter as constants.
TokenSet tokenize(const PointCloud& cloud, const ScaleConfig& cfg, const Linear& delta,
                  std::uint64_t seed, TokenizeTrace* trace = nullptr);

/// Re-tokenizes an existing token set (anchors as coordinates, features as f_j) down to
/// cfg.centroid_count tokens, which must be smaller than the current count.
TokenSet reduce_tokens(const TokenSet& tokens, const ScaleConfig& cfg, const Linear& delta,
                       std::uint64_t seed, TokenizeTrace* trace = nullptr);

}  // namespace cloudattn
