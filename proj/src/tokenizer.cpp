#include "cloudattn/tokenizer.h"

#include <stdexcept>
#include <string>

namespace cloudattn {

ad::Var affine(const Linear& layer, const ad::Var& x) {
  return ad::add_bias(ad::matmul(x, layer.weight), layer.bias);
}

void ScaleConfig::validate() const {
  if (ks.empty()) throw std::invalid_argument("scale config needs at least one scale");
  for (std::size_t i = 0; i < ks.size(); ++i) {
    if (ks[i] < 1) throw std::invalid_argument("scale neighbor counts must be >= 1");
    if (i && ks[i] <= ks[i - 1])
      throw std::invalid_argument("scale neighbor counts must be strictly increasing");
  }
  if (!(radius > 0.0)) throw std::invalid_argument("scale radius must be positive");
  if (centroid_count < 1) throw std::invalid_argument("centroid count must be >= 1");
  if (out_dim_per_scale < 1) throw std::invalid_argument("out_dim_per_scale must be >= 1");
}

TokenSet tokenize_points(const Tensor& coords, const ad::Var& feats, const ScaleConfig& cfg,
                         const Linear& delta, std::uint64_t seed, TokenizeTrace* trace) {
  cfg.validate();
  if (coords.empty() || coords.rank() != 2 || coords.cols() != 3) {
    throw std::invalid_argument("tokenize needs a nonempty N x 3 point set");
  }
  const std::size_t n = coords.rows();
  const std::size_t m = cfg.centroid_count;
  const std::size_t kmax = cfg.largest_k();
  const std::size_t fdim = feats ? feats->value.cols() : 0;
  if (feats && feats->value.rows() != n) {
    throw DimensionError("tokenize: features " + shape_str(feats->value.shape()) +
                         " do not match " + std::to_string(n) + " points");
  }
  if (delta.in_dim() != 3 + fdim || delta.out_dim() != cfg.out_dim_per_scale) {
    throw DimensionError("tokenize: delta layer is " + shape_str(delta.weight->value.shape()) +
                         ", expected [" + std::to_string(3 + fdim) + "x" +
                         std::to_string(cfg.out_dim_per_scale) + "]");
  }

  const auto centroid_ids = fps(coords, m, seed);
  Tensor centroids = take_rows(coords, centroid_ids);
  NeighborIndex ball = ball_query_sorted(coords, centroids, cfg.radius, kmax);

  // Flattened M*K_N neighbor rows. Index n refers to a virtual all-zero feature row used only
  // when a ball is empty.
  std::vector<std::size_t> flat;
  flat.reserve(m * kmax);
  Tensor rel = Tensor::matrix(m * kmax, 3);
  bool any_empty = false;
  std::vector<std::vector<std::size_t>> padded(m);
  for (std::size_t c = 0; c < m; ++c) {
    const auto& ids = ball.neighbor_ids[c];
    const double* cc = centroids.data() + 3 * c;
    for (std::size_t j = 0; j < kmax; ++j) {
      const std::size_t row = c * kmax + j;
      if (ids.empty()) {
        any_empty = true;
        flat.push_back(n);
        padded[c].push_back(centroid_ids[c]);
        continue;  // zero offset
      }
      const std::size_t src = j < ids.size() ? ids[j] : ids.front();
      flat.push_back(src);
      padded[c].push_back(src);
      const double* p = coords.data() + 3 * src;
      for (int d = 0; d < 3; ++d) rel[row * 3 + d] = p[d] - cc[d];
    }
  }

  ad::Var input = ad::constant(std::move(rel));
  if (feats) {
    ad::Var source = feats;
    if (any_empty) {
      std::vector<ad::Var> parts{feats, ad::constant(Tensor::matrix(1, fdim))};
      source = ad::concat(parts, 0);
    }
    std::vector<ad::Var> parts{input, ad::gather_rows(source, flat)};
    input = ad::concat(parts, 1);
  }
  ad::Var embedded = affine(delta, input);

  std::vector<ad::Var> scales;
  scales.reserve(cfg.ks.size());
  for (auto k : cfg.ks) scales.push_back(ad::grouped_prefix_max(embedded, kmax, k));
  ad::Var token_feats = scales.size() == 1 ? scales.front() : ad::concat(scales, 1);

  if (trace) {
    trace->centroid_ids = centroid_ids;
    trace->ball = ball;
    trace->ball.centroid_ids = centroid_ids;
    trace->neighbors = std::move(padded);
  }
  return TokenSet{token_feats, std::move(centroids)};
}

TokenSet tokenize(const PointCloud& cloud, const ScaleConfig& cfg, const Linear& delta,
                  std::uint64_t seed, TokenizeTrace* trace) {
  if (cloud.size() == 0) throw std::invalid_argument("tokenize: empty point cloud");
  cloud.validate();
  ad::Var feats = cloud.feats ? ad::constant(*cloud.feats) : nullptr;
  return tokenize_points(cloud.coords, feats, cfg, delta, seed, trace);
}

TokenSet reduce_tokens(const TokenSet& tokens, const ScaleConfig& cfg, const Linear& delta,
                       std::uint64_t seed, TokenizeTrace* trace) {
  if (cfg.centroid_count >= tokens.size()) {
    throw std::invalid_argument("reduce_tokens: target count " +
                                std::to_string(cfg.centroid_count) +
                                " must be below the current " + std::to_string(tokens.size()));
  }
  return tokenize_points(tokens.anchors, tokens.feats, cfg, delta, seed, trace);
}

}  // namespace cloudattn
