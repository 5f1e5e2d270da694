#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "cloudattn/tensor.h"

namespace cloudattn {

/// N points: coords is N x 3, feats (if present) N x f, labels (if present) N class ids.
struct PointCloud {
  Tensor coords;
  std::optional<Tensor> feats;
  std::vector<std::int32_t> labels;

  std::size_t size() const { return coords.empty() ? 0 : coords.rows(); }
  std::size_t feat_dim() const { return feats ? feats->cols() : 0; }
  bool has_labels() const { return !labels.empty(); }

  /// Throws std::invalid_argument when an invariant does not hold.
  void validate() const;
};

/// Per-query neighbor lists, each sorted ascending by distance (ties by lower index).
struct NeighborIndex {
  std::vector<std::size_t> centroid_ids;  // empty when queries were explicit coordinates
  std::vector<std::vector<std::size_t>> neighbor_ids;
  std::vector<std::vector<double>> distances;

  std::size_t size() const { return neighbor_ids.size(); }
};

/// Seed-derived start point for farthest point sampling. The seed draws an integer direction;
/// the point with the largest projection wins (ties: lexicographically larger coordinates,
/// then lower index), so the choice depends on geometry only, never on storage order.
std::size_t fps_start_index(const Tensor& coords, std::uint64_t seed);

/// Greedy farthest point sampling from an explicit first index. Each subsequent pick maximizes
/// the minimum squared distance to the picked set; ties go to the lowest index.
std::vector<std::size_t> fps_from(const Tensor& coords, std::size_t m, std::size_t start);

/// fps_from(coords, m, fps_start_index(coords, seed)).
std::vector<std::size_t> fps(const Tensor& coords, std::size_t m, std::uint64_t seed);

/// Up to `cap` source points within `radius` of each centroid (inclusive), sorted by distance.
NeighborIndex ball_query_sorted(const Tensor& source, const Tensor& centroids, double radius,
                                std::size_t cap);

/// Exact k nearest source points per query row.
NeighborIndex knn(const Tensor& queries, const Tensor& source, std::size_t k);

/// Normalized inverse-square-distance weights. A distance below kIdwEpsilon makes the result
/// one-hot on the nearest such entry.
inline constexpr double kIdwEpsilon = 1e-10;
std::vector<double> idw_weights(std::span<const double> distances);

/// Rows of `coords` selected by `ids`, as an M x 3 tensor.
Tensor take_rows(const Tensor& coords, std::span<const std::size_t> ids);

}  // namespace cloudattn
