#include "cloudattn/spatial.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace cloudattn {

namespace {

void require_points(const Tensor& t, const char* what) {
  if (t.rank() != 2 || t.cols() != 3) {
    throw DimensionError(std::string(what) + " must be an N x 3 coordinate tensor, got " +
                         shape_str(t.shape()));
  }
}

inline double sq_dist(const double* a, const double* b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

struct Candidate {
  double d2;
  std::size_t idx;
  bool operator<(const Candidate& o) const { return d2 < o.d2 || (d2 == o.d2 && idx < o.idx); }
};

}  // namespace

void PointCloud::validate() const {
  if (coords.empty() || coords.rank() != 2 || coords.cols() != 3) {
    throw std::invalid_argument("point cloud coordinates must be N x 3 with N >= 1");
  }
  if (!coords.all_finite()) throw std::invalid_argument("point cloud has non-finite coordinates");
  const std::size_t n = coords.rows();
  if (feats && feats->rows() != n) {
    throw std::invalid_argument("point cloud features have " + std::to_string(feats->rows()) +
                                " rows, expected " + std::to_string(n));
  }
  if (!labels.empty() && labels.size() != n) {
    throw std::invalid_argument("point cloud has " + std::to_string(labels.size()) +
                                " labels, expected " + std::to_string(n));
  }
}

std::size_t fps_start_index(const Tensor& coords, std::uint64_t seed) {
  require_points(coords, "fps coordinates");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> comp(-1000, 1000);
  double u[3];
  do {
    for (double& c : u) c = comp(rng);
  } while (u[0] == 0 && u[1] == 0 && u[2] == 0);

  const std::size_t n = coords.rows();
  const double* p = coords.data();
  std::size_t best = 0;
  double best_proj = p[0] * u[0] + p[1] * u[1] + p[2] * u[2];
  for (std::size_t i = 1; i < n; ++i) {
    const double* q = p + 3 * i;
    const double proj = q[0] * u[0] + q[1] * u[1] + q[2] * u[2];
    const double* b = p + 3 * best;
    if (proj > best_proj ||
        (proj == best_proj && std::lexicographical_compare(b, b + 3, q, q + 3))) {
      best = i;
      best_proj = proj;
    }
  }
  return best;
}

std::vector<std::size_t> fps_from(const Tensor& coords, std::size_t m, std::size_t start) {
  require_points(coords, "fps coordinates");
  const std::size_t n = coords.rows();
  if (m < 1 || m > n) {
    throw std::invalid_argument("fps: requested " + std::to_string(m) + " centroids from " +
                                std::to_string(n) + " points");
  }
  if (start >= n) throw std::invalid_argument("fps: start index out of range");
  const double* p = coords.data();
  std::vector<double> min_d2(n);
  std::vector<char> taken(n, 0);
  std::vector<std::size_t> out;
  out.reserve(m);
  out.push_back(start);
  taken[start] = 1;
  for (std::size_t i = 0; i < n; ++i) min_d2[i] = sq_dist(p + 3 * i, p + 3 * start);
  while (out.size() < m) {
    std::size_t best = n;
    double bv = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!taken[i] && min_d2[i] > bv) {
        bv = min_d2[i];
        best = i;
      }
    }
    out.push_back(best);
    taken[best] = 1;
    const double* c = p + 3 * best;
    for (std::size_t i = 0; i < n; ++i) min_d2[i] = std::min(min_d2[i], sq_dist(p + 3 * i, c));
  }
  return out;
}

std::vector<std::size_t> fps(const Tensor& coords, std::size_t m, std::uint64_t seed) {
  return fps_from(coords, m, fps_start_index(coords, seed));
}

NeighborIndex ball_query_sorted(const Tensor& source, const Tensor& centroids, double radius,
                                std::size_t cap) {
  require_points(source, "ball query source");
  require_points(centroids, "ball query centroids");
  if (!(radius > 0.0)) throw std::invalid_argument("ball query radius must be positive");
  if (cap < 1) throw std::invalid_argument("ball query cap must be >= 1");
  const std::size_t n = source.rows(), m = centroids.rows();
  const double r2 = radius * radius;
  NeighborIndex out;
  out.neighbor_ids.resize(m);
  out.distances.resize(m);
  std::vector<Candidate> cand;
  for (std::size_t c = 0; c < m; ++c) {
    cand.clear();
    const double* q = centroids.data() + 3 * c;
    for (std::size_t i = 0; i < n; ++i) {
      const double d2 = sq_dist(source.data() + 3 * i, q);
      if (d2 <= r2) cand.push_back({d2, i});
    }
    const std::size_t keep = std::min(cap, cand.size());
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end());
    auto& ids = out.neighbor_ids[c];
    auto& ds = out.distances[c];
    ids.reserve(keep);
    ds.reserve(keep);
    for (std::size_t j = 0; j < keep; ++j) {
      ids.push_back(cand[j].idx);
      ds.push_back(std::sqrt(cand[j].d2));
    }
  }
  return out;
}

NeighborIndex knn(const Tensor& queries, const Tensor& source, std::size_t k) {
  require_points(source, "knn source");
  require_points(queries, "knn queries");
  const std::size_t n = source.rows(), m = queries.rows();
  if (k < 1 || k > n) {
    throw std::invalid_argument("knn: k=" + std::to_string(k) + " but source has " +
                                std::to_string(n) + " points");
  }
  NeighborIndex out;
  out.neighbor_ids.resize(m);
  out.distances.resize(m);
  std::vector<Candidate> cand(n);
  for (std::size_t c = 0; c < m; ++c) {
    const double* q = queries.data() + 3 * c;
    for (std::size_t i = 0; i < n; ++i) cand[i] = {sq_dist(source.data() + 3 * i, q), i};
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
    auto& ids = out.neighbor_ids[c];
    auto& ds = out.distances[c];
    ids.resize(k);
    ds.resize(k);
    for (std::size_t j = 0; j < k; ++j) {
      ids[j] = cand[j].idx;
      ds[j] = std::sqrt(cand[j].d2);
    }
  }
  return out;
}

std::vector<double> idw_weights(std::span<const double> distances) {
  if (distances.empty()) throw std::invalid_argument("idw_weights needs at least one neighbor");
  std::vector<double> w(distances.size(), 0.0);
  std::size_t hit = distances.size();
  double nearest = 0.0;
  for (std::size_t i = 0; i < distances.size(); ++i) {
    if (distances[i] < kIdwEpsilon && (hit == distances.size() || distances[i] < nearest)) {
      hit = i;
      nearest = distances[i];
    }
  }
  if (hit != distances.size()) {
    w[hit] = 1.0;
    return w;
  }
  double total = 0.0;
  for (std::size_t i = 0; i < distances.size(); ++i) {
    w[i] = 1.0 / (distances[i] * distances[i]);
    total += w[i];
  }
  for (auto& v : w) v /= total;
  return w;
}

Tensor take_rows(const Tensor& coords, std::span<const std::size_t> ids) {
  const std::size_t c = coords.cols();
  Tensor out = Tensor::matrix(ids.size(), c);
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(coords.data() + ids[i] * c, c, out.data() + i * c);
  return out;
}

}  // namespace cloudattn
