#include <random>
#include <set>

#include "doctest.h"
#include "test_util.h"

using namespace cloudattn;

TEST_CASE("fps on collinear points picks the far end") {
  const Tensor pts = Tensor::from_rows({{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {10, 0, 0}});
  CHECK(fps_from(pts, 2, 0) == std::vector<std::size_t>{0, 3});
  CHECK(fps_from(pts, 3, 0) == std::vector<std::size_t>{0, 3, 2});
}

TEST_CASE("fps edge sizes") {
  std::mt19937_64 rng(1);
  const Tensor pts = testutil::random_cloud(20, rng);
  const auto all = fps(pts, 20, 5);
  CHECK(std::set<std::size_t>(all.begin(), all.end()).size() == 20);
  const auto one = fps(pts, 1, 5);
  REQUIRE(one.size() == 1);
  CHECK(one[0] == fps_start_index(pts, 5));
  CHECK_THROWS_AS(fps(pts, 21, 5), std::invalid_argument);
  CHECK_THROWS_AS(fps(pts, 0, 5), std::invalid_argument);
}

TEST_CASE("fps start depends on geometry, not storage order") {
  std::mt19937_64 rng(2);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor pts = testutil::random_cloud(50, rng);
    std::vector<std::size_t> perm(50);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const Tensor shuffled = take_rows(pts, perm);
    const std::size_t a = fps_start_index(pts, seed);
    const std::size_t b = fps_start_index(shuffled, seed);
    CHECK(perm[b] == a);
  }
}

TEST_CASE("fps matches the exhaustive max-min oracle") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 2 + rng() % 80;
    const Tensor pts = trial % 3 == 0 ? testutil::dyadic_cloud(n, rng) : testutil::random_cloud(n, rng);
    const std::size_t m = 1 + rng() % n;
    const std::size_t start = fps_start_index(pts, trial);
    CHECK(fps(pts, m, trial) == testutil::fps_oracle(pts, m, start));
  }
}

TEST_CASE("ball query examples") {
  const Tensor sq = Tensor::from_rows({{0, 0, 0}, {0, 1, 0}, {1, 0, 0}, {1, 1, 0}});
  const Tensor c = Tensor::from_rows({{0, 0, 0}});
  const auto res = ball_query_sorted(sq, c, 1.1, 4);
  CHECK(res.neighbor_ids[0] == std::vector<std::size_t>{0, 1, 2});
  CHECK(res.distances[0] == std::vector<double>{0.0, 1.0, 1.0});

  const auto wide = ball_query_sorted(sq, Tensor::from_rows({{1, 1, 0}}), 1e9, 4);
  CHECK(wide.neighbor_ids[0].size() == 4);
  CHECK(wide.neighbor_ids[0][0] == 3);
  CHECK(wide.distances[0][0] == 0.0);

  CHECK(ball_query_sorted(sq, Tensor::from_rows({{5, 5, 5}}), 0.5, 4).neighbor_ids[0].empty());
  CHECK(ball_query_sorted(sq, c, 1.1, 2).neighbor_ids[0] == std::vector<std::size_t>{0, 1});
}

TEST_CASE("ball query radius is inclusive") {
  const Tensor pts = Tensor::from_rows({{0, 0, 0}, {0.5, 0, 0}});
  CHECK(ball_query_sorted(pts, Tensor::from_rows({{0, 0, 0}}), 0.5, 5).neighbor_ids[0].size() == 2);
}

TEST_CASE("knn examples and tie rule") {
  const Tensor src = Tensor::from_rows({{1, 1, 1}, {0, 0, 0}, {1, 1, 1}, {3, 3, 3}});
  const auto one = knn(Tensor::from_rows({{0, 0, 0}}), src, 1);
  CHECK(one.neighbor_ids[0] == std::vector<std::size_t>{1});
  CHECK(one.distances[0][0] == 0.0);
  const auto dup = knn(Tensor::from_rows({{1, 1, 1}}), src, 3);
  CHECK(dup.neighbor_ids[0] == std::vector<std::size_t>{0, 2, 1});
  CHECK_THROWS_AS(knn(src, src, 5), std::invalid_argument);
}

TEST_CASE("knn and ball query match sort oracles") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 1 + rng() % 60;
    const Tensor src = trial % 2 ? testutil::dyadic_cloud(n, rng) : testutil::random_cloud(n, rng);
    const Tensor q = testutil::random_cloud(7, rng);
    const std::size_t k = 1 + rng() % n;
    const double r = 0.1 + 0.1 * (rng() % 10);
    const auto kn = knn(q, src, k);
    const auto ball = ball_query_sorted(src, q, r, k);
    for (std::size_t i = 0; i < 7; ++i) {
      CHECK(kn.neighbor_ids[i] == testutil::knn_oracle(src, q, i, k));
      CHECK(ball.neighbor_ids[i] == testutil::ball_oracle(src, q, i, r, k));
    }
  }
}

TEST_CASE("idw weights") {
  CHECK(idw_weights(std::vector<double>{0.7}) == std::vector<double>{1.0});
  const auto w = idw_weights(std::vector<double>{1.0, 2.0});
  CHECK(w[0] == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(w[1] == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(idw_weights(std::vector<double>{0.5, 0.0, 0.3}) == std::vector<double>{0, 1, 0});
  CHECK(idw_weights(std::vector<double>{0.0, 0.0}) == std::vector<double>{1, 0});
  CHECK_THROWS(idw_weights(std::vector<double>{}));
}

TEST_CASE("point cloud validation") {
  PointCloud c;
  c.coords = Tensor::matrix(3, 3);
  CHECK_NOTHROW(c.validate());
  c.labels = {0, 1};
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c.labels.clear();
  c.feats = Tensor::matrix(2, 4);
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c.feats.reset();
  c.coords.at(1, 1) = std::numeric_limits<double>::infinity();
  CHECK_THROWS(c.validate());
}
