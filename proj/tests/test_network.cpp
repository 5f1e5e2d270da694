#include <random>

#include "cloudattn/dataset.h"
#include "cloudattn/network.h"
#include "doctest.h"
#include "test_util.h"

using namespace cloudattn;

namespace {

PointCloud random_point_cloud(std::size_t n, std::mt19937_64& rng) {
  PointCloud c;
  c.coords = testutil::random_cloud(n, rng);
  return c;
}

ModelConfig small_config(Task task, std::size_t classes) {
  KeyValues kv;
  kv.set("task", task_name(task));
  kv.set("num_classes", std::to_string(classes));
  kv.set("d_model", "16");
  kv.set("heads", "2");
  kv.set("d_ff", "24");
  kv.set("head_hidden", "12");
  kv.set("tokens", "16,4");
  kv.set("radii", "0.4,0.9");
  kv.set("scales", "2,4;2,3");
  kv.set("lau_k", "4,2");
  kv.set("out_dim_per_scale", "8");
  return ModelConfig::from_kv(kv);
}

PointCloud permuted(const PointCloud& c, const std::vector<std::size_t>& perm) {
  PointCloud out;
  out.coords = take_rows(c.coords, perm);
  if (c.feats) out.feats = take_rows(*c.feats, perm);
  for (auto i : perm)
    if (c.has_labels()) out.labels.push_back(c.labels[i]);
  return out;
}

}  // namespace

TEST_CASE("default config shape contract") {
  const ModelConfig cfg = ModelConfig::defaults(Task::Classification, 3);
  std::mt19937_64 rng(1);
  const PointCloud cloud = random_point_cloud(1024, rng);
  const ParamStore params = init_params(cfg);
  ad::NoGradGuard guard;
  const EncodeResult enc = encode(cloud, cfg, Binding(params, false));
  REQUIRE(enc.cache.stages.size() == 3);
  CHECK(enc.cache.stages[0].size() == 128);
  CHECK(enc.cache.stages[1].size() == 32);
  CHECK(enc.cache.stages[2].size() == 8);
  for (const auto& st : enc.cache.stages) CHECK(st.width() == 64);
}

TEST_CASE("config round-trips through key=value text") {
  const ModelConfig a = small_config(Task::Segmentation, 3);
  const ModelConfig b = ModelConfig::from_kv(KeyValues::parse(a.to_kv().to_text()));
  CHECK(b.to_kv().to_text() == a.to_kv().to_text());
  CHECK(init_params(a) == init_params(b));
  KeyValues bad = a.to_kv();
  bad.set("tokens", "4,16");
  CHECK_THROWS_AS(ModelConfig::from_kv(bad), std::invalid_argument);
  bad = a.to_kv();
  bad.set("radii", "0.4");
  CHECK_THROWS_AS(ModelConfig::from_kv(bad), std::invalid_argument);
  KeyValues no_mst = a.to_kv();
  no_mst.set("use_mst", "0");
  CHECK(ModelConfig::from_kv(no_mst).stages[0].scales.ks == std::vector<std::size_t>{4});
}

TEST_CASE("parameters are f32-exact and named per stage") {
  const ParamStore p = init_params(ModelConfig::defaults(Task::Classification, 3));
  for (const auto& name : p.names())
    for (double v : p.get(name).values()) CHECK(static_cast<double>(static_cast<float>(v)) == v);
  CHECK(p.contains("s0.proj.w"));
  CHECK(p.contains("s2.gau.wq"));
  CHECK(p.contains("head.fc2.b"));
  ModelConfig off = ModelConfig::defaults(Task::Classification, 3);
  off.use_gau = false;
  CHECK_FALSE(init_params(off).contains("s0.gau.wq"));
}

TEST_CASE("identity-zeroed attention leaves the multi-scale tokens") {
  KeyValues kv = small_config(Task::Classification, 2).to_kv();
  kv.set("tokens", "40");
  kv.set("radii", "0.5");
  kv.set("scales", "2,4");
  kv.set("lau_k", "5");
  kv.set("lau_repeats", "1");
  const ModelConfig cfg = ModelConfig::from_kv(kv);
  std::mt19937_64 rng(2);
  const PointCloud cloud = random_point_cloud(40, rng);
  ParamStore params = init_params(cfg);
  for (const auto& name : params.names())
    if (name.find(".wo") != std::string::npos || name.find(".ff2") != std::string::npos) params.get(name).fill(0.0);
  const Binding bind(params);
  const EncodeResult enc = encode(cloud, cfg, bind);
  const TokenSet ref = tokenize_points(enc.coords, nullptr, cfg.stages[0].scales,
                                       bind_linear(bind, "s0.delta"), cfg.seed);
  CHECK(enc.final_tokens.feats->value == ref.feats->value);
  CHECK(enc.final_tokens.anchors == ref.anchors);
}

TEST_CASE("classify is deterministic, normalized and permutation invariant") {
  const ModelConfig cfg = small_config(Task::Classification, 4);
  const ParamStore params = init_params(cfg);
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const PointCloud cloud = random_point_cloud(60, rng);
    std::vector<std::size_t> perm(60);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const Tensor a = classify(cloud, cfg, Binding(params)).probs->value;
    const Tensor b = classify(cloud, cfg, Binding(params)).probs->value;
    const Tensor c = classify(permuted(cloud, perm), cfg, Binding(params)).probs->value;
    CHECK(a == b);
    CHECK(a == c);
    double s = 0.0;
    for (double v : a.values()) s += v;
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
  CHECK_THROWS_AS(segment(random_point_cloud(30, rng), cfg, Binding(params)), std::invalid_argument);
}

TEST_CASE("segment rows are normalized and follow the caller's point order") {
  const ModelConfig cfg = small_config(Task::Segmentation, 3);
  const ParamStore params = init_params(cfg);
  std::mt19937_64 rng(4);
  const PointCloud cloud = random_point_cloud(50, rng);
  std::vector<std::size_t> perm(50);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  const Tensor a = segment(cloud, cfg, Binding(params)).probs->value;
  const Tensor b = segment(permuted(cloud, perm), cfg, Binding(params)).probs->value;
  REQUIRE(a.shape() == Shape{50, 3});
  for (std::size_t i = 0; i < 50; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
      s += a.at(i, c);
      CHECK(b.at(i, c) == a.at(perm[i], c));
    }
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("interpolate is one-hot at a coincident anchor") {
  std::mt19937_64 rng(5);
  const Tensor feats = testutil::random_tensor({4, 3}, rng);
  const Tensor anchors = testutil::random_cloud(4, rng);
  Tensor fine = Tensor::matrix(2, 3);
  for (int c = 0; c < 3; ++c) {
    fine.at(0, c) = anchors.at(2, c);
    fine.at(1, c) = 0.5 * (anchors.at(0, c) + anchors.at(1, c));
  }
  const Tensor out = interpolate(ad::constant(feats), anchors, fine, 3)->value;
  for (int c = 0; c < 3; ++c) CHECK(out.at(0, c) == feats.at(2, c));
  // Second row: a convex combination of the three nearest anchors.
  const auto nb = knn(fine, anchors, 3);
  const auto w = idw_weights(nb.distances[1]);
  for (int c = 0; c < 3; ++c) {
    double e = 0.0;
    for (int j = 0; j < 3; ++j) e += w[j] * feats.at(nb.neighbor_ids[1][j], c);
    CHECK(out.at(1, c) == doctest::Approx(e).epsilon(1e-13));
  }
}

TEST_CASE("loss examples") {
  const Tensor perfect = Tensor::from_rows({{0, 1, 0}});
  CHECK(loss_cls(ad::constant(perfect), 1)->value[0] == 0.0);
  const Tensor uniform = Tensor::from_rows({{0.25, 0.25, 0.25, 0.25}});
  CHECK(loss_cls(ad::constant(uniform), 2)->value[0] == doctest::Approx(std::log(4.0)).epsilon(1e-15));
  CHECK(std::isfinite(loss_cls(ad::constant(Tensor::from_rows({{1, 0}})), 1)->value[0]));

  std::mt19937_64 rng(6);
  const Tensor logits = testutil::random_tensor({1, 5}, rng);
  ad::Var z = ad::parameter(logits);
  ad::Var p = ad::softmax(z, 1);
  ad::backward(loss_cls(p, 3));
  for (std::size_t c = 0; c < 5; ++c)
    CHECK(std::abs(z->grad[c] - (p->value[c] - (c == 3 ? 1.0 : 0.0))) < 1e-10);

  const Tensor probs = ad::softmax(ad::constant(testutil::random_tensor({6, 3}, rng)), 1)->value;
  const std::vector<std::int32_t> labels{0, 2, 1, 1, 0, 2};
  double mean = 0.0;
  for (std::size_t i = 0; i < 6; ++i) {
    Tensor row = Tensor::matrix(1, 3);
    for (std::size_t c = 0; c < 3; ++c) row.at(0, c) = probs.at(i, c);
    mean += loss_cls(ad::constant(row), labels[i])->value[0] / 6.0;
  }
  CHECK(loss_seg(ad::constant(probs), labels)->value[0] == doctest::Approx(mean).epsilon(1e-14));
  std::vector<std::size_t> twice;
  std::vector<std::int32_t> labels2;
  for (int r = 0; r < 2; ++r)
    for (std::size_t i = 0; i < 6; ++i) {
      twice.push_back(i);
      labels2.push_back(labels[i]);
    }
  CHECK(loss_seg(ad::constant(take_rows(probs, twice)), labels2)->value[0] ==
        doctest::Approx(loss_seg(ad::constant(probs), labels)->value[0]).epsilon(1e-14));
  CHECK_THROWS(loss_seg(ad::constant(probs), std::vector<std::int32_t>{0, 1}));
  CHECK_THROWS(loss_cls(ad::constant(perfect), 3));
}

TEST_CASE("network gradients reach every parameter") {
  const ModelConfig cfg = small_config(Task::Segmentation, 2);
  const ParamStore params = init_params(cfg);
  std::mt19937_64 rng(7);
  PointCloud cloud = random_point_cloud(40, rng);
  for (std::size_t i = 0; i < 40; ++i) cloud.labels.push_back(cloud.coords.at(i, 2) > 0);
  Binding bind(params);
  ad::backward(loss_seg(segment(cloud, cfg, bind).probs, cloud.labels));
  const GradMap g = bind.gradients();
  for (const auto& name : params.names()) {
    double norm = 0.0;
    for (double v : g.at(name).values()) norm += v * v;
    CHECK_MESSAGE(norm > 0.0, name);
  }
}
