// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
// Usage: acceptance [criterion numbers...]   (default: all)

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "cloudattn/checkpoint.h"
#include "cloudattn/cloud_io.h"
#include "cloudattn/dataset.h"
#include "cloudattn/harness.h"
#include "cloudattn/network.h"
#include "test_util.h"

using namespace cloudattn;
namespace fs = std::filesystem;
using Vars = std::vector<ad::Var>;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

std::vector<std::size_t> shuffled_iota(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

// Shapes and a function; 20 random instances, worst relative error over all of them.
double worst_gradient(const std::function<ad::Var(const Vars&)>& f, const std::vector<Shape>& shapes,
                      std::uint64_t seed, std::size_t instances = 20) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (std::size_t t = 0; t < instances; ++t) {
    std::vector<Tensor> in;
    for (const auto& s : shapes) in.push_back(testutil::random_tensor(s, rng));
    worst = std::max(worst, testutil::check_gradients(f, in, rng).worst_rel);
  }
  return worst;
}

// wq wk wv wo ff1.w ff1.b ff2.w ff2.b taken from v[at..at+8).
MhaParams mha_from(const Vars& v, std::size_t at, std::size_t heads) {
  MhaParams p;
  p.wq = v[at];
  p.wk = v[at + 1];
  p.wv = v[at + 2];
  p.wo = v[at + 3];
  p.ff = FeedForward{Linear{v[at + 4], v[at + 5]}, Linear{v[at + 6], v[at + 7]}};
  p.heads = heads;
  return p;
}

std::vector<Shape> mha_shapes(std::size_t d, std::size_t dff) {
  return {{d, d}, {d, d}, {d, d}, {d, d}, {d, dff}, {dff}, {dff, d}, {d}};
}

Outcome gradient_suite() {
  const double prim_tol = 1e-6, comp_tol = 1e-4;
  struct Case {
    std::string name;
    bool primitive;
    double err;
  };
  std::vector<Case> cases;
  auto prim = [&](std::string n, auto f, std::vector<Shape> s, std::uint64_t seed) {
    cases.push_back({std::move(n), true, worst_gradient(f, s, seed)});
  };
  auto comp = [&](std::string n, auto f, std::vector<Shape> s, std::uint64_t seed) {
    cases.push_back({std::move(n), false, worst_gradient(f, s, seed)});
  };

  prim("matmul", [](const Vars& v) { return ad::matmul(v[0], v[1]); }, {{6, 5}, {5, 4}}, 1);
  prim("matmul_nt", [](const Vars& v) { return ad::matmul_nt(v[0], v[1]); }, {{6, 5}, {4, 5}}, 2);
  prim("softmax", [](const Vars& v) { return ad::softmax(v[0], 1); }, {{4, 7}}, 3);
  prim("softmax_axis0", [](const Vars& v) { return ad::softmax(v[0], 0); }, {{5, 3}}, 4);
  prim("add", [](const Vars& v) { return ad::add(v[0], v[1]); }, {{4, 3}, {4, 3}}, 5);
  prim("sub", [](const Vars& v) { return ad::sub(v[0], v[1]); }, {{4, 3}, {4, 3}}, 6);
  prim("mul", [](const Vars& v) { return ad::mul(v[0], v[1]); }, {{4, 3}, {4, 3}}, 7);
  prim("scale", [](const Vars& v) { return ad::scale(v[0], 0.37); }, {{4, 3}}, 8);
  prim("add_bias", [](const Vars& v) { return ad::add_bias(v[0], v[1]); }, {{4, 3}, {3}}, 9);
  prim("relu", [](const Vars& v) { return ad::relu(v[0]); }, {{5, 5}}, 10);
  prim("log", [](const Vars& v) {
    return ad::log(ad::add(ad::mul(v[0], v[0]), ad::constant(Tensor({3, 4}, 0.25))));
  }, {{3, 4}}, 11);
  prim("layer_norm", [](const Vars& v) { return ad::layer_norm(v[0]); }, {{3, 8}}, 12);

  const std::size_t d = 8, dff = 12, heads = 2;
  std::vector<Shape> mha_in{{5, d}, {9, d}};
  for (auto& s : mha_shapes(d, dff)) mha_in.push_back(s);
  comp("mha", [&](const Vars& v) { return mha(v[0], v[1], mha_from(v, 2, heads)); }, mha_in, 20);

  std::mt19937_64 anchors_rng(21);
  const Tensor anchors = testutil::random_cloud(7, anchors_rng);
  std::vector<Shape> lau_in{{7, d}};
  for (auto& s : mha_shapes(d, dff)) lau_in.push_back(s);
  comp("lau_forward", [&](const Vars& v) {
    return lau_forward(TokenSet{v[0], anchors}, mha_from(v, 1, heads), AttentionConfig{heads, d, dff, 3, false}).feats;
  }, lau_in, 22);

  std::vector<Shape> gau_in{{4, d}, {11, d}};
  for (auto& s : mha_shapes(d, dff)) gau_in.push_back(s);
  comp("gau_forward", [&](const Vars& v) {
    return gau_forward(TokenSet{v[0], anchors}, v[1], mha_from(v, 2, heads), AttentionConfig{heads, d, dff, 3, false}).feats;
  }, gau_in, 23);

  std::mt19937_64 pts_rng(24);
  const Tensor pts = testutil::random_cloud(40, pts_rng);
  ScaleConfig sc;
  sc.ks = {2, 4, 8};
  sc.centroid_count = 10;
  sc.out_dim_per_scale = 3;
  sc.radius = 0.6;
  comp("tokenize", [&](const Vars& v) { return tokenize_points(pts, v[0], sc, Linear{v[1], v[2]}, 3).feats; },
       {{40, 2}, {5, 3}, {3}}, 25);

  comp("loss_cls", [](const Vars& v) { return loss_cls(ad::softmax(v[0], 1), 2); }, {{1, 5}}, 26);
  const std::vector<std::int32_t> labels{0, 3, 1, 1, 2, 0};
  comp("loss_seg", [&](const Vars& v) { return loss_seg(ad::softmax(v[0], 1), labels); }, {{6, 4}}, 27);

  Outcome o;
  double wp = 0.0, wc = 0.0;
  for (const auto& c : cases) {
    const bool ok = c.err < (c.primitive ? prim_tol : comp_tol);
    if (!ok) {
      o.pass = false;
      o.detail += c.name + " rel " + fmt("%.3g", c.err) + "; ";
    }
    (c.primitive ? wp : wc) = std::max(c.primitive ? wp : wc, c.err);
  }
  o.detail += std::to_string(cases.size()) + " ops x 20 instances, worst primitive rel " + fmt("%.2e", wp) +
              " (< 1e-6), worst composite rel " + fmt("%.2e", wc) + " (< 1e-4)";
  return o;
}

Outcome spatial_suite() {
  std::mt19937_64 rng(100);
  std::size_t mismatches = 0, queries = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng() % 500;
    const Tensor pts = trial % 4 == 0 ? testutil::dyadic_cloud(n, rng) : testutil::random_cloud(n, rng);
    const std::size_t m = 1 + rng() % std::min<std::size_t>(n, 200);
    const std::uint64_t seed = rng();

    std::mt19937_64 dir_rng(seed);
    std::uniform_int_distribution<int> comp(-1000, 1000);
    double dir[3];
    do {
      for (double& c : dir) c = comp(dir_rng);
    } while (dir[0] == 0 && dir[1] == 0 && dir[2] == 0);
    const std::size_t start = testutil::start_oracle(pts, dir);
    if (fps(pts, m, seed) != testutil::fps_oracle(pts, m, start)) ++mismatches;

    const std::size_t nq = 1 + rng() % 16;
    std::vector<std::size_t> picks = shuffled_iota(n, rng);
    picks.resize(std::min(nq, n));
    const Tensor q = trial % 2 ? testutil::random_cloud(nq, rng) : take_rows(pts, picks);
    const std::size_t k = 1 + rng() % n;
    const double r = 0.05 + 0.05 * (rng() % 30);
    const auto kn = knn(q, pts, k);
    const auto ball = ball_query_sorted(pts, q, r, k);
    for (std::size_t i = 0; i < q.rows(); ++i, ++queries) {
      if (kn.neighbor_ids[i] != testutil::knn_oracle(pts, q, i, k)) ++mismatches;
      if (ball.neighbor_ids[i] != testutil::ball_oracle(pts, q, i, r, k)) ++mismatches;
    }
  }
  return {mismatches == 0, "500 clouds (N <= 500), " + std::to_string(queries) +
                               " knn/ball queries, index mismatches " + std::to_string(mismatches)};
}

Outcome mst_suite() {
  std::mt19937_64 rng(200);
  std::size_t mismatches = 0, out_of_radius = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 40 + rng() % 461;
    const Tensor pts = testutil::random_cloud(n, rng);
    const bool with_feats = trial % 2;
    const Tensor feats = testutil::random_tensor({n, 3}, rng);
    ScaleConfig cfg;
    const std::size_t k1 = 1 + rng() % 4, k2 = k1 + 1 + rng() % 6, k3 = k2 + 1 + rng() % 20;
    cfg.ks = {k1, k2, k3};
    cfg.centroid_count = 1 + rng() % std::min<std::size_t>(n, 64);
    cfg.out_dim_per_scale = 4;
    const Linear delta{ad::constant(testutil::random_tensor({with_feats ? 6u : 3u, 4}, rng)),
                       ad::constant(testutil::random_tensor({4}, rng))};
    const std::uint64_t seed = rng();

    // Tight radius: the largest K_N-th neighbor distance over the chosen centroids.
    const auto centroids = fps(pts, cfg.centroid_count, seed);
    double r2 = 0.0;
    for (auto c : centroids) {
      const auto nb = testutil::knn_oracle(pts, pts, c, k3);
      r2 = std::max(r2, testutil::sqdist(pts, nb.back(), pts, c));
    }
    cfg.radius = trial % 3 == 0 ? 10.0 : std::sqrt(r2) * (1.0 + 1e-9);

    TokenizeTrace trace;
    const TokenSet t = tokenize_points(pts, with_feats ? ad::constant(feats) : nullptr, cfg, delta, seed, &trace);
    for (std::size_t i = 0; i < trace.ball.size(); ++i)
      if (trace.ball.neighbor_ids[i].size() < k3) ++out_of_radius;
    const Tensor expect = testutil::tokenize_oracle(pts, with_feats ? &feats : nullptr, trace.centroid_ids,
                                                    cfg.ks, delta.weight->value, delta.bias->value);
    if (trace.centroid_ids != centroids || !(t.feats->value == expect)) ++mismatches;
  }
  return {mismatches == 0 && out_of_radius == 0,
          "100 clouds, mismatching clouds " + std::to_string(mismatches) +
              ", centroids with fewer than K_N in radius " + std::to_string(out_of_radius)};
}

Outcome symmetry_suite() {
  std::mt19937_64 rng(300);
  const ModelConfig cfg = ModelConfig::defaults(Task::Classification, 3);
  const ParamStore params = init_params(cfg);
  int cls_fail = 0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 160 + rng() % 300;
    PointCloud c;
    c.coords = testutil::random_cloud(n, rng);
    const auto perm = shuffled_iota(n, rng);
    PointCloud p;
    p.coords = take_rows(c.coords, perm);
    ad::NoGradGuard g;
    if (!(classify(c, cfg, Binding(params)).probs->value == classify(p, cfg, Binding(params)).probs->value)) ++cls_fail;
  }

  const ScaleConfig sc = cfg.stages[0].scales;
  double trans_err = 0.0;
  int trans_fail = 0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 128 + rng() % 300;
    const Tensor pts = testutil::random_cloud(n, rng);
    Tensor moved = pts;
    const Tensor shift = testutil::random_tensor({3}, rng, -5.0, 5.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < 3; ++c) moved.at(i, c) += shift[c];
    const Linear delta{ad::constant(testutil::random_tensor({3, sc.out_dim_per_scale}, rng)),
                       ad::constant(testutil::random_tensor({sc.out_dim_per_scale}, rng))};
    TokenizeTrace ta, tb;
    const Tensor a = tokenize_points(pts, nullptr, sc, delta, t, &ta).feats->value;
    const Tensor b = tokenize_points(moved, nullptr, sc, delta, t, &tb).feats->value;
    if (ta.centroid_ids != tb.centroid_ids || ta.neighbors != tb.neighbors) ++trans_fail;
    else trans_err = std::max(trans_err, max_abs_diff(a, b));
  }

  const std::size_t d = 16, dff = 24, heads = 4;
  auto random_mha = [&] {
    Vars v;
    for (auto& s : mha_shapes(d, dff)) v.push_back(ad::constant(testutil::random_tensor(s, rng, -0.5, 0.5)));
    return mha_from(v, 0, heads);
  };
  double gau_err = 0.0, lau_err = 0.0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t m = 4 + rng() % 20, p = 20 + rng() % 200;
    const MhaParams mp = random_mha();
    const TokenSet tokens{ad::constant(testutil::random_tensor({m, d}, rng)), testutil::random_cloud(m, rng)};
    const Tensor embed = testutil::random_tensor({p, d}, rng);
    const AttentionConfig ac{heads, d, dff, std::min<std::size_t>(m, 1 + rng() % 8), t % 2 == 1};
    const Tensor g0 = gau_forward(tokens, ad::constant(embed), mp, ac).feats->value;
    const Tensor g1 = gau_forward(tokens, ad::constant(take_rows(embed, shuffled_iota(p, rng))), mp, ac).feats->value;
    gau_err = std::max(gau_err, max_abs_diff(g0, g1));

    const auto perm = shuffled_iota(m, rng);
    const TokenSet permuted{ad::constant(take_rows(tokens.feats->value, perm)), take_rows(tokens.anchors, perm)};
    const Tensor l0 = lau_forward(tokens, mp, ac).feats->value;
    const Tensor l1 = lau_forward(permuted, mp, ac).feats->value;
    lau_err = std::max(lau_err, max_abs_diff(take_rows(l0, perm), l1));
  }

  const double tol = 1e-12;
  Outcome o;
  o.pass = cls_fail == 0 && trans_fail == 0 && trans_err < tol && gau_err < tol && lau_err < tol;
  o.detail = "50 inputs each: classify permutation mismatches " + std::to_string(cls_fail) +
             " (bit-exact); translation neighbor mismatches " + std::to_string(trans_fail) +
             ", token max err " + fmt("%.2e", trans_err) + "; gau point-permutation max err " +
             fmt("%.2e", gau_err) + "; lau token-permutation max err " + fmt("%.2e", lau_err) + " (< 1e-12)";
  return o;
}

Outcome idw_suite() {
  std::mt19937_64 rng(400);
  double worst_sum = 0.0;
  bool onehot = true;
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> dist(1 + rng() % 16);
    for (double& x : dist) x = std::exp(std::uniform_real_distribution<double>(-6, 3)(rng));
    const auto w = idw_weights(dist);
    worst_sum = std::max(worst_sum, std::abs(std::accumulate(w.begin(), w.end(), 0.0) - 1.0));
    const std::size_t hit = rng() % dist.size();
    dist[hit] = 0.0;
    const auto h = idw_weights(dist);
    std::vector<double> expect(dist.size(), 0.0);
    expect[hit] = 1.0;
    if (h != expect) onehot = false;
  }
  const auto two = idw_weights(std::vector<double>{1.0, 2.0});
  const double two_err = std::max(std::abs(two[0] - 0.8), std::abs(two[1] - 0.2));
  return {worst_sum <= 1e-12 && onehot && two_err <= 1e-15,
          "sum error " + fmt("%.2e", worst_sum) + " (<= 1e-12), one-hot at coincidence " +
              (onehot ? "yes" : "no") + ", (1, 2) -> [" + fmt("%.17g", two[0]) + ", " + fmt("%.17g", two[1]) + "]"};
}

Outcome learnability_suite(std::size_t threads) {
  Outcome o;
  {
    const Dataset ds = gen_synthetic(SyntheticKind::Cls3, 300, 1024, 11);
    const ModelConfig cfg = ModelConfig::defaults(Task::Classification, 3);
    TrainConfig tc;
    tc.threads = threads;
    tc.stop_at_train_acc = 0.98;
    const TrainResult r = train(ds, cfg, tc);
    const double tr = evaluate(ds, ds.train, cfg, r.best, threads).report.oa;
    const double te = evaluate(ds, ds.test, cfg, r.best, threads).report.oa;
    o.pass = tr >= 0.95 && te >= 0.90 && r.history.size() <= 200;
    o.detail = "cls3 300x1024: " + std::to_string(r.history.size()) + " epochs, train oa " + fmt("%.4f", tr) +
               " (>= 0.95), held-out oa " + fmt("%.4f", te) + " (>= 0.90)";
  }
  {
    const Dataset ds = gen_synthetic(SyntheticKind::Seg2, 100, 512, 13);
    const ModelConfig cfg = ModelConfig::defaults(Task::Segmentation, 2);
    TrainConfig tc;
    tc.threads = threads;
    tc.stop_at_train_acc = 0.97;
    const TrainResult r = train(ds, cfg, tc);
    const double tr = evaluate(ds, ds.train, cfg, r.best, threads).report.oa;
    o.pass = o.pass && tr >= 0.95;
    o.detail += "; seg2 100x512: " + std::to_string(r.history.size()) + " epochs, per-point train oa " +
                fmt("%.4f", tr) + " (>= 0.95)";
  }
  return o;
}

Outcome efficiency_suite() {
  const ModelConfig cfg = ModelConfig::defaults(Task::Classification, 3);
  const std::vector<std::size_t> points{1024, 2048, 4096, 8192};
  const BenchResult b = bench_scaling(cfg, points, 5);
  std::string rows;
  for (const auto& r : b.rows) rows += std::to_string(r.size) + ":" + fmt("%.1f", r.median_ms) + "ms ";
  return {b.slope <= 1.15, rows + "slope " + fmt("%.3f", b.slope) + " (<= 1.15)"};
}

struct CliRun {
  int code = -1;
  std::string out;
};

CliRun cli(const std::string& args) {
  const std::string cmd = std::string(CLOUDATTN_CLI_PATH) + " " + args + " 2>&1";
  CliRun r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof(buf), p)) > 0) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

double kv_value(const std::string& text, const std::string& key) {
  const auto at = text.find("\n" + key + "=");
  const auto pos = at == std::string::npos ? (text.rfind(key + "=", 0) == 0 ? 0 : std::string::npos) : at + 1;
  if (pos == std::string::npos) return std::nan("");
  return std::strtod(text.c_str() + pos + key.size() + 1, nullptr);
}

struct Scratch {
  fs::path dir;
  explicit Scratch(const std::string& tag) {
    dir = fs::temp_directory_path() / ("cloudattn_accept_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
  std::string operator()(const std::string& name) const { return (dir / name).string(); }
};

Outcome ablation_suite(std::size_t threads) {
  Scratch s("ablation");
  const std::string th = " --threads " + std::to_string(threads);
  if (cli("gen --kind seg2 --n 100 --points 512 --seed 13 --out " + s("data")).code != 0)
    return {false, "gen failed"};
  struct Variant {
    const char* name;
    const char* flags;
    double miou = std::nan("");
  };
  std::vector<Variant> variants{{"full", ""}, {"lau-only", " --set use_gau=0"}, {"gau-only", " --set use_lau=0"}};
  for (auto& v : variants) {
    const std::string ckpt = s(std::string(v.name) + ".ckpt");
    const CliRun t = cli("train --epochs 60 --data " + s("data") + " --out " + ckpt + th + v.flags);
    if (t.code != 0) return {false, std::string(v.name) + " training exited " + std::to_string(t.code) + ": " + t.out};
    const CliRun e = cli("eval --split test --data " + s("data") + " --ckpt " + ckpt + th);
    if (e.code != 0) return {false, std::string(v.name) + " eval exited " + std::to_string(e.code)};
    v.miou = kv_value(e.out, "ins_miou");
  }
  Outcome o;
  o.pass = variants[0].miou >= variants[1].miou && variants[0].miou >= variants[2].miou;
  o.detail = "held-out ins mIoU after 60 epochs:";
  for (const auto& v : variants) o.detail += std::string(" ") + v.name + " " + fmt("%.4f", v.miou);
  return o;
}

Outcome format_suite() {
  Scratch s("format");
  std::mt19937_64 rng(900);
  int roundtrip_fail = 0, ckpt_fail = 0, position_fail = 0;
  for (int t = 0; t < 100; ++t) {
    PointCloud c;
    const std::size_t n = 1 + rng() % 300, f = rng() % 4;
    c.coords = testutil::random_tensor({n, 3}, rng, -1e3, 1e3);
    for (double& v : c.coords.values()) v = static_cast<float>(v);
    if (f) {
      c.feats = testutil::random_tensor({n, f}, rng, -1e6, 1e6);
      for (double& v : c.feats->values()) v = static_cast<float>(v) * (t % 5 == 0 ? 1e-30f : 1.0f);
    }
    if (t % 2) for (std::size_t i = 0; i < n; ++i) c.labels.push_back(static_cast<std::int32_t>(rng() % 1000));
    for (const char* name : {"c.txt", "c.pcat"}) {
      save_cloud(s(name), c);
      const PointCloud back = load_cloud(s(name));
      const bool same = back.coords == c.coords && back.labels == c.labels &&
                        back.feats.has_value() == c.feats.has_value() && (!c.feats || *back.feats == *c.feats);
      if (!same) ++roundtrip_fail;
    }

    // Corrupt one value: text reports the line, binary the byte offset of the bad value.
    const std::size_t row = rng() % n, col = rng() % (3 + f);
    std::istringstream lines(format_cloud_text(c));
    std::string text, line;
    for (std::size_t i = 0; std::getline(lines, line); ++i) {
      if (i == row + 1) line = "x" + line;
      text += line + "\n";
    }
    try {
      parse_cloud_text(text);
      ++position_fail;
    } catch (const FormatError& e) {
      if (e.unit() != FormatError::Unit::Line || e.position() != row + 2) ++position_fail;
    }
    auto bytes = format_cloud_binary(c);
    const std::size_t off = 17 + 4 * (row * (3 + f) + col);
    const float bad = std::numeric_limits<float>::quiet_NaN();
    std::memcpy(bytes.data() + off, &bad, 4);
    try {
      parse_cloud_binary(bytes);
      ++position_fail;
    } catch (const FormatError& e) {
      if (e.unit() != FormatError::Unit::Byte || e.position() != off) ++position_fail;
    }
    bytes.resize(rng() % bytes.size());
    try {
      parse_cloud_binary(bytes);
      ++position_fail;
    } catch (const FormatError& e) {
      if (e.unit() != FormatError::Unit::Byte || e.position() > bytes.size()) ++position_fail;
    }
  }

  for (int t = 0; t < 6; ++t) {
    const Task task = t % 2 ? Task::Segmentation : Task::Classification;
    ModelConfig cfg = ModelConfig::defaults(task, 2 + t);
    cfg.seed = 40 + t;
    const ParamStore params = init_params(cfg);
    save_checkpoint(s("m.ckpt"), cfg, params);
    const Checkpoint back = load_checkpoint(s("m.ckpt"));
    PointCloud c;
    c.coords = testutil::random_cloud(300, rng);
    ad::NoGradGuard g;
    const Tensor a = task == Task::Segmentation ? segment(c, cfg, Binding(params)).probs->value
                                                : classify(c, cfg, Binding(params)).probs->value;
    const Tensor b = task == Task::Segmentation ? segment(c, back.config, Binding(back.params)).probs->value
                                                : classify(c, back.config, Binding(back.params)).probs->value;
    if (!(a == b)) ++ckpt_fail;
  }
  return {roundtrip_fail == 0 && ckpt_fail == 0 && position_fail == 0,
          "100 clouds x 2 formats, round-trip mismatches " + std::to_string(roundtrip_fail) +
              "; 6 checkpoints, forward mismatches " + std::to_string(ckpt_fail) +
              "; 300 malformed inputs, mispositioned errors " + std::to_string(position_fail)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::size_t threads = std::max(1u, std::thread::hardware_concurrency());
  struct Criterion {
    int id;
    const char* name;
    double limit_s;  // 0: no limit
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> all{
      {1, "gradient suite", 120, gradient_suite},
      {2, "spatial oracle suite", 60, spatial_suite},
      {3, "multi-scale tokenizer equivalence", 60, mst_suite},
      {4, "symmetry suite", 0, symmetry_suite},
      {5, "idw weights", 0, idw_suite},
      {6, "learnability", 1800, [&] { return learnability_suite(threads); }},
      {7, "encoder scaling in P", 300, efficiency_suite},
      {8, "ablation through the cli", 0, [&] { return ablation_suite(threads); }},
      {9, "format suite", 0, format_suite},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : all) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::string timing = fmt("%.1f s", secs);
    if (c.limit_s > 0) {
      timing += fmt(" (< %.0f s)", c.limit_s);
      if (secs >= c.limit_s) o.pass = false;
    }
    if (!o.pass) ++failed;
    std::printf("%s [%d] %s: %s; %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), timing.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
