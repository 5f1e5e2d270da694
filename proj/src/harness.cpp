#include "cloudattn/harness.h"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>
#include <thread>

#include "cloudattn/checkpoint.h"

namespace cloudattn {

namespace {

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adam") return OptimizerKind::Adam;
  if (s == "lamb") return OptimizerKind::Lamb;
  throw std::invalid_argument("unknown optimizer '" + s + "' (expected adam or lamb)");
}

Schedule parse_schedule(const std::string& s) {
  if (s == "cosine") return Schedule::Cosine;
  if (s == "constant") return Schedule::Constant;
  throw std::invalid_argument("unknown schedule '" + s + "' (expected cosine or constant)");
}

// Runs fn(i) for i in [0, n) on up to `threads` workers. The first exception is rethrown.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mu);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

std::int32_t argmax_row(const Tensor& t, std::size_t r) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < t.cols(); ++c)
    if (t.at(r, c) > t.at(r, best)) best = c;
  return static_cast<std::int32_t>(best);
}

struct SampleResult {
  double loss = 0.0;
  std::vector<std::int32_t> preds;
  GradMap grads;
};

SampleResult run_sample(const Dataset& ds, std::size_t idx, const ModelConfig& cfg,
                        const ParamStore& params, bool with_grad) {
  const PointCloud& cloud = ds.samples[idx];
  SampleResult out;
  std::optional<ad::NoGradGuard> guard;
  if (!with_grad) guard.emplace();
  Binding bind(params, with_grad);
  ad::Var probs, loss;
  if (cfg.task == Task::Classification) {
    probs = classify(cloud, cfg, bind).probs;
    loss = loss_cls(probs, static_cast<std::size_t>(ds.sample_labels[idx]));
  } else {
    probs = segment(cloud, cfg, bind).probs;
    loss = loss_seg(probs, cloud.labels);
  }
  out.loss = loss->value[0];
  if (!std::isfinite(out.loss)) {
    throw NumericError("loss is not finite on sample " + std::to_string(idx));
  }
  for (std::size_t r = 0; r < probs->value.rows(); ++r) out.preds.push_back(argmax_row(probs->value, r));
  if (with_grad) {
    ad::backward(loss);
    out.grads = bind.gradients();
  }
  return out;
}

std::vector<std::int32_t> truth_for(const Dataset& ds, std::size_t idx) {
  if (ds.task == Task::Classification) return {ds.sample_labels[idx]};
  return ds.samples[idx].labels;
}

double l2(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

TrainConfig TrainConfig::from_kv(const KeyValues& kv) {
  TrainConfig c;
  c.epochs = kv.get_size("epochs", c.epochs);
  c.batch_size = kv.get_size("batch_size", c.batch_size);
  c.base_lr = kv.get_double("base_lr", c.base_lr);
  c.optimizer = parse_optimizer(kv.get("optimizer", c.optimizer == OptimizerKind::Adam ? "adam" : "lamb"));
  c.schedule = parse_schedule(kv.get("schedule", c.schedule == Schedule::Cosine ? "cosine" : "constant"));
  c.weight_decay = kv.get_double("weight_decay", c.weight_decay);
  c.seed = kv.get_size("seed", c.seed);
  c.checkpoint_path = kv.get("checkpoint", c.checkpoint_path);
  c.threads = kv.get_size("threads", c.threads);
  c.stop_at_train_acc = kv.get_double("stop_at_train_acc", c.stop_at_train_acc);
  c.validate();
  return c;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (!(base_lr > 0.0)) throw std::invalid_argument("base_lr must be > 0");
  if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be >= 0");
  if (threads < 1) throw std::invalid_argument("threads must be >= 1");
}

double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr) {
  if (total_steps == 0) throw std::invalid_argument("cosine_lr: total_steps must be > 0");
  const double t = static_cast<double>(std::min(step, total_steps)) / static_cast<double>(total_steps);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

void optimizer_step(ParamStore& params, const GradMap& grads, OptimizerState& state,
                    const OptimizerConfig& cfg) {
  for (const auto& name : params.names()) {
    auto it = grads.find(name);
    if (it == grads.end()) throw std::invalid_argument("optimizer: no gradient for parameter '" + name + "'");
    if (it->second.shape() != params.get(name).shape()) {
      throw DimensionError("optimizer: gradient for '" + name + "' has shape " +
                           shape_str(it->second.shape()) + ", parameter has " +
                           shape_str(params.get(name).shape()));
    }
    if (!it->second.all_finite()) {
      throw NumericError("non-finite gradient in parameter '" + name + "'");
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (const auto& name : params.names()) {
    Tensor& w = params.get(name);
    const Tensor& g = grads.at(name);
    auto [mit, fresh] = state.m.try_emplace(name, Tensor(w.shape(), 0.0));
    auto [vit, fresh_v] = state.v.try_emplace(name, Tensor(w.shape(), 0.0));
    (void)fresh;
    (void)fresh_v;
    Tensor& m = mit->second;
    Tensor& v = vit->second;

    std::vector<double> update(w.numel());
    for (std::size_t i = 0; i < w.numel(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      update[i] = (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps) + cfg.weight_decay * w[i];
    }
    double ratio = 1.0;
    if (cfg.kind == OptimizerKind::Lamb) {
      const double wn = l2(w.values());
      const double un = l2(update);
      // Zero-norm tensors (fresh biases, zero updates) fall back to the plain step.
      if (wn > 0.0 && un > 0.0) ratio = std::clamp(wn / un, 0.0, cfg.trust_clip);
    }
    for (std::size_t i = 0; i < w.numel(); ++i) w[i] -= cfg.lr * ratio * update[i];
    if (cfg.round_to_f32)
      for (double& x : w.values()) x = static_cast<double>(static_cast<float>(x));
  }
}

std::string EpochRecord::to_line() const {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "epoch=%zu lr=%.6g loss=%.6f oa=%.4f macc=%.4f", epoch, lr, loss,
                oa, macc);
  return buf;
}

TrainResult train(const Dataset& ds, const ModelConfig& model_cfg, const TrainConfig& cfg,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  cfg.validate();
  model_cfg.validate();
  ds.validate();
  if (ds.task != model_cfg.task) throw std::invalid_argument("dataset task does not match model task");
  if (ds.num_classes() != model_cfg.num_classes) {
    throw std::invalid_argument("dataset has " + std::to_string(ds.num_classes()) +
                                " classes, model expects " + std::to_string(model_cfg.num_classes));
  }
  if (ds.train.empty()) throw std::invalid_argument("dataset has no training samples");

  TrainResult result;
  ParamStore params = init_params(model_cfg);
  OptimizerState state;
  OptimizerConfig opt;
  opt.kind = cfg.optimizer;
  opt.weight_decay = cfg.weight_decay;

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order = ds.train;
  const std::size_t batches = (order.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = batches * cfg.epochs;
  std::size_t step = 0;
  double best_oa = -1.0, best_loss = 0.0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::int32_t> preds, truth;
    double loss_sum = 0.0;
    double lr_used = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t begin = b * cfg.batch_size;
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      std::vector<SampleResult> results(end - begin);
      parallel_for(results.size(), cfg.threads, [&](std::size_t i) {
        results[i] = run_sample(ds, order[begin + i], model_cfg, params, true);
      });

      GradMap total;
      for (std::size_t i = 0; i < results.size(); ++i) {
        auto& r = results[i];
        loss_sum += r.loss;
        const auto t = truth_for(ds, order[begin + i]);
        preds.insert(preds.end(), r.preds.begin(), r.preds.end());
        truth.insert(truth.end(), t.begin(), t.end());
        for (auto& [name, g] : r.grads) {
          auto [it, inserted] = total.try_emplace(name, std::move(g));
          if (!inserted)
            for (std::size_t j = 0; j < g.numel(); ++j) it->second[j] += g[j];
        }
      }
      const double inv = 1.0 / static_cast<double>(results.size());
      for (auto& [name, g] : total)
        for (double& x : g.values()) x *= inv;

      opt.lr = cfg.schedule == Schedule::Cosine ? cosine_lr(step, total_steps, cfg.base_lr) : cfg.base_lr;
      lr_used = opt.lr;
      optimizer_step(params, total, state, opt);
      ++step;
    }

    const MetricsReport m = compute_metrics(preds, truth, model_cfg.num_classes);
    EpochRecord rec{epoch, lr_used, loss_sum / static_cast<double>(order.size()), m.oa, m.macc};
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (rec.oa > best_oa || (rec.oa == best_oa && rec.loss < best_loss)) {
      best_oa = rec.oa;
      best_loss = rec.loss;
      result.best = params;
      result.best_epoch = epoch;
    }
    if (cfg.stop_at_train_acc > 0.0 && rec.oa >= cfg.stop_at_train_acc) break;
  }
  result.last = params;
  if (!cfg.checkpoint_path.empty()) save_checkpoint(cfg.checkpoint_path, model_cfg, result.best);
  return result;
}

Evaluation evaluate(const Dataset& ds, std::span<const std::size_t> indices, const ModelConfig& cfg,
                    const ParamStore& params, std::size_t threads) {
  if (indices.empty()) throw std::invalid_argument("evaluate: no samples selected");
  if (ds.task != cfg.task) throw std::invalid_argument("dataset task does not match model task");
  std::vector<SampleResult> results(indices.size());
  parallel_for(indices.size(), threads, [&](std::size_t i) {
    results[i] = run_sample(ds, indices[i], cfg, params, false);
  });
  Evaluation ev;
  std::vector<std::int32_t> truth;
  std::vector<ShapeGroup> groups;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto t = truth_for(ds, indices[i]);
    if (cfg.task == Task::Segmentation) {
      groups.push_back(ShapeGroup{ev.predictions.size(), ev.predictions.size() + t.size(),
                                  ds.sample_labels[indices[i]], {}});
    }
    ev.loss += results[i].loss;
    ev.predictions.insert(ev.predictions.end(), results[i].preds.begin(), results[i].preds.end());
    truth.insert(truth.end(), t.begin(), t.end());
  }
  ev.loss /= static_cast<double>(results.size());
  ev.report = compute_metrics(ev.predictions, truth, cfg.num_classes, groups);
  return ev;
}

std::vector<std::int32_t> predict_points(const PointCloud& cloud, const ModelConfig& cfg,
                                         const ParamStore& params) {
  ad::NoGradGuard guard;
  const Binding bind(params, false);
  const Tensor probs = segment(cloud, cfg, bind).probs->value;
  std::vector<std::int32_t> out(probs.rows());
  for (std::size_t r = 0; r < probs.rows(); ++r) out[r] = argmax_row(probs, r);
  return out;
}

std::int32_t predict_class(const PointCloud& cloud, const ModelConfig& cfg,
                           const ParamStore& params) {
  ad::NoGradGuard guard;
  const Binding bind(params, false);
  return argmax_row(classify(cloud, cfg, bind).probs->value, 0);
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of an empty list");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double loglog_slope(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size() || xs.size() < 2) {
    throw std::invalid_argument("loglog_slope needs at least two (x, y) pairs");
  }
  const double n = static_cast<double>(xs.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!(xs[i] > 0.0) || !(ys[i] > 0.0)) throw std::invalid_argument("loglog_slope needs positive values");
    const double lx = std::log(xs[i]), ly = std::log(ys[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double denom = n * sxx - sx * sx;
  if (denom == 0.0) throw std::invalid_argument("loglog_slope needs at least two distinct x values");
  return (n * sxy - sx * sy) / denom;
}

std::string BenchResult::to_text() const {
  std::string out = variable + " median_ms samples\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%zu %.4f %zu\n", r.size, r.median_ms, r.samples_ms.size());
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "slope=%.4f\n", slope);
  return out + buf;
}

namespace {

template <class Fn>
BenchRow time_repeats(std::size_t size, std::size_t repeats, Fn&& fn) {
  if (repeats < 1) throw std::invalid_argument("bench: repeats must be >= 1");
  BenchRow row;
  row.size = size;
  fn();  // warm-up
  for (std::size_t r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    row.samples_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  row.median_ms = median(row.samples_ms);
  return row;
}

void fit(BenchResult& res) {
  if (res.rows.size() < 2) return;
  std::vector<double> xs, ys;
  for (const auto& r : res.rows) {
    xs.push_back(static_cast<double>(r.size));
    ys.push_back(r.median_ms);
  }
  res.slope = loglog_slope(xs, ys);
}

}  // namespace

BenchResult bench_scaling(const ModelConfig& cfg, std::span<const std::size_t> point_counts,
                          std::size_t repeats, std::uint64_t seed) {
  cfg.validate();
  const ParamStore params = init_params(cfg);
  BenchResult res;
  res.variable = "points";
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t p : point_counts) {
    PointCloud cloud;
    cloud.coords = Tensor::matrix(p, 3);
    for (std::size_t i = 0; i < p; ++i) {
      double v[3] = {gauss(rng), gauss(rng), gauss(rng)};
      const double n = std::max(1e-12, std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]));
      for (int j = 0; j < 3; ++j) cloud.coords.at(i, j) = v[j] / n;
    }
    if (cfg.point_feat_dim > 0) {
      Tensor f = Tensor::matrix(p, cfg.point_feat_dim);
      for (double& x : f.values()) x = gauss(rng);
      cloud.feats = std::move(f);
    }
    ad::NoGradGuard guard;
    const Binding bind(params, false);
    res.rows.push_back(time_repeats(p, repeats, [&] { (void)encode(cloud, cfg, bind); }));
  }
  fit(res);
  return res;
}

BenchResult bench_lau_scaling(const ModelConfig& cfg, std::span<const std::size_t> token_counts,
                              std::size_t repeats, std::uint64_t seed) {
  cfg.validate();
  if (!cfg.use_lau) throw std::invalid_argument("bench_lau_scaling needs use_lau=1");
  const ParamStore params = init_params(cfg);
  ad::NoGradGuard guard;
  const Binding bind(params, false);
  const MhaParams mp = bind_mha(bind, "s0.lau0", cfg.heads);
  const AttentionConfig att = cfg.attention(0);
  BenchResult res;
  res.variable = "tokens";
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (std::size_t m : token_counts) {
    if (m < att.k_neighbors) throw std::invalid_argument("bench: token count below lau_k");
    TokenSet tokens;
    tokens.anchors = Tensor::matrix(m, 3);
    for (double& x : tokens.anchors.values()) x = unit(rng);
    Tensor f = Tensor::matrix(m, cfg.d_model);
    for (double& x : f.values()) x = unit(rng);
    tokens.feats = ad::constant(std::move(f));
    res.rows.push_back(time_repeats(m, repeats, [&] { (void)lau_forward(tokens, mp, att); }));
  }
  fit(res);
  return res;
}

}  // namespace cloudattn
