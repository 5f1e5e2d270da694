#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cloudattn/config.h"
#include "cloudattn/dataset.h"
#include "cloudattn/metrics.h"
#include "cloudattn/network.h"
#include "cloudattn/params.h"

namespace cloudattn {

enum class OptimizerKind { Adam, Lamb };
enum class Schedule { Cosine, Constant };

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 16;
  double base_lr = 1e-3;
  OptimizerKind optimizer = OptimizerKind::Lamb;
  Schedule schedule = Schedule::Cosine;
  double weight_decay = 0.0;
  std::uint64_t seed = 1;
  std::string checkpoint_path;
  /// Worker threads for per-sample forward/backward; results do not depend on it.
  std::size_t threads = 1;
  /// Stop once an epoch's running train accuracy reaches this value (0 disables).
  double stop_at_train_acc = 0.0;

  static TrainConfig from_kv(const KeyValues& kv);
  void validate() const;
};

/// base_lr * 0.5 * (1 + cos(pi * step / total_steps)), no restarts.
double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  /// Lamb trust ratio is clamped to [0, trust_clip].
  double trust_clip = 10.0;
  bool round_to_f32 = true;
};

struct OptimizerState {
  std::size_t step = 0;
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
};

/// One bias-corrected Adam or Lamb step over every parameter in `params`. A non-finite
/// gradient raises NumericError naming the parameter, before anything is modified.
void optimizer_step(ParamStore& params, const GradMap& grads, OptimizerState& state,
                    const OptimizerConfig& cfg);

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double oa = 0.0;
  double macc = 0.0;

  /// "epoch=3 lr=... loss=... oa=... macc=..."
  std::string to_line() const;
};

struct TrainResult {
  ParamStore best;
  ParamStore last;
  std::size_t best_epoch = 0;
  std::vector<EpochRecord> history;
};

/// Mini-batch training on ds.train. Batches are shuffled under cfg.seed; per-sample gradients
/// are summed in sample order, so results are identical for any thread count.
TrainResult train(const Dataset& ds, const ModelConfig& model_cfg, const TrainConfig& cfg,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

struct Evaluation {
  MetricsReport report;
  double loss = 0.0;
  /// per sample (classification) or per point, concatenated (segmentation)
  std::vector<std::int32_t> predictions;
};

Evaluation evaluate(const Dataset& ds, std::span<const std::size_t> indices,
                    const ModelConfig& cfg, const ParamStore& params, std::size_t threads = 1);

/// Argmax class per point for a segmentation model.
std::vector<std::int32_t> predict_points(const PointCloud& cloud, const ModelConfig& cfg,
                                         const ParamStore& params);
std::int32_t predict_class(const PointCloud& cloud, const ModelConfig& cfg,
                           const ParamStore& params);

struct BenchRow {
  std::size_t size = 0;
  double median_ms = 0.0;
  std::vector<double> samples_ms;
};

struct BenchResult {
  std::string variable;  // "points" or "tokens"
  std::vector<BenchRow> rows;
  double slope = 0.0;

  std::string to_text() const;
};

double median(std::vector<double> values);
/// Least-squares slope of log(y) against log(x).
double loglog_slope(std::span<const double> xs, std::span<const double> ys);

/// Encoder forward wall time at each raw point count with the config's fixed token counts.
BenchResult bench_scaling(const ModelConfig& cfg, std::span<const std::size_t> point_counts,
                          std::size_t repeats, std::uint64_t seed = 1);
/// lau_forward wall time at each token count with fixed k (first stage's lau_k).
BenchResult bench_lau_scaling(const ModelConfig& cfg, std::span<const std::size_t> token_counts,
                              std::size_t repeats, std::uint64_t seed = 1);

}  // namespace cloudattn
